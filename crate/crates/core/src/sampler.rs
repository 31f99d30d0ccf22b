//! The linear pdf `L(a, b, h_b)` and per-mini-batch λ sampling.
//!
//! The user picks the support `[a, b]` and the density `h_b` at `b`; the
//! density at `a` follows from unit area, `h_a = 2/(b - a) - h_b`. With
//! `t = x - a` and `k = (h_b - h_a)/(b - a)` the CDF is
//! `F(x) = h_a t + k t²/2`, and sampling inverts it.
//!
//! `a == b` is accepted as a point mass, which is how a fixed λ is expressed
//! inside a [`LambdaDistribution`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::losses::LambdaVec;
use crate::ndmath::Rng;

/// Below this gap between end heights the CDF is treated as linear.
const LINEAR_BRANCH_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPdf {
    a: f64,
    b: f64,
    h_a: f64,
    h_b: f64,
}

/// Builds `L(a, b, h_b)`. Requires `b >= a` and `0 <= h_b <= 2/(b - a)`.
pub fn make_linear_pdf(a: f64, b: f64, h_b: f64) -> Result<LinearPdf> {
    LinearPdf::new(a, b, h_b)
}

impl LinearPdf {
    pub fn new(a: f64, b: f64, h_b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && h_b.is_finite()) {
            return Err(Error::Config(format!(
                "L({a},{b},{h_b}): non-finite parameter"
            )));
        }
        if b < a {
            return Err(Error::Config(format!("L({a},{b},{h_b}): need b >= a")));
        }
        if a == b {
            return Ok(Self::point(a));
        }
        let max_h = 2.0 / (b - a);
        if !(0.0..=max_h * (1.0 + 1e-12)).contains(&h_b) {
            return Err(Error::Config(format!(
                "L({a},{b},{h_b}): h_b must lie in [0, {max_h}] for unit area on [{a}, {b}]"
            )));
        }
        let h_b = h_b.min(max_h);
        let h_a = (max_h - h_b).max(0.0);
        Ok(Self { a, b, h_a, h_b })
    }

    /// Point mass at `v`.
    pub fn point(v: f64) -> Self {
        Self {
            a: v,
            b: v,
            h_a: 0.0,
            h_b: 0.0,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn h_a(&self) -> f64 {
        self.h_a
    }

    pub fn h_b(&self) -> f64 {
        self.h_b
    }

    pub fn is_point(&self) -> bool {
        self.a == self.b
    }

    /// Density at `x`; zero outside `[a, b]`. A point mass has no density and
    /// reports 0 everywhere.
    pub fn pdf(&self, x: f64) -> f64 {
        if self.is_point() || x < self.a || x > self.b {
            return 0.0;
        }
        self.h_a + (self.h_b - self.h_a) * (x - self.a) / (self.b - self.a)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.a {
            return 0.0;
        }
        if x >= self.b {
            return 1.0;
        }
        let t = x - self.a;
        let k = (self.h_b - self.h_a) / (self.b - self.a);
        (self.h_a * t + 0.5 * k * t * t).clamp(0.0, 1.0)
    }

    /// Solves `F(x) = u` for `x` in `[a, b]`.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Input(format!(
                "inverse_cdf needs u in [0, 1], got {u}"
            )));
        }
        if self.is_point() || u == 0.0 {
            return Ok(self.a);
        }
        if u == 1.0 {
            return Ok(self.b);
        }
        let width = self.b - self.a;
        let t = if (self.h_a - self.h_b).abs() < LINEAR_BRANCH_EPS {
            u * width
        } else {
            // Root of (k/2) t² + h_a t - u = 0 written as 2u / (h_a + √disc),
            // which has no cancellation when k → 0. At u = 1 the discriminant
            // is exactly h_b², so it only goes negative by rounding.
            let k = (self.h_b - self.h_a) / width;
            let disc = (self.h_a * self.h_a + 2.0 * k * u).max(0.0);
            2.0 * u / (self.h_a + disc.sqrt())
        };
        Ok((self.a + t.clamp(0.0, width)).min(self.b))
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u = rng.uniform01();
        // u is in [0, 1) so this cannot fail.
        self.inverse_cdf(u).unwrap_or(self.a)
    }
}

/// `inverse_cdf` as a free function.
pub fn inverse_cdf(p: &LinearPdf, u: f64) -> Result<f64> {
    p.inverse_cdf(u)
}

impl fmt::Display for LinearPdf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_point() {
            write!(f, "{}", self.a)
        } else {
            write!(f, "L({},{},{})", self.a, self.b, self.h_b)
        }
    }
}

impl FromStr for LinearPdf {
    type Err = Error;

    /// Accepts `"L(a,b,h_b)"` (whitespace tolerated) or a bare number for a
    /// point mass.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_num = |t: &str| -> Result<f64> {
            let t = t.trim();
            let v: f64 = t
                .parse()
                .map_err(|_| Error::Config(format!("bad number {t:?} in distribution {s:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!(
                    "non-finite number in distribution {s:?}"
                )))
            }
        };
        let Some(rest) = s.strip_prefix('L').or_else(|| s.strip_prefix('l')) else {
            return parse_num(s).map(LinearPdf::point);
        };
        let inner = rest
            .trim_start()
            .strip_prefix('(')
            .and_then(|r| r.trim_end().strip_suffix(')'))
            .ok_or_else(|| Error::Config(format!("expected L(a,b,h_b), got {s:?}")))?;
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "expected three arguments in {s:?}, got {}",
                parts.len()
            )));
        }
        LinearPdf::new(
            parse_num(parts[0])?,
            parse_num(parts[1])?,
            parse_num(parts[2])?,
        )
    }
}

impl Serialize for LinearPdf {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_point() {
            serializer.serialize_f64(self.a)
        } else {
            serializer.collect_str(self)
        }
    }
}

impl<'de> Deserialize<'de> for LinearPdf {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(v) if v.is_finite() => Ok(LinearPdf::point(v)),
            Raw::Num(v) => Err(serde::de::Error::custom(format!("non-finite point {v}"))),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One independent [`LinearPdf`] per coordinate of λ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaDistribution(pub Vec<LinearPdf>);

impl LambdaDistribution {
    pub fn new(coords: Vec<LinearPdf>) -> Self {
        Self(coords)
    }

    pub fn point(lambda: &LambdaVec) -> Self {
        Self(lambda.0.iter().map(|&v| LinearPdf::point(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// True when every coordinate is a point mass, i.e. λ is constant.
    pub fn is_degenerate(&self) -> bool {
        self.0.iter().all(LinearPdf::is_point)
    }

    /// The constant λ of a degenerate distribution.
    pub fn as_point(&self) -> Option<LambdaVec> {
        self.is_degenerate()
            .then(|| LambdaVec(self.0.iter().map(LinearPdf::a).collect()))
    }

    pub fn coords(&self) -> &[LinearPdf] {
        &self.0
    }
}

impl fmt::Display for LambdaDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Draws one λ: one uniform per coordinate, pushed through its inverse CDF.
/// Point-mass coordinates still consume their uniform so the stream position
/// does not depend on which coordinates are fixed.
pub fn sample_lambda(dist: &LambdaDistribution, rng: &mut Rng) -> LambdaVec {
    LambdaVec(dist.0.iter().map(|c| c.sample(rng)).collect())
}
