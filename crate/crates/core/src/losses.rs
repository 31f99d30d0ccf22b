//! Parameterized loss families for binary classification.
//!
//! Both families act on the logit pair `z = (z_-, z_+)`:
//!
//! - α-balanced focal loss, `-α_y (1 - p_y)^φ log p_y`, with `α_+ = α` and
//!   `α_- = 1 - α`;
//! - vector-scaling (VS) loss, a cross entropy over the affinely transformed
//!   logits `Δ_c z_c + ι_c`. In the binary case it depends on `z` only through
//!   the margin `η = z_+/β^γ - (z_- + τ log β)`:
//!   `ℓ(-) = log(1 + e^η)` and `ℓ(+) = log(1 + e^-η)`.
//!
//! All `log(1 + e^x)` terms go through [`softplus`], which never overflows.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class label. `Neg` is the majority class, `Pos` the minority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    #[serde(rename = "-")]
    Neg,
    #[serde(rename = "+")]
    Pos,
}

impl Class {
    pub fn is_pos(self) -> bool {
        self == Class::Pos
    }

    /// 1.0 for `Pos`, 0.0 for `Neg`.
    pub fn indicator(self) -> f64 {
        if self.is_pos() {
            1.0
        } else {
            0.0
        }
    }
}

/// Unnormalized network outputs for the two classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Logits {
    pub z_minus: f64,
    pub z_plus: f64,
}

impl Logits {
    pub fn new(z_minus: f64, z_plus: f64) -> Self {
        Self { z_minus, z_plus }
    }

    fn check(&self) -> Result<()> {
        if self.z_minus.is_finite() && self.z_plus.is_finite() {
            Ok(())
        } else {
            Err(Error::Input(format!("non-finite logits {self:?}")))
        }
    }

    /// Softmax probability of the positive class, `1 / (1 + e^-(z_+ - z_-))`.
    pub fn p_plus(&self) -> f64 {
        sigmoid(self.z_plus - self.z_minus)
    }

    /// `z_y - z_other`: positive when the correct class wins.
    fn margin(&self, y: Class) -> f64 {
        match y {
            Class::Pos => self.z_plus - self.z_minus,
            Class::Neg => self.z_minus - self.z_plus,
        }
    }
}

/// `log(1 + e^x)` as `max(x, 0) + log1p(e^-|x|)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plain two-class cross entropy `-log p_y`.
pub fn cross_entropy(y: Class, z: Logits) -> f64 {
    softplus(-z.margin(y))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    alpha: f64,
    phi: f64,
}

impl FocalParams {
    pub fn new(alpha: f64, phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!(
                "focal alpha must lie in [0, 1], got {alpha}"
            )));
        }
        if !(phi >= 0.0 && phi.is_finite()) {
            return Err(Error::Config(format!("focal phi must be >= 0, got {phi}")));
        }
        Ok(Self { alpha, phi })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Class weight: `α` for `+`, `1 - α` for `-`.
    pub fn class_weight(&self, y: Class) -> f64 {
        match y {
            Class::Pos => self.alpha,
            Class::Neg => 1.0 - self.alpha,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsParams {
    gamma: f64,
    tau: f64,
    beta: f64,
}

impl VsParams {
    /// `beta` is the training-set imbalance ratio `n_- / n_+`. A balanced set
    /// (`beta == 1`) is accepted; the loss then reduces to cross entropy.
    pub fn new(gamma: f64, tau: f64, beta: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("VS gamma must be >= 0, got {gamma}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("VS tau must be >= 0, got {tau}")));
        }
        if !(beta >= 1.0 && beta.is_finite()) {
            return Err(Error::Config(format!(
                "imbalance ratio beta must be >= 1, got {beta}"
            )));
        }
        Ok(Self { gamma, tau, beta })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `β^-γ`, the multiplicative scale on the minority logit.
    pub fn plus_scale(&self) -> f64 {
        self.beta.powf(-self.gamma)
    }
}

/// The binary VS margin `η = z_+/β^γ - (z_- + τ log β)`.
pub fn eta(z: Logits, p: &VsParams) -> f64 {
    z.z_plus * p.plus_scale() - (z.z_minus + p.tau * p.beta.ln())
}

pub fn focal_loss(y: Class, z: Logits, p: &FocalParams) -> Result<f64> {
    z.check()?;
    let m = z.margin(y);
    let log_p = -softplus(-m);
    let q = sigmoid(-m);
    let w = p.class_weight(y);
    if w == 0.0 {
        return Ok(0.0);
    }
    Ok(-w * q.powf(p.phi) * log_p)
}

/// VS loss evaluated from its general softmax form with
/// `Δ_c = (n_c/n_-)^γ` and `ι_c = τ log(n_c/n)`.
pub fn vs_loss_full(y: Class, z: Logits, p: &VsParams, counts: (u64, u64)) -> Result<f64> {
    z.check()?;
    let (n_minus, n_plus) = counts;
    if n_plus == 0 || n_minus == 0 {
        return Err(Error::Input(format!(
            "VS loss needs both class counts > 0, got n_- = {n_minus}, n_+ = {n_plus}"
        )));
    }
    let (nm, np) = (n_minus as f64, n_plus as f64);
    if (nm - p.beta * np).abs() > 0.5 * p.beta + 1e-9 {
        return Err(Error::Input(format!(
            "counts ({n_minus}, {n_plus}) inconsistent with beta = {}",
            p.beta
        )));
    }
    let n = nm + np;
    let affine = |zc: f64, nc: f64| (nc / nm).powf(p.gamma) * zc + p.tau * (nc / n).ln();
    let a_minus = affine(z.z_minus, nm);
    let a_plus = affine(z.z_plus, np);
    let hi = a_minus.max(a_plus);
    let lse = hi + ((a_minus - hi).exp() + (a_plus - hi).exp()).ln();
    Ok(match y {
        Class::Neg => lse - a_minus,
        Class::Pos => lse - a_plus,
    })
}

pub fn vs_loss_binary(y: Class, z: Logits, p: &VsParams) -> Result<f64> {
    z.check()?;
    let e = eta(z, p);
    Ok(match y {
        Class::Neg => softplus(e),
        Class::Pos => softplus(-e),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Focal,
    Vs,
}

impl LossFamily {
    /// Names of the two λ coordinates: `(α, φ)` or `(γ, τ)`.
    pub fn coord_names(self) -> [&'static str; 2] {
        match self {
            LossFamily::Focal => ["alpha", "phi"],
            LossFamily::Vs => ["gamma", "tau"],
        }
    }
}

impl fmt::Display for LossFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossFamily::Focal => "focal",
            LossFamily::Vs => "vs",
        })
    }
}

impl FromStr for LossFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "focal" => Ok(LossFamily::Focal),
            "vs" => Ok(LossFamily::Vs),
            other => Err(Error::Config(format!("unknown loss family {other:?}"))),
        }
    }
}

/// The conditioning vector λ fed to the loss and, for LCT, to the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LambdaVec(pub Vec<f64>);

impl LambdaVec {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LambdaVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// How λ maps onto the family's two hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaMap {
    /// λ = (α, φ) for focal, λ = (γ, τ) for VS.
    #[default]
    Full,
    /// One-dimensional λ driving coordinate `coord` (0 or 1); the other
    /// hyperparameter is pinned to `fixed`.
    Only { coord: usize, fixed: f64 },
}

impl LambdaMap {
    pub fn dim(&self) -> usize {
        match self {
            LambdaMap::Full => 2,
            LambdaMap::Only { .. } => 1,
        }
    }

    fn expand(&self, lambda: &LambdaVec) -> Result<[f64; 2]> {
        if lambda.dim() != self.dim() {
            return Err(Error::Config(format!(
                "lambda has {} coordinates, loss expects {}",
                lambda.dim(),
                self.dim()
            )));
        }
        match *self {
            LambdaMap::Full => Ok([lambda.0[0], lambda.0[1]]),
            LambdaMap::Only { coord, fixed } => match coord {
                0 => Ok([lambda.0[0], fixed]),
                1 => Ok([fixed, lambda.0[0]]),
                _ => Err(Error::Config(format!(
                    "lambda coordinate {coord} out of range"
                ))),
            },
        }
    }
}

/// A loss family plus everything needed to turn λ into concrete parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub family: LossFamily,
    /// Training-set imbalance ratio, frozen at dataset load. Only VS uses it.
    pub beta: f64,
    #[serde(default)]
    pub map: LambdaMap,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossParams {
    Focal(FocalParams),
    Vs(VsParams),
}

impl LossSpec {
    pub fn new(family: LossFamily, beta: f64) -> Self {
        Self {
            family,
            beta,
            map: LambdaMap::Full,
        }
    }

    pub fn lambda_dim(&self) -> usize {
        self.map.dim()
    }

    pub fn params(&self, lambda: &LambdaVec) -> Result<LossParams> {
        let [a, b] = self.map.expand(lambda)?;
        Ok(match self.family {
            LossFamily::Focal => LossParams::Focal(FocalParams::new(a, b)?),
            LossFamily::Vs => LossParams::Vs(VsParams::new(a, b, self.beta)?),
        })
    }

    pub fn value(&self, y: Class, z: Logits, lambda: &LambdaVec) -> Result<f64> {
        match self.params(lambda)? {
            LossParams::Focal(p) => focal_loss(y, z, &p),
            LossParams::Vs(p) => vs_loss_binary(y, z, &p),
        }
    }
}

/// Loss value and `(dℓ/dz_-, dℓ/dz_+)` for already-resolved parameters.
pub fn value_and_grad(y: Class, z: Logits, params: &LossParams) -> Result<(f64, (f64, f64))> {
    z.check()?;
    match params {
        LossParams::Focal(p) => {
            let m = z.margin(y);
            let w = p.class_weight(y);
            let log_p = -softplus(-m);
            let p_y = sigmoid(m);
            let q = sigmoid(-m);
            let q_phi = q.powf(p.phi);
            let value = if w == 0.0 { 0.0 } else { -w * q_phi * log_p };
            // d/dm of -w q^φ log p, with dq/dm = -p q.
            let d_margin = w * q_phi * (p.phi * p_y * log_p - q);
            let grad = match y {
                Class::Pos => (-d_margin, d_margin),
                Class::Neg => (d_margin, -d_margin),
            };
            Ok((value, grad))
        }
        LossParams::Vs(p) => {
            let e = eta(z, p);
            let (value, d_eta) = match y {
                Class::Neg => (softplus(e), sigmoid(e)),
                Class::Pos => (softplus(-e), -sigmoid(-e)),
            };
            Ok((value, (-d_eta, d_eta * p.plus_scale())))
        }
    }
}

/// Closed-form gradient of the selected loss with respect to both logits.
pub fn loss_grad(spec: &LossSpec, y: Class, z: Logits, lambda: &LambdaVec) -> Result<(f64, f64)> {
    let params = spec.params(lambda)?;
    value_and_grad(y, z, &params).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::Rng;

    const LN3: f64 = 1.098_612_288_668_109_8;

    #[test]
    fn focal_phi_zero_is_weighted_ce() {
        let p = FocalParams::new(0.5, 0.0).unwrap();
        let v = focal_loss(Class::Pos, Logits::new(0.0, 0.0), &p).unwrap();
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.346_574).abs() < 1e-6);
    }

    #[test]
    fn focal_direct_substitution() {
        // p_+ = 0.75; oracle = 0.25 * 0.25^2 * -ln 0.75 evaluated at 30 digits.
        let p = FocalParams::new(0.25, 2.0).unwrap();
        let v = focal_loss(Class::Pos, Logits::new(0.0, LN3), &p).unwrap();
        assert!((v - 0.004_495_032_382_059_077).abs() < 1e-15, "{v}");
    }

    #[test]
    fn focal_zero_weight_class() {
        let p = FocalParams::new(1.0, 2.0).unwrap();
        for z in [
            Logits::new(0.0, 0.0),
            Logits::new(5.0, -3.0),
            Logits::new(-4.0, 9.0),
        ] {
            assert_eq!(focal_loss(Class::Neg, z, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn focal_rejects_bad_inputs() {
        assert!(FocalParams::new(1.5, 0.0).is_err());
        assert!(FocalParams::new(0.5, -1.0).is_err());
        let p = FocalParams::new(0.5, 1.0).unwrap();
        assert!(matches!(
            focal_loss(Class::Pos, Logits::new(f64::NAN, 0.0), &p),
            Err(Error::Input(_))
        ));
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn vs_worked_example_matches_eta_oracle() {
        // Frozen from an independent 30-digit evaluation of log(1 + e^{±η}).
        let p = VsParams::new(0.5, 1.0, 10.0).unwrap();
        let z = Logits::new(1.0, 2.0);
        assert!((eta(z, &p) - (-2.670_129_560_960_369_8)).abs() < 1e-12);
        let neg = vs_loss_binary(Class::Neg, z, &p).unwrap();
        let pos = vs_loss_binary(Class::Pos, z, &p).unwrap();
        assert!((neg - 0.066_951_158_547_563_84).abs() < 1e-12, "{neg}");
        assert!((pos - 2.737_080_719_507_933_7).abs() < 1e-12, "{pos}");
        let full_neg = vs_loss_full(Class::Neg, z, &p, (1000, 100)).unwrap();
        let full_pos = vs_loss_full(Class::Pos, z, &p, (1000, 100)).unwrap();
        assert!((full_neg - neg).abs() < 1e-12);
        assert!((full_pos - pos).abs() < 1e-12);
    }

    #[test]
    fn vs_symmetric_point() {
        let p = VsParams::new(0.7, 0.0, 50.0).unwrap();
        let z = Logits::new(0.0, 0.0);
        for y in [Class::Neg, Class::Pos] {
            assert!((vs_loss_binary(y, z, &p).unwrap() - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn vs_large_tau_asymptotics() {
        let z = Logits::new(0.3, -0.2);
        let mut last_neg = f64::INFINITY;
        for tau in [1.0, 10.0, 100.0, 1000.0] {
            let p = VsParams::new(0.2, tau, 100.0).unwrap();
            let neg = vs_loss_binary(Class::Neg, z, &p).unwrap();
            let pos = vs_loss_binary(Class::Pos, z, &p).unwrap();
            assert!(neg < last_neg);
            last_neg = neg;
            if tau >= 100.0 {
                // softplus(-η) → -η once η is very negative.
                assert!((pos + eta(z, &p)).abs() < 1e-12);
            }
        }
        assert!(last_neg < 1e-300);
    }

    #[test]
    fn vs_full_needs_minority_count() {
        let p = VsParams::new(0.0, 1.0, 10.0).unwrap();
        assert!(matches!(
            vs_loss_full(Class::Pos, Logits::new(0.0, 0.0), &p, (10, 0)),
            Err(Error::Input(_))
        ));
        assert!(vs_loss_full(Class::Pos, Logits::new(0.0, 0.0), &p, (10, 3)).is_err());
    }

    #[test]
    fn softplus_does_not_overflow() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
    }

    #[test]
    fn ce_gradient_at_half() {
        let spec = LossSpec::new(LossFamily::Vs, 10.0);
        let g = loss_grad(
            &spec,
            Class::Pos,
            Logits::new(0.0, 0.0),
            &LambdaVec(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(g, (0.5, -0.5));
    }

    #[test]
    fn focal_gradient_is_half_ce_gradient_at_alpha_half() {
        let focal = LossSpec::new(LossFamily::Focal, 10.0);
        let vs = LossSpec::new(LossFamily::Vs, 10.0);
        let mut rng = Rng::new(17);
        for _ in 0..100 {
            let z = Logits::new(rng.uniform(-6.0, 6.0), rng.uniform(-6.0, 6.0));
            for y in [Class::Neg, Class::Pos] {
                let gf = loss_grad(&focal, y, z, &LambdaVec(vec![0.5, 0.0])).unwrap();
                let gc = loss_grad(&vs, y, z, &LambdaVec(vec![0.0, 0.0])).unwrap();
                assert_eq!(gf.0, 0.5 * gc.0);
                assert_eq!(gf.1, 0.5 * gc.1);
            }
        }
    }

    #[test]
    fn one_dimensional_lambda_map() {
        let spec = LossSpec {
            family: LossFamily::Vs,
            beta: 100.0,
            map: LambdaMap::Only {
                coord: 1,
                fixed: 0.1,
            },
        };
        assert_eq!(spec.lambda_dim(), 1);
        match spec.params(&LambdaVec(vec![2.0])).unwrap() {
            LossParams::Vs(p) => assert_eq!((p.gamma(), p.tau()), (0.1, 2.0)),
            _ => unreachable!(),
        }
        assert!(matches!(
            spec.params(&LambdaVec(vec![2.0, 1.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_family_is_config_error() {
        assert!(matches!(
            "ldam".parse::<LossFamily>(),
            Err(Error::Config(_))
        ));
        assert_eq!("VS".parse::<LossFamily>().unwrap(), LossFamily::Vs);
    }
}
