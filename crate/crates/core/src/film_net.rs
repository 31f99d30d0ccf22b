//! The predictor `f(x, θ, λ)`: a ReLU MLP whose last hidden layer (width `C`)
//! is modulated channel-wise by one FiLM block, `f̃ = σ ∗ f + μ`, followed by
//! a linear head producing the logit pair `(z_-, z_+)`.
//!
//! The FiLM generator is `λ → film_hidden (ReLU) → 2C`; the first `C` outputs
//! are `σ`, the last `C` are `μ`. Its final layer starts at zero weights with
//! bias `(1, …, 1, 0, …, 0)`, so a freshly initialized network computes the
//! same function for every λ as the network with FiLM switched off.
//!
//! All parameters live in one flat vector `θ`, laid out layer by layer:
//! trunk layers, FiLM generator layers, head. Each dense layer stores its
//! weight as a row-major `fan_in × fan_out` block followed by `fan_out` biases.
//! The parameter count is
//!
//! ```text
//! Σ_trunk (in·out + out)  +  (dλ·H + H + H·2C + 2C)  +  (2C + 2)
//! ```
//!
//! with `H = film_hidden`.

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{Class, LambdaVec, Logits};
use crate::ndmath::{gemm_a_bt_acc, gemm_acc, gemm_at_b_acc, Matrix, Rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    /// Widths of the trunk's hidden layers before the FiLM-modulated layer.
    pub hidden: Vec<usize>,
    /// Width `C` of the modulated layer.
    pub channels: usize,
    pub film_hidden: usize,
    pub lambda_dim: usize,
}

impl Architecture {
    /// input → 32 → 32 → 16, FiLM generator with 128 hidden units.
    pub fn desk_default(input_dim: usize, lambda_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![32, 32],
            channels: 16,
            film_hidden: 128,
            lambda_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.channels,
            self.film_hidden,
            self.lambda_dim,
        ];
        if dims.contains(&0) || self.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "architecture has a zero-width layer: {self:?}"
            )));
        }
        Ok(())
    }

    fn trunk_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.channels);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        Layout::new(self).total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Dense {
    offset: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias(&self) -> Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }

    fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    trunk: Vec<Dense>,
    film_in: Dense,
    film_out: Dense,
    head: Dense,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut offset = 0;
        let mut dense = |fan_in, fan_out| {
            let d = Dense {
                offset,
                fan_in,
                fan_out,
            };
            offset += d.len();
            d
        };
        let trunk = arch
            .trunk_dims()
            .into_iter()
            .map(|(i, o)| dense(i, o))
            .collect();
        let film_in = dense(arch.lambda_dim, arch.film_hidden);
        let film_out = dense(arch.film_hidden, 2 * arch.channels);
        let head = dense(arch.channels, 2);
        Self {
            trunk,
            film_in,
            film_out,
            head,
            total: offset,
        }
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug)]
pub struct FilmMlp {
    arch: Architecture,
    layout: Layout,
    params: Vec<f64>,
    // (instance id, parameter generation) stamps every tape so backward can
    // refuse tapes from another network or from before a parameter update.
    id: u64,
    generation: u64,
}

impl Clone for FilmMlp {
    fn clone(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.clone(),
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        }
    }
}

impl PartialEq for FilmMlp {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

/// The `(σ, μ)` pair emitted by the FiLM generator.
#[derive(Clone, Debug, PartialEq)]
pub struct FilmOutput {
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Intermediates cached by [`FilmMlp::forward`] for one mini-batch.
#[derive(Debug)]
pub struct ForwardTape {
    net_id: u64,
    generation: u64,
    film_enabled: bool,
    rows: usize,
    input: Vec<f64>,
    /// Post-ReLU activations of each trunk layer; the last one is `f`.
    trunk_acts: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    film_hidden: Vec<f64>,
    film: FilmOutput,
    /// `f̃ = σ ∗ f + μ` (equal to `f` with FiLM off).
    modulated: Vec<f64>,
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `x(n×in) · W + b` for one dense layer.
fn dense_forward(params: &[f64], d: &Dense, x: &[f64], rows: usize) -> Vec<f64> {
    let b = &params[d.bias()];
    let mut out = Vec::with_capacity(rows * d.fan_out);
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    gemm_acc(x, &params[d.weights()], &mut out, rows, d.fan_in, d.fan_out);
    out
}

impl FilmMlp {
    /// He-uniform trunk and head, identity-emitting FiLM generator.
    pub fn new(arch: Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let he = |params: &mut [f64], d: &Dense, rng: &mut Rng| {
            let bound = (6.0 / d.fan_in as f64).sqrt();
            for w in &mut params[d.weights()] {
                *w = rng.uniform(-bound, bound);
            }
        };
        for d in &layout.trunk {
            he(&mut params, d, rng);
        }
        he(&mut params, &layout.film_in, rng);
        he(&mut params, &layout.head, rng);
        let c = arch.channels;
        let bias = layout.film_out.bias();
        params[bias.start..bias.start + c].fill(1.0);
        Ok(Self {
            arch,
            layout,
            params,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Input("non-finite parameter".into()));
        }
        Ok(Self {
            arch,
            layout,
            params,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            generation: 0,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to θ. Invalidates every outstanding tape.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index range of the FiLM generator's parameters inside θ.
    pub fn film_range(&self) -> Range<usize> {
        self.layout.film_in.offset..self.layout.film_out.offset + self.layout.film_out.len()
    }

    /// `(σ, μ)` for a given λ.
    pub fn film_output(&self, lambda: &LambdaVec) -> Result<FilmOutput> {
        self.check_lambda(lambda)?;
        Ok(self.film_forward(lambda.as_slice()).1)
    }

    fn check_lambda(&self, lambda: &LambdaVec) -> Result<()> {
        if lambda.dim() != self.arch.lambda_dim {
            return Err(Error::Shape(format!(
                "lambda has {} coordinates, network expects {}",
                lambda.dim(),
                self.arch.lambda_dim
            )));
        }
        Ok(())
    }

    fn film_forward(&self, lambda: &[f64]) -> (Vec<f64>, FilmOutput) {
        let mut hidden = dense_forward(&self.params, &self.layout.film_in, lambda, 1);
        relu_inplace(&mut hidden);
        let out = dense_forward(&self.params, &self.layout.film_out, &hidden, 1);
        let c = self.arch.channels;
        let film = FilmOutput {
            sigma: out[..c].to_vec(),
            mu: out[c..].to_vec(),
        };
        (hidden, film)
    }

    /// Logits for every row of `x`. With `film_enabled` off the FiLM block is
    /// bypassed (σ = 1, μ = 0) and λ is not read beyond its dimension check.
    pub fn forward(
        &self,
        x: &Matrix,
        lambda: &LambdaVec,
        film_enabled: bool,
    ) -> Result<(Matrix, ForwardTape)> {
        if x.cols() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, network expects {}",
                x.cols(),
                self.arch.input_dim
            )));
        }
        self.check_lambda(lambda)?;
        let rows = x.rows();
        let c = self.arch.channels;

        let mut trunk_acts: Vec<Vec<f64>> = Vec::with_capacity(self.layout.trunk.len());
        for (i, d) in self.layout.trunk.iter().enumerate() {
            let input: &[f64] = if i == 0 {
                x.as_slice()
            } else {
                &trunk_acts[i - 1]
            };
            let mut a = dense_forward(&self.params, d, input, rows);
            relu_inplace(&mut a);
            trunk_acts.push(a);
        }
        let features = trunk_acts.last().expect("trunk has at least one layer");

        let (film_hidden, film) = if film_enabled {
            self.film_forward(lambda.as_slice())
        } else {
            (
                Vec::new(),
                FilmOutput {
                    sigma: vec![1.0; c],
                    mu: vec![0.0; c],
                },
            )
        };
        let modulated = if film_enabled {
            let mut m = features.clone();
            for row in m.chunks_exact_mut(c) {
                for ((v, s), u) in row.iter_mut().zip(&film.sigma).zip(&film.mu) {
                    *v = s * *v + u;
                }
            }
            m
        } else {
            features.clone()
        };

        let logits = dense_forward(&self.params, &self.layout.head, &modulated, rows);
        let logits = Matrix::new(rows, 2, logits)
            .map_err(|e| Error::Input(format!("forward pass produced {e}")))?;
        let tape = ForwardTape {
            net_id: self.id,
            generation: self.generation,
            film_enabled,
            rows,
            input: x.as_slice().to_vec(),
            trunk_acts,
            lambda: lambda.0.clone(),
            film_hidden,
            film,
            modulated,
        };
        Ok((logits, tape))
    }

    /// Logits only, for inference.
    pub fn logits(
        &self,
        x: &Matrix,
        lambda: &LambdaVec,
        film_enabled: bool,
    ) -> Result<Vec<Logits>> {
        let (z, _) = self.forward(x, lambda, film_enabled)?;
        Ok((0..z.rows())
            .map(|r| Logits::new(z.get(r, 0), z.get(r, 1)))
            .collect())
    }

    /// Gradient of `Σ_rows ⟨dL/dz_row, z_row⟩` with respect to θ. Pass the
    /// per-row loss gradients already divided by the batch size to get the
    /// gradient of the mean loss.
    pub fn backward(&self, tape: ForwardTape, dlogits: &Matrix) -> Result<Vec<f64>> {
        if tape.net_id != self.id || tape.generation != self.generation {
            return Err(Error::Internal(
                "forward tape does not belong to the current network parameters".into(),
            ));
        }
        if dlogits.shape() != (tape.rows, 2) {
            return Err(Error::Internal(format!(
                "logit gradient is {}x{}, tape holds {} rows",
                dlogits.rows(),
                dlogits.cols(),
                tape.rows
            )));
        }
        let rows = tape.rows;
        let c = self.arch.channels;
        let p = &self.params;
        let l = &self.layout;
        let mut grad = vec![0.0; p.len()];
        let dz = dlogits.as_slice();

        // Head.
        gemm_at_b_acc(&tape.modulated, dz, &mut grad[l.head.weights()], rows, c, 2);
        accumulate_bias(&mut grad[l.head.bias()], dz, 2);
        let mut d_mod = vec![0.0; rows * c];
        gemm_a_bt_acc(dz, &p[l.head.weights()], &mut d_mod, rows, 2, c);

        let features = tape
            .trunk_acts
            .last()
            .expect("trunk has at least one layer");
        let mut d_act = if tape.film_enabled {
            let mut d_out = vec![0.0; 2 * c];
            let (d_sigma, d_mu) = d_out.split_at_mut(c);
            for (dm_row, f_row) in d_mod.chunks_exact(c).zip(features.chunks_exact(c)) {
                for k in 0..c {
                    d_sigma[k] += dm_row[k] * f_row[k];
                    d_mu[k] += dm_row[k];
                }
            }
            let fh = self.arch.film_hidden;
            gemm_at_b_acc(
                &tape.film_hidden,
                &d_out,
                &mut grad[l.film_out.weights()],
                1,
                fh,
                2 * c,
            );
            accumulate_bias(&mut grad[l.film_out.bias()], &d_out, 2 * c);
            let mut d_hidden = vec![0.0; fh];
            gemm_a_bt_acc(
                &d_out,
                &p[l.film_out.weights()],
                &mut d_hidden,
                1,
                2 * c,
                fh,
            );
            for (d, h) in d_hidden.iter_mut().zip(&tape.film_hidden) {
                if *h <= 0.0 {
                    *d = 0.0;
                }
            }
            let dl = self.arch.lambda_dim;
            gemm_at_b_acc(
                &tape.lambda,
                &d_hidden,
                &mut grad[l.film_in.weights()],
                1,
                dl,
                fh,
            );
            accumulate_bias(&mut grad[l.film_in.bias()], &d_hidden, fh);

            for row in d_mod.chunks_exact_mut(c) {
                for (v, s) in row.iter_mut().zip(&tape.film.sigma) {
                    *v *= s;
                }
            }
            d_mod
        } else {
            d_mod
        };

        // Trunk, last layer first. d_act is the gradient w.r.t. the layer's
        // post-ReLU output on entry.
        for (idx, d) in l.trunk.iter().enumerate().rev() {
            let act = &tape.trunk_acts[idx];
            for (g, a) in d_act.iter_mut().zip(act) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let prev: &[f64] = if idx == 0 {
                &tape.input
            } else {
                &tape.trunk_acts[idx - 1]
            };
            gemm_at_b_acc(
                prev,
                &d_act,
                &mut grad[d.weights()],
                rows,
                d.fan_in,
                d.fan_out,
            );
            accumulate_bias(&mut grad[d.bias()], &d_act, d.fan_out);
            if idx > 0 {
                let mut d_prev = vec![0.0; rows * d.fan_in];
                gemm_a_bt_acc(
                    &d_act,
                    &p[d.weights()],
                    &mut d_prev,
                    rows,
                    d.fan_out,
                    d.fan_in,
                );
                d_act = d_prev;
            }
        }
        Ok(grad)
    }
}

fn accumulate_bias(out: &mut [f64], d: &[f64], width: usize) {
    for row in d.chunks_exact(width) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

/// Thresholded decision rule: `+` iff `z_+ > z_- + t`.
pub fn predict(z: Logits, t: f64) -> Class {
    if z.z_plus > z.z_minus + t {
        Class::Pos
    } else {
        Class::Neg
    }
}
