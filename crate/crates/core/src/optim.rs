//! First-order optimizers over a flat parameter vector.
//!
//! [`Sam`] wraps either inner optimizer: it evaluates the gradient at θ,
//! moves to the worst-case neighbour `θ + ρ g/‖g‖₂`, evaluates the gradient
//! there, and hands that second gradient to the inner optimizer applied at
//! the original θ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `g` in place to global norm `max_norm` if it is larger.
/// Returns the norm before clipping.
pub fn clip_grad(g: &mut [f64], max_norm: f64) -> f64 {
    debug_assert!(max_norm > 0.0);
    let norm = l2_norm(g);
    if norm > max_norm {
        let scale = max_norm / norm;
        for v in g.iter_mut() {
            *v *= scale;
        }
    }
    norm
}

fn check_shapes(theta: &[f64], g: &[f64], buf: usize) -> Result<()> {
    if theta.len() != g.len() || theta.len() != buf {
        return Err(Error::Internal(format!(
            "optimizer shape mismatch: theta {}, grad {}, state {}",
            theta.len(),
            g.len(),
            buf
        )));
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v ← m v + g`, `θ ← θ - lr v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, n_params: usize) -> Self {
        Self {
            lr,
            momentum,
            velocity: vec![0.0; n_params],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        check_shapes(theta, g, self.velocity.len())?;
        for ((t, v), gi) in theta.iter_mut().zip(&mut self.velocity).zip(g) {
            *v = self.momentum * *v + gi;
            *t -= self.lr * *v;
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8, n_params)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64, n_params: usize) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        check_shapes(theta, g, self.m.len())?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(theta, g),
            Optimizer::Adam(o) => o.step(theta, g),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd(o) => o.lr,
            Optimizer::Adam(o) => o.lr,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(o) => o.lr = lr,
            Optimizer::Adam(o) => o.lr = lr,
        }
    }
}

/// Sharpness-aware minimization around an inner optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Sam {
    pub rho: f64,
    pub inner: Optimizer,
}

impl Sam {
    pub fn new(rho: f64, inner: Optimizer) -> Self {
        Self { rho, inner }
    }

    /// One two-phase step. `loss_and_grad` is called at θ and, unless the
    /// first gradient or ρ is zero, at the perturbed point; both calls must see the
    /// same mini-batch and λ. Returns the loss at the unperturbed θ.
    pub fn step<F>(&mut self, theta: &mut [f64], mut loss_and_grad: F) -> Result<f64>
    where
        F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let (loss, g) = loss_and_grad(theta)?;
        let norm = l2_norm(&g);
        // ρ = 0 perturbs by exactly zero, so the second pass would repeat
        // the first.
        if norm == 0.0 || self.rho == 0.0 {
            self.inner.step(theta, &g)?;
            return Ok(loss);
        }
        let scale = self.rho / norm;
        let perturbed: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + scale * gi).collect();
        let (_, g_adv) = loss_and_grad(&perturbed)?;
        self.inner.step(theta, &g_adv)?;
        Ok(loss)
    }
}

/// Serialized optimizer choice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            lr: 0.05,
            momentum: 0.9,
        }
    }
}

impl OptimizerConfig {
    // Negated comparisons so NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => {
                if !(lr > 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Config(format!(
                        "SGD needs lr > 0 and momentum in [0, 1), got lr {lr}, momentum {momentum}"
                    )));
                }
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if !(lr > 0.0 && lr.is_finite())
                    || !(0.0..1.0).contains(&beta1)
                    || !(0.0..1.0).contains(&beta2)
                    || !(eps > 0.0)
                {
                    return Err(Error::Config(format!("invalid Adam settings {self:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn build(&self, n_params: usize) -> Optimizer {
        match *self {
            OptimizerConfig::Sgd { lr, momentum } => {
                Optimizer::Sgd(Sgd::new(lr, momentum, n_params))
            }
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => Optimizer::Adam(Adam::with_betas(lr, beta1, beta2, eps, n_params)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_under_threshold_unchanged() {
        let mut g = vec![0.3, 0.0];
        let n = clip_grad(&mut g, 0.5);
        assert_eq!(g, vec![0.3, 0.0]);
        assert!((n - 0.3).abs() < 1e-15);
    }

    #[test]
    fn clip_rescales_three_four_five() {
        let mut g = vec![3.0, 4.0];
        clip_grad(&mut g, 0.5);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn vanilla_sgd_step() {
        let mut o = Sgd::new(0.1, 0.0, 1);
        let mut theta = vec![1.0];
        o.step(&mut theta, &[2.0]).unwrap();
        assert!((theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_matches_hand_recursion() {
        let (lr, m) = (0.1, 0.9);
        let mut o = Sgd::new(lr, m, 1);
        let mut theta = vec![1.0];
        o.step(&mut theta, &[2.0]).unwrap();
        o.step(&mut theta, &[-1.0]).unwrap();
        // v1 = 2, θ1 = 1 - 0.2 = 0.8; v2 = 0.9·2 - 1 = 0.8, θ2 = 0.8 - 0.08 = 0.72
        assert!((o.velocity()[0] - 0.8).abs() < 1e-15);
        assert!((theta[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_regardless_of_scale() {
        for scale in [1e-3, 1.0, 1e6] {
            let mut o = Adam::new(0.01, 2);
            let mut theta = vec![0.0, 0.0];
            o.step(&mut theta, &[scale, -scale]).unwrap();
            assert!((theta[0] + 0.01).abs() < 1e-6, "{scale}: {theta:?}");
            assert!((theta[1] - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_internal_error() {
        let mut o = Optimizer::Sgd(Sgd::new(0.1, 0.9, 3));
        assert!(matches!(
            o.step(&mut [0.0; 2], &[0.0; 2]),
            Err(Error::Internal(_))
        ));
    }

    fn quadratic(theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((theta[0] * theta[0], vec![2.0 * theta[0]]))
    }

    #[test]
    fn sam_quadratic_two_phase() {
        let mut sam = Sam::new(0.1, Optimizer::Sgd(Sgd::new(0.1, 0.0, 1)));
        let mut theta = vec![1.0];
        let mut seen = Vec::new();
        sam.step(&mut theta, |t| {
            seen.push(t[0]);
            quadratic(t)
        })
        .unwrap();
        assert_eq!(seen.len(), 2);
        assert!((seen[1] - 1.1).abs() < 1e-15);
        assert!((theta[0] - 0.78).abs() < 1e-15, "{}", theta[0]);
    }

    #[test]
    fn sam_zero_gradient_is_stationary() {
        let mut sam = Sam::new(0.1, Optimizer::Sgd(Sgd::new(0.1, 0.0, 1)));
        let mut theta = vec![0.0];
        let mut calls = 0;
        sam.step(&mut theta, |t| {
            calls += 1;
            quadratic(t)
        })
        .unwrap();
        assert_eq!(theta, vec![0.0]);
        assert_eq!(calls, 1);
    }

    #[test]
    fn sam_small_rho_approaches_plain_step() {
        let mut plain = Sgd::new(0.1, 0.0, 1);
        let mut t_plain = vec![1.0];
        plain.step(&mut t_plain, &[2.0]).unwrap();
        let mut sam = Sam::new(1e-9, Optimizer::Sgd(Sgd::new(0.1, 0.0, 1)));
        let mut t_sam = vec![1.0];
        sam.step(&mut t_sam, quadratic).unwrap();
        assert!((t_sam[0] - t_plain[0]).abs() < 1e-9);
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let c: OptimizerConfig = serde_json::from_str(r#"{"kind":"adam","lr":5e-5}"#).unwrap();
        assert_eq!(
            c,
            OptimizerConfig::Adam {
                lr: 5e-5,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8
            }
        );
        assert!(OptimizerConfig::Sgd {
            lr: 0.1,
            momentum: 1.0
        }
        .validate()
        .is_err());
        assert!(OptimizerConfig::Sgd {
            lr: 0.0,
            momentum: 0.9
        }
        .validate()
        .is_err());
    }
}
