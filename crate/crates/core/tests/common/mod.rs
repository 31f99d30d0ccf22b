#![allow(dead_code)]

use lctlab::film_net::{Architecture, FilmMlp};
use lctlab::losses::{value_and_grad, Class, LambdaVec, Logits, LossSpec};
use lctlab::ndmath::{Matrix, Rng};

/// 3 → 4 → 3 trunk, 2 → 4 → 6 FiLM generator, 3 → 2 head: 81 parameters.
pub fn tiny_arch() -> Architecture {
    Architecture {
        input_dim: 3,
        hidden: vec![4],
        channels: 3,
        film_hidden: 4,
        lambda_dim: 2,
    }
}

/// A network with every parameter random, so the FiLM block is far from the
/// identity.
pub fn random_net(arch: Architecture, seed: u64) -> FilmMlp {
    let mut rng = Rng::new(seed);
    let n = arch.param_count();
    FilmMlp::from_params(arch, (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
}

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> (Matrix, Vec<Class>) {
    let mut rng = Rng::new(seed);
    let x = Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap();
    let y = (0..rows)
        .map(|i| if i % 3 == 0 { Class::Pos } else { Class::Neg })
        .collect();
    (x, y)
}

/// Mean batch loss at `theta`.
pub fn batch_loss(
    net: &FilmMlp,
    theta: &[f64],
    x: &Matrix,
    y: &[Class],
    spec: &LossSpec,
    lambda: &LambdaVec,
    film: bool,
) -> f64 {
    let probe = FilmMlp::from_params(net.arch().clone(), theta.to_vec()).unwrap();
    let z = probe.logits(x, lambda, film).unwrap();
    z.iter()
        .zip(y)
        .map(|(z, &label)| spec.value(label, *z, lambda).unwrap())
        .sum::<f64>()
        / y.len() as f64
}

/// Analytic gradient of the mean batch loss.
pub fn batch_grad(
    net: &FilmMlp,
    x: &Matrix,
    y: &[Class],
    spec: &LossSpec,
    lambda: &LambdaVec,
    film: bool,
) -> Vec<f64> {
    let params = spec.params(lambda).unwrap();
    let (z, tape) = net.forward(x, lambda, film).unwrap();
    let n = y.len() as f64;
    let mut dz = Vec::new();
    for (r, &label) in y.iter().enumerate() {
        let (_, (gm, gp)) =
            value_and_grad(label, Logits::new(z.get(r, 0), z.get(r, 1)), &params).unwrap();
        dz.push(gm / n);
        dz.push(gp / n);
    }
    net.backward(tape, &Matrix::new(y.len(), 2, dz).unwrap())
        .unwrap()
}

/// Central differences with step `h`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with magnitudes below `floor` compared absolutely.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
