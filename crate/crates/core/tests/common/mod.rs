//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use sdfgan::autodiff::{Tape, Tensor, Var};
use sdfgan::train::{DiscriminatorKind, TrainConfig};

pub const STEP: f64 = 1e-5;

pub type Build = dyn Fn(&mut Tape, &[Var]) -> Var + Send + Sync;

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Values bounded away from 0 by `gap`, for switch-free ReLU checks.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Scalar `sum(weights * f(inputs))` on a fresh tape.
fn scalar_of(f: &Build, inputs: &[Tensor], weights: &Tensor) -> f64 {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.var(x.clone())).collect();
    let y = f(&mut t, &vars);
    t.value(y).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn output_shape(f: &Build, inputs: &[Tensor]) -> Vec<usize> {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.var(x.clone())).collect();
    let y = f(&mut t, &vars);
    t.shape(y).to_vec()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

fn numeric_grad(f: &Build, inputs: &[Tensor], weights: &Tensor) -> Vec<Vec<f64>> {
    (0..inputs.len())
        .map(|k| {
            (0..inputs[k].len())
                .map(|i| {
                    let mut plus = inputs.to_vec();
                    plus[k].data_mut()[i] += STEP;
                    let mut minus = inputs.to_vec();
                    minus[k].data_mut()[i] -= STEP;
                    (scalar_of(f, &plus, weights) - scalar_of(f, &minus, weights)) / (2.0 * STEP)
                })
                .collect()
        })
        .collect()
}

/// Largest relative error between tape and central-difference gradients over the inputs.
pub fn first_order_error(f: &Build, inputs: &[Tensor], rng: &mut impl Rng) -> f64 {
    let weights = random_tensor(rng, &output_shape(f, inputs));
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.var(x.clone())).collect();
    let y = f(&mut t, &vars);
    let w = t.constant(weights.clone());
    let yw = t.mul(y, w).unwrap();
    let s = t.sum(yw).unwrap();
    let grads = t.grad(s, &vars, false).unwrap();
    let numeric = numeric_grad(f, inputs, &weights);
    grads
        .iter()
        .zip(&numeric)
        .map(|(g, n)| rel_err(t.value(*g).data(), n))
        .fold(0.0, f64::max)
}

/// Same check on `sum_k <v_k, grad_k sum(w * f)>`, exercising recorded gradients.
pub fn second_order_error(f: Arc<Build>, inputs: &[Tensor], rng: &mut impl Rng) -> f64 {
    let weights = random_tensor(rng, &output_shape(f.as_ref(), inputs));
    let dirs: Vec<Tensor> = inputs.iter().map(|x| random_tensor(rng, x.shape())).collect();
    let h: Arc<Build> = Arc::new(move |t: &mut Tape, vars: &[Var]| {
        let y = f(t, vars);
        let w = t.constant(weights.clone());
        let yw = t.mul(y, w).unwrap();
        let s = t.sum(yw).unwrap();
        let gs = t.grad(s, vars, true).unwrap();
        let mut acc = None;
        for (g, d) in gs.iter().zip(&dirs) {
            let dv = t.constant(d.clone());
            let p = t.mul(*g, dv).unwrap();
            let ps = t.sum(p).unwrap();
            acc = Some(match acc {
                Some(a) => t.add(a, ps).unwrap(),
                None => ps,
            });
        }
        acc.unwrap()
    });
    first_order_error(h.as_ref(), inputs, rng)
}

pub fn check_first_order(name: &str, f: &Build, inputs: &[Tensor], tol: f64, rng: &mut impl Rng) {
    let err = first_order_error(f, inputs, rng);
    assert!(err < tol, "{name}: relative error {err:e}");
}

pub fn check(name: &str, f: Arc<Build>, inputs: Vec<Tensor>, rng: &mut impl Rng) {
    check_first_order(name, f.as_ref(), &inputs, 1e-4, rng);
    let err = second_order_error(f, &inputs, rng);
    assert!(err < 1e-4, "{name} (second order): relative error {err:e}");
}

/// Desk-scale training setup used by the smoke runs.
pub const SMOKE_CONFIG: &str = "\
max_steps = 2000
batch_size = 8
latent_dim = 32
hidden_dim = 64
layers = 8
reinjection_layer = 4
point_shared = 16,32,64,128
point_dense = 64,32
points_per_shape = 128
learning_rate = 1e-3
seed = 1
";

pub fn smoke_config(kind: DiscriminatorKind, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::from_kv(SMOKE_CONFIG).unwrap();
    c.discriminator = kind;
    c.max_steps = Some(steps);
    c
}
