//! Latent recovery for a fixed generator.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use super::{Generator, LatentCode, Result};
use crate::autodiff::{Tape, Tensor};
use crate::mesh2sdf::SdfSampleSet;

/// Residuals this small count as fitted and contribute no L1 subgradient.
const DEAD_ZONE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Learning rate at the last step, as a fraction of the first.
    pub final_lr_fraction: f64,
    /// Samples per step; the whole target when larger than it.
    pub batch: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            learning_rate: 0.02,
            final_lr_fraction: 0.01,
            batch: 1024,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub latent: LatentCode,
    /// Mean absolute error per step, measured before that step's update.
    pub losses: Vec<f64>,
    /// Set when a non-finite loss stopped the fit; `latent` is the last finite one.
    pub aborted: bool,
}

/// Adam on `z` alone, minimizing the mean absolute error against `target`.
pub fn fit_latent(
    generator: &Generator,
    target: &SdfSampleSet,
    init: LatentCode,
    cfg: FitConfig,
    rng: &mut impl Rng,
) -> Result<FitOutcome> {
    generator.check_latent(&init)?;
    if target.is_empty() {
        return Err(super::GeneratorError::EmptyBatch);
    }
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let d = init.len();
    let mut z = init.values().to_vec();
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut losses = Vec::with_capacity(cfg.steps);
    let decay = if cfg.steps > 1 {
        cfg.final_lr_fraction.ln() / (cfg.steps - 1) as f64
    } else {
        0.0
    };
    for step in 0..cfg.steps {
        let idx: Vec<usize> = if target.len() > cfg.batch {
            let mut s = sample(rng, target.len(), cfg.batch).into_vec();
            s.sort_unstable();
            s
        } else {
            (0..target.len()).collect()
        };
        let n = idx.len();
        let mut tape = Tape::new();
        let bound = generator.params().bind(&mut tape, false);
        let zv = tape.var(Tensor::row(z.clone()));
        let p = tape.constant(Tensor::matrix(n, 3, idx.iter().flat_map(|&i| target.points[i]).collect()));
        let owner: Arc<[usize]> = vec![0; n].into();
        let g = generator.forward_tape(&mut tape, &bound, zv, p, owner)?;
        let s = tape.constant(Tensor::column(idx.iter().map(|&i| target.values[i]).collect()));
        let r = tape.sub(g, s)?;
        let sign: Arc<[f64]> = tape
            .value(r)
            .data()
            .iter()
            .map(|&x| if x > DEAD_ZONE { 1.0 } else if x < -DEAD_ZONE { -1.0 } else { 0.0 })
            .collect::<Vec<_>>()
            .into();
        let abs = tape.mask(r, sign)?;
        let loss = tape.mean(abs)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Ok(FitOutcome {
                latent: LatentCode::new(z),
                losses,
                aborted: true,
            });
        }
        losses.push(lv);
        let grad = tape.grad(loss, &[zv], false)?[0];
        let gd = tape.value(grad).data();
        if gd.iter().any(|x| !x.is_finite()) {
            return Ok(FitOutcome {
                latent: LatentCode::new(z),
                losses,
                aborted: true,
            });
        }
        let lr = cfg.learning_rate * (decay * step as f64).exp();
        let t = (step + 1) as i32;
        for k in 0..d {
            m[k] = b1 * m[k] + (1.0 - b1) * gd[k];
            v[k] = b2 * v[k] + (1.0 - b2) * gd[k] * gd[k];
            let mh = m[k] / (1.0 - b1.powi(t));
            let vh = v[k] / (1.0 - b2.powi(t));
            z[k] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(FitOutcome {
        latent: LatentCode::new(z),
        losses,
        aborted: false,
    })
}

/// Mean absolute error of `g(z, .)` over the whole target.
pub fn fit_loss(generator: &Generator, target: &SdfSampleSet, z: &LatentCode) -> Result<f64> {
    let g = generator.forward_batch(z, &target.points)?;
    Ok(g.iter().zip(&target.values).map(|(a, b)| (a - b).abs()).sum::<f64>() / g.len() as f64)
}
