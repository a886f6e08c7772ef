//! Critic inputs and the adversarial objectives on a tape.

use std::sync::Arc;

use rand::Rng;

use super::data::RealShape;
use super::{DiscriminatorKind, TrainError};
use crate::autodiff::{Bound, Tape, Tensor, Var};
use crate::critic::{Critic, GrowthStage};
use crate::generator::{
    owners, raster_points, refine_generated_samples, refine_on_tape, stack_latents, Generator, GeneratorField,
    LatentCode, RefinementConfig,
};

/// Added to the squared gradient norm before the square root.
pub const GP_NORM_EPS: f64 = 1e-12;

/// Real and generated critic inputs for one batch of shapes.
#[derive(Clone, Debug)]
pub enum CriticBatch {
    /// `B x R^3` rasters.
    Voxel { r: usize, real: Tensor, fake: Tensor },
    Points { real: PointRows, fake: PointRows },
}

/// `M x 4` rows `(x, y, z, s)` with per-shape segments.
///
/// The first `shared[b]` rows of shape `b` sit at the same positions in the
/// real and generated sets; the rest are refinement points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointRows {
    pub rows: Vec<f64>,
    pub offsets: Vec<usize>,
    pub shared: Vec<usize>,
}

impl PointRows {
    fn new() -> Self {
        Self {
            offsets: vec![0],
            ..Self::default()
        }
    }

    fn push_shape(&mut self, pts: &[[f64; 3]], vals: &[f64], extra_pts: &[[f64; 3]], extra_vals: &[f64]) {
        for (p, s) in pts.iter().zip(vals).chain(extra_pts.iter().zip(extra_vals)) {
            self.rows.extend([p[0], p[1], p[2], *s]);
        }
        self.shared.push(pts.len());
        self.offsets.push(self.offsets.last().copied().unwrap_or(0) + pts.len() + extra_pts.len());
    }

    pub fn shapes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn tensor(&self) -> Tensor {
        Tensor::matrix(self.rows.len() / 4, 4, self.rows.clone())
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[4 * i..4 * i + 4]
    }
}

/// Interpolates shape `b` of `real` and `fake` with weight `eps` on the real side.
///
/// Shared rows blend only the value; refinement rows are paired in order and
/// blended in all four columns. Returns the rows and a gradient mask.
pub fn interpolate_shape(real: &PointRows, fake: &PointRows, b: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (r0, f0) = (real.offsets[b], fake.offsets[b]);
    let n = real.shared[b];
    debug_assert_eq!(n, fake.shared[b]);
    let pairs = (real.offsets[b + 1] - r0 - n).min(fake.offsets[b + 1] - f0 - n);
    let mut rows = Vec::with_capacity(4 * (n + pairs));
    let mut mask = Vec::with_capacity(4 * (n + pairs));
    for i in 0..n + pairs {
        let (a, c) = (real.row(r0 + i), fake.row(f0 + i));
        if i < n {
            rows.extend([a[0], a[1], a[2], eps * a[3] + (1.0 - eps) * c[3]]);
            mask.extend([0.0, 0.0, 0.0, 1.0]);
        } else {
            rows.extend((0..4).map(|k| eps * a[k] + (1.0 - eps) * c[k]));
            mask.extend([1.0; 4]);
        }
    }
    (rows, mask)
}

/// Scores and losses of one critic evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticLosses {
    pub loss: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
    pub gp: f64,
}

/// Critic scores of inputs laid out as in [`CriticBatch`], `B x 1`.
fn score(
    critic: &Critic,
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    offsets: &[usize],
    stage: GrowthStage,
) -> Result<Var, TrainError> {
    Ok(match critic {
        Critic::Voxel(c) => {
            let (b, n) = tape.value(x).dims2().expect("voxel rows");
            let r = stage.resolution();
            debug_assert_eq!(n, r * r * r);
            let x5 = tape.reshape(x, &[b, 1, r, r, r])?;
            c.score(tape, bound, x5, stage)?
        }
        Critic::Point(c) => c.score(tape, bound, x, offsets)?,
    })
}

/// `mean((sqrt(|g_b|^2 + eps) - 1)^2)` over per-shape sums of `sq` (`M x 1`).
pub fn penalty_from_squares(tape: &mut Tape, sq: Var, offsets: Option<&[usize]>) -> Result<Var, TrainError> {
    let per_shape = match offsets {
        None => sq,
        Some(off) => {
            let m = *off.last().expect("offsets");
            let b = off.len() - 1;
            let mut ind = vec![0.0; b * m];
            for (s, w) in off.windows(2).enumerate() {
                for i in w[0]..w[1] {
                    ind[s * m + i] = 1.0;
                }
            }
            let ind = tape.constant(Tensor::matrix(b, m, ind));
            tape.matmul(ind, sq)?
        }
    };
    let shifted = tape.add_scalar(per_shape, GP_NORM_EPS)?;
    let norm = tape.pow(shifted, 0.5)?;
    let dev = tape.add_scalar(norm, -1.0)?;
    let dev2 = tape.square(dev)?;
    Ok(tape.mean(dev2)?)
}

/// WGAN-GP critic objective, recorded on `tape` with critic parameters `bound`.
///
/// `eps[b]` weights the real side of interpolate `b`.
pub fn critic_objective(
    critic: &Critic,
    tape: &mut Tape,
    bound: &Bound,
    batch: &CriticBatch,
    stage: GrowthStage,
    gp_lambda: f64,
    eps: &[f64],
) -> Result<(Var, CriticLosses), TrainError> {
    let (all, offsets, mask, hat, shapes) = match batch {
        CriticBatch::Voxel { r, real, fake } => {
            let (b, n) = real.dims2().expect("voxel rows");
            debug_assert_eq!(n, r * r * r);
            let mut h = Vec::with_capacity(b * n);
            for s in 0..b {
                let (a, c) = (&real.data()[s * n..(s + 1) * n], &fake.data()[s * n..(s + 1) * n]);
                h.extend(a.iter().zip(c).map(|(x, y)| eps[s] * x + (1.0 - eps[s]) * y));
            }
            let rv = tape.constant(real.clone());
            let fv = tape.constant(fake.clone());
            let hat = tape.var(Tensor::matrix(b, n, h));
            (tape.concat_rows(&[rv, fv, hat])?, Vec::new(), None, hat, b)
        }
        CriticBatch::Points { real, fake } => {
            let b = real.shapes();
            let mut rows = Vec::new();
            let mut mask = Vec::new();
            let mut hat_off = vec![0];
            for s in 0..b {
                let (r, m) = interpolate_shape(real, fake, s, eps[s]);
                hat_off.push(hat_off[s] + r.len() / 4);
                rows.extend(r);
                mask.extend(m);
            }
            let mut offsets = real.offsets.clone();
            let base = *offsets.last().expect("offsets");
            offsets.extend(fake.offsets[1..].iter().map(|o| o + base));
            let base = *offsets.last().expect("offsets");
            offsets.extend(hat_off[1..].iter().map(|o| o + base));
            let rv = tape.constant(real.tensor());
            let fv = tape.constant(fake.tensor());
            let hat = tape.var(Tensor::matrix(rows.len() / 4, 4, rows));
            let mask = (Tensor::matrix(mask.len() / 4, 4, mask), hat_off);
            (tape.concat_rows(&[rv, fv, hat])?, offsets, Some(mask), hat, b)
        }
    };
    let d = score(critic, tape, bound, all, &offsets, stage)?;
    let d_real = tape.slice_rows(d, 0, shapes)?;
    let d_fake = tape.slice_rows(d, shapes, shapes)?;
    let d_hat = tape.slice_rows(d, 2 * shapes, shapes)?;
    let total = tape.sum(d_hat)?;
    let g = tape.grad(total, &[hat], true)?[0];
    let gp = match mask {
        None => {
            let sq = tape.square(g)?;
            let sq = tape.sum_cols(sq)?;
            penalty_from_squares(tape, sq, None)?
        }
        Some((mask, hat_off)) => {
            let m = tape.constant(mask);
            let g = tape.mul(g, m)?;
            let sq = tape.square(g)?;
            let sq = tape.sum_cols(sq)?;
            penalty_from_squares(tape, sq, Some(&hat_off))?
        }
    };
    let mr = tape.mean(d_real)?;
    let mf = tape.mean(d_fake)?;
    let w = tape.sub(mf, mr)?;
    let pen = tape.scale(gp, gp_lambda)?;
    let loss = tape.add(w, pen)?;
    let losses = CriticLosses {
        loss: tape.value(loss).item(),
        mean_real: tape.value(mr).item(),
        mean_fake: tape.value(mf).item(),
        gp: tape.value(gp).item(),
    };
    Ok((loss, losses))
}

/// `mean D(fake) - mean D(real)` without a penalty.
pub fn wasserstein_estimate(critic: &Critic, batch: &CriticBatch, stage: GrowthStage) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let bound = critic.params().bind(&mut tape, false);
    let (real, fake, offsets, shapes) = match batch {
        CriticBatch::Voxel { real, fake, .. } => (real.clone(), fake.clone(), Vec::new(), real.shape()[0]),
        CriticBatch::Points { real, fake } => {
            let mut off = real.offsets.clone();
            let base = *off.last().expect("offsets");
            off.extend(fake.offsets[1..].iter().map(|o| o + base));
            (real.tensor(), fake.tensor(), off, real.shapes())
        }
    };
    let rv = tape.constant(real);
    let fv = tape.constant(fake);
    let all = tape.concat_rows(&[rv, fv])?;
    let d = score(critic, &mut tape, &bound, all, &offsets, stage)?;
    let v = tape.value(d).data();
    let mr = v[..shapes].iter().sum::<f64>() / shapes as f64;
    let mf = v[shapes..].iter().sum::<f64>() / shapes as f64;
    Ok(mf - mr)
}

/// Assembles real and generated critic inputs for `shapes` with one latent each.
#[allow(clippy::too_many_arguments)]
pub fn critic_batch(
    kind: DiscriminatorKind,
    generator: &Generator,
    shapes: &[&RealShape],
    latents: &[LatentCode],
    stage: GrowthStage,
    points: usize,
    refinement: RefinementConfig,
    rng: &mut impl Rng,
) -> Result<CriticBatch, TrainError> {
    match kind {
        DiscriminatorKind::Voxel => {
            let r = stage.resolution();
            let n = r * r * r;
            let mut real = Vec::with_capacity(shapes.len() * n);
            let mut fake = Vec::with_capacity(shapes.len() * n);
            for (s, z) in shapes.iter().zip(latents) {
                real.extend(s.raster(r));
                fake.extend(generator.eval_raster(z, r)?);
            }
            Ok(CriticBatch::Voxel {
                r,
                real: Tensor::matrix(shapes.len(), n, real),
                fake: Tensor::matrix(shapes.len(), n, fake),
            })
        }
        DiscriminatorKind::Point | DiscriminatorKind::PointRefined => {
            let mut real = PointRows::new();
            let mut fake = PointRows::new();
            for (s, z) in shapes.iter().zip(latents) {
                let (pts, vals) = s.uniform_points(points, rng);
                if kind == DiscriminatorKind::Point {
                    let g = generator.forward_batch(z, &pts)?;
                    real.push_shape(&pts, &vals, &[], &[]);
                    fake.push_shape(&pts, &g, &[], &[]);
                } else {
                    let (rp, rv) = s.near_surface(&pts, &vals, refinement, rng);
                    real.push_shape(&pts, &vals, &rp, &rv);
                    let refined = refine_generated_samples(generator, z, &pts, refinement, rng)?;
                    let n = pts.len();
                    fake.push_shape(&pts, &refined.values[..n], &refined.points[n..], &refined.values[n..]);
                }
            }
            Ok(CriticBatch::Points { real, fake })
        }
    }
}

/// `-mean D(fake)` recorded on `tape`, differentiable in the generator parameters `gbound`.
#[allow(clippy::too_many_arguments)]
pub fn generator_objective(
    kind: DiscriminatorKind,
    generator: &Generator,
    critic: &Critic,
    tape: &mut Tape,
    gbound: &Bound,
    dbound: &Bound,
    latents: &[LatentCode],
    stage: GrowthStage,
    points: usize,
    refinement: RefinementConfig,
    rng: &mut impl Rng,
) -> Result<Var, TrainError> {
    let b = latents.len();
    let z = tape.constant(stack_latents(latents));
    let (x, offsets) = match kind {
        DiscriminatorKind::Voxel => {
            let r = stage.resolution();
            let raster = raster_points(r);
            let n = raster.len();
            let p: Vec<f64> = (0..b).flat_map(|_| raster.iter().flatten().copied()).collect();
            let p = tape.constant(Tensor::matrix(b * n, 3, p));
            let owner: Arc<[usize]> = (0..b * n).map(|i| i / n).collect::<Vec<_>>().into();
            let g = generator.forward_tape(tape, gbound, z, p, owner)?;
            (tape.reshape(g, &[b, n])?, Vec::new())
        }
        DiscriminatorKind::Point | DiscriminatorKind::PointRefined => {
            let pts: Vec<f64> = (0..b * points * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let offsets: Vec<usize> = (0..=b).map(|i| i * points).collect();
            let pts = Tensor::matrix(b * points, 3, pts);
            if kind == DiscriminatorKind::Point {
                let owner: Arc<[usize]> = owners(&offsets).into();
                let p = tape.constant(pts);
                let g = generator.forward_tape(tape, gbound, z, p, owner)?;
                (tape.concat_cols(p, g)?, offsets)
            } else {
                let field = GeneratorField {
                    generator,
                    bound: gbound,
                    latents: z,
                };
                let rb = refine_on_tape(&field, tape, pts, &offsets, refinement, true, rng)?;
                (tape.concat_cols(rb.points, rb.values)?, rb.offsets)
            }
        }
    };
    let d = score(critic, tape, dbound, x, &offsets, stage)?;
    let m = tape.mean(d)?;
    Ok(tape.scale(m, -1.0)?)
}
