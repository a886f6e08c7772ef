//! Surface projection and the refined point set.
//!
//! Points whose generated value is within `delta` of zero are moved along the
//! field gradient, `p - g(p) * grad g(p) + eps`, clamped to the unit cube, and
//! the field is evaluated again there. Everything stays on the tape so the
//! added values are differentiable in the generator parameters.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Generator, LatentCode, Result};
use crate::autodiff::{Bound, Tape, Tensor, Var};

/// Gradient norms below this mark a point as degenerate.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefinementConfig {
    /// Proximity threshold on `|g|`.
    pub delta: f64,
    /// Standard deviation of the jitter.
    pub sigma: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self { delta: 0.1, sigma: 0.01 }
    }
}

/// `p - sdf * grad`, or `None` when the gradient is degenerate.
pub fn project_to_surface(sdf: f64, grad: [f64; 3], p: [f64; 3]) -> Option<[f64; 3]> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return None;
    }
    Some([p[0] - sdf * grad[0], p[1] - sdf * grad[1], p[2] - sdf * grad[2]])
}

/// A field that can be evaluated on a tape, rows of `p` conditioned on `owner`.
pub trait TapeField {
    fn eval(&self, tape: &mut Tape, p: Var, owner: Arc<[usize]>) -> Result<Var>;
}

/// The generator bound to a tape with one latent row per shape.
pub struct GeneratorField<'a> {
    pub generator: &'a Generator,
    pub bound: &'a Bound,
    pub latents: Var,
}

impl TapeField for GeneratorField<'_> {
    fn eval(&self, tape: &mut Tape, p: Var, owner: Arc<[usize]>) -> Result<Var> {
        self.generator.forward_tape(tape, self.bound, self.latents, p, owner)
    }
}

/// Refined points and values for a batch of shapes, grouped per shape.
#[derive(Clone, Debug)]
pub struct RefinedBatch {
    /// `M x 3`: for each shape its original points, then its added points.
    pub points: Var,
    /// `M x 1` field values at `points`.
    pub values: Var,
    /// Segment offsets into the rows, one segment per shape.
    pub offsets: Vec<usize>,
    /// Points added per shape.
    pub added: Vec<usize>,
    /// Points skipped because their gradient was degenerate.
    pub degenerate: usize,
}

/// Builds the refined set on `tape` for shapes whose points are the segments of `points`.
///
/// With `create_graph` the projection gradient is itself recorded, so the
/// added values can be differentiated with respect to the field parameters.
pub fn refine_on_tape(
    field: &dyn TapeField,
    tape: &mut Tape,
    points: Tensor,
    offsets: &[usize],
    cfg: RefinementConfig,
    create_graph: bool,
    rng: &mut impl Rng,
) -> Result<RefinedBatch> {
    let n = points.shape()[0];
    let owner: Arc<[usize]> = owners(offsets).into();
    let p = tape.var(points);
    let g = field.eval(tape, p, owner.clone())?;
    let total = tape.sum(g)?;
    let grad = tape.grad(total, &[p], create_graph)?[0];

    let gv = tape.value(g).data().to_vec();
    let dv = tape.value(grad).data().to_vec();
    let mut selected = Vec::new();
    let mut degenerate = 0;
    for i in 0..n {
        if gv[i].abs() < cfg.delta {
            let d = &dv[3 * i..3 * i + 3];
            if d.iter().map(|x| x * x).sum::<f64>().sqrt() < DEGENERATE_NORM {
                degenerate += 1;
            } else {
                selected.push(i);
            }
        }
    }
    let shapes = offsets.len() - 1;
    let mut added = vec![0; shapes];
    for &i in &selected {
        added[owner[i]] += 1;
    }
    if selected.is_empty() {
        return Ok(RefinedBatch {
            points: p,
            values: g,
            offsets: offsets.to_vec(),
            added,
            degenerate,
        });
    }

    let noise: Vec<f64> = (0..3 * selected.len())
        .map(|_| cfg.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let sel: Arc<[usize]> = selected.clone().into();
    let sel_owner: Arc<[usize]> = selected.iter().map(|&i| owner[i]).collect::<Vec<_>>().into();
    let ps = tape.gather_rows(p, sel.clone())?;
    let gs = tape.gather_rows(g, sel.clone())?;
    let ds = tape.gather_rows(grad, sel)?;
    let step = tape.mul_col(ds, gs)?;
    let q = tape.sub(ps, step)?;
    let eps = tape.constant(Tensor::matrix(selected.len(), 3, noise));
    let q = tape.add(q, eps)?;
    let q = tape.clamp(q, -1.0, 1.0)?;
    let gq = field.eval(tape, q, sel_owner)?;

    // rows of shape b: its originals, then its added points
    let mut order = Vec::with_capacity(n + selected.len());
    let mut new_offsets = vec![0];
    let mut next_added = n;
    for b in 0..shapes {
        order.extend(offsets[b]..offsets[b + 1]);
        order.extend(next_added..next_added + added[b]);
        next_added += added[b];
        new_offsets.push(order.len());
    }
    let order: Arc<[usize]> = order.into();
    let all_p = tape.concat_rows(&[p, q])?;
    let all_g = tape.concat_rows(&[g, gq])?;
    Ok(RefinedBatch {
        points: tape.gather_rows(all_p, order.clone())?,
        values: tape.gather_rows(all_g, order)?,
        offsets: new_offsets,
        added,
        degenerate,
    })
}

/// Segment index of every row.
pub fn owners(offsets: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    for (b, w) in offsets.windows(2).enumerate() {
        out.extend(std::iter::repeat_n(b, w[1] - w[0]));
    }
    out
}

/// Refined points and their generated values for one latent.
#[derive(Clone, Debug, PartialEq)]
pub struct RefinedSamples {
    pub points: Vec<[f64; 3]>,
    pub values: Vec<f64>,
    pub added: usize,
}

/// Runs refinement for one shape with frozen generator parameters.
pub fn refine_generated_samples(
    generator: &Generator,
    z: &LatentCode,
    points: &[[f64; 3]],
    cfg: RefinementConfig,
    rng: &mut impl Rng,
) -> Result<RefinedSamples> {
    generator.check_latent(z)?;
    if points.is_empty() {
        return Err(super::GeneratorError::EmptyBatch);
    }
    let mut tape = Tape::new();
    let bound = generator.params().bind(&mut tape, false);
    let latents = tape.constant(Tensor::row(z.values().to_vec()));
    let field = GeneratorField {
        generator,
        bound: &bound,
        latents,
    };
    let p = Tensor::matrix(points.len(), 3, points.iter().flatten().copied().collect());
    let r = refine_on_tape(&field, &mut tape, p, &[0, points.len()], cfg, false, rng)?;
    Ok(RefinedSamples {
        points: tape.value(r.points).data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        values: tape.value(r.values).data().to_vec(),
        added: r.added[0],
    })
}

/// The refined point set alone.
pub fn build_refined_point_set(
    generator: &Generator,
    z: &LatentCode,
    points: &[[f64; 3]],
    cfg: RefinementConfig,
    rng: &mut impl Rng,
) -> Result<Vec<[f64; 3]>> {
    Ok(refine_generated_samples(generator, z, points, cfg, rng)?.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Sphere(f64);

    impl TapeField for Sphere {
        fn eval(&self, tape: &mut Tape, p: Var, _owner: Arc<[usize]>) -> Result<Var> {
            let sq = tape.square(p)?;
            let r2 = tape.sum_cols(sq)?;
            let r = tape.pow(r2, 0.5)?;
            Ok(tape.add_scalar(r, -self.0)?)
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_surface(0.5, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]), Some([0.5, 0.0, 0.0]));
        assert_eq!(project_to_surface(-0.3, [1.0, 0.0, 0.0], [0.2, 0.0, 0.0]), Some([0.5, 0.0, 0.0]));
        assert_eq!(project_to_surface(1.7, [0.0, 0.0, 1.0], [0.3, -0.2, 1.7]), Some([0.3, -0.2, 0.0]));
        assert_eq!(project_to_surface(0.1, [0.0; 3], [0.0; 3]), None);
    }

    #[test]
    fn nothing_near_surface_keeps_points() {
        let mut tape = Tape::new();
        let pts = Tensor::matrix(2, 3, vec![0.9, 0.9, 0.9, 0.0, 0.0, 0.05]);
        let r = refine_on_tape(&Sphere(0.5), &mut tape, pts.clone(), &[0, 2], RefinementConfig::default(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tape.value(r.points), &pts);
        assert_eq!(r.added, vec![0]);
    }

    #[test]
    fn exact_sphere_projects_onto_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let cfg = RefinementConfig { delta: 0.1, sigma: 0.0 };
        let r = refine_on_tape(&Sphere(0.5), &mut tape, Tensor::matrix(100, 3, pts), &[0, 40, 100], cfg, false, &mut rng).unwrap();
        assert!(r.added.iter().sum::<usize>() > 0);
        let p = tape.value(r.points).data();
        let mut row = 0;
        for b in 0..2 {
            let originals = [40, 60][b];
            for k in 0..originals + r.added[b] {
                if k >= originals {
                    let q = &p[3 * row..3 * row + 3];
                    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                    assert!((n - 0.5).abs() < 1e-9);
                }
                row += 1;
            }
        }
        assert_eq!(r.offsets, vec![0, 40 + r.added[0], 100 + r.added[0] + r.added[1]]);
    }

    #[test]
    fn single_shape_wrappers_agree() {
        let cfg = GeneratorConfig {
            latent_dim: 4,
            hidden_dim: 8,
            layers: 3,
            reinjection_layer: 1,
        };
        let g = Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z = LatentCode::new(vec![0.1, 0.2, -0.3, 0.4]);
        let pts: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 / 50.0 - 0.5, 0.1, -0.2]).collect();
        let big = RefinementConfig { delta: 10.0, sigma: 0.0 };
        let s = refine_generated_samples(&g, &z, &pts, big, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(s.added, 50);
        assert_eq!(&s.points[..50], &pts[..]);
        let direct = g.forward_batch(&z, &s.points).unwrap();
        for (a, b) in s.values.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
