//! Real shapes as seen by the critic, procedural datasets and the split.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::generator::{raster_points, RefinementConfig};
use crate::mesh2sdf::{Provenance, SdfSampleSet};
use crate::spatial::KdTree;
use crate::surfacing::Analytic;

/// Neighbours used when a stored sample set is resampled at new points.
const IDW_NEIGHBOURS: usize = 8;

/// A training shape: an exact field or a stored sample set.
#[derive(Debug)]
pub enum RealShape {
    Analytic { id: String, field: Analytic },
    Sampled(SampledShape),
}

#[derive(Debug)]
pub struct SampledShape {
    set: SdfSampleSet,
    uniform: Vec<usize>,
    near: Vec<usize>,
    uniform_tree: KdTree,
    near_tree: KdTree,
    rasters: Mutex<HashMap<usize, Vec<f64>>>,
}

impl SampledShape {
    pub fn new(set: SdfSampleSet) -> Result<Self, TrainError> {
        set.validate().map_err(|e| TrainError::Data(e.to_string()))?;
        let uniform = set.indices(Provenance::Uniform);
        if uniform.is_empty() {
            return Err(TrainError::Data(format!("shape `{}` has no uniform samples", set.id)));
        }
        let near = set.indices(Provenance::NearSurface);
        let pick = |idx: &[usize]| idx.iter().map(|&i| set.points[i]).collect::<Vec<_>>();
        Ok(Self {
            uniform_tree: KdTree::new(&pick(&uniform)),
            near_tree: KdTree::new(&pick(&near)),
            uniform,
            near,
            set,
            rasters: Mutex::new(HashMap::new()),
        })
    }

    pub fn set(&self) -> &SdfSampleSet {
        &self.set
    }

    /// Inverse-distance weighted value over the nearest uniform samples.
    pub fn interpolate(&self, p: [f64; 3]) -> f64 {
        let nn = self.uniform_tree.k_nearest(p, IDW_NEIGHBOURS);
        if let Some(&(i, d2)) = nn.first() {
            if d2 == 0.0 {
                return self.set.values[self.uniform[i]];
            }
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (i, d2) in nn {
            let w = 1.0 / d2.sqrt();
            num += w * self.set.values[self.uniform[i]];
            den += w;
        }
        num / den
    }
}

impl RealShape {
    pub fn id(&self) -> &str {
        match self {
            RealShape::Analytic { id, .. } => id,
            RealShape::Sampled(s) => &s.set.id,
        }
    }

    /// Values on the cell-centered raster of resolution `r`.
    pub fn raster(&self, r: usize) -> Vec<f64> {
        match self {
            RealShape::Analytic { field, .. } => raster_points(r).into_iter().map(|p| field.sdf(p)).collect(),
            RealShape::Sampled(s) => {
                let mut cache = s.rasters.lock().expect("raster cache");
                cache
                    .entry(r)
                    .or_insert_with(|| raster_points(r).into_iter().map(|p| s.interpolate(p)).collect())
                    .clone()
            }
        }
    }

    /// `n` uniform points with their values.
    pub fn uniform_points(&self, n: usize, rng: &mut impl Rng) -> (Vec<[f64; 3]>, Vec<f64>) {
        match self {
            RealShape::Analytic { field, .. } => {
                let pts: Vec<[f64; 3]> = (0..n)
                    .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                    .collect();
                let vals = pts.iter().map(|&p| field.sdf(p)).collect();
                (pts, vals)
            }
            RealShape::Sampled(s) => {
                let picks: Vec<usize> = if n <= s.uniform.len() {
                    rand::seq::index::sample(rng, s.uniform.len(), n).into_iter().collect()
                } else {
                    (0..n).map(|_| rng.random_range(0..s.uniform.len())).collect()
                };
                let pts = picks.iter().map(|&k| s.set.points[s.uniform[k]]).collect();
                let vals = picks.iter().map(|&k| s.set.values[s.uniform[k]]).collect();
                (pts, vals)
            }
        }
    }

    /// Ground-truth refined points for the uniform `points` with values `values`.
    ///
    /// Analytic fields are projected exactly and jittered; stored shapes use
    /// the near-surface sample closest to each selected point.
    pub fn near_surface(
        &self,
        points: &[[f64; 3]],
        values: &[f64],
        cfg: RefinementConfig,
        rng: &mut impl Rng,
    ) -> (Vec<[f64; 3]>, Vec<f64>) {
        let mut pts = Vec::new();
        let mut vals = Vec::new();
        for (p, &s) in points.iter().zip(values) {
            if s.abs() >= cfg.delta {
                continue;
            }
            match self {
                RealShape::Analytic { field, .. } => {
                    let q = field.project(*p);
                    let q: [f64; 3] = std::array::from_fn(|k| {
                        (q[k] + cfg.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)).clamp(-1.0, 1.0)
                    });
                    pts.push(q);
                    vals.push(field.sdf(q));
                }
                RealShape::Sampled(sh) => {
                    if let Some((i, _)) = sh.near_tree.nearest(*p) {
                        pts.push(sh.set.points[sh.near[i]]);
                        vals.push(sh.set.values[sh.near[i]]);
                    }
                }
            }
        }
        (pts, vals)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Procedural {
    Spheres,
    Boxes,
    Mixed,
}

impl std::str::FromStr for Procedural {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "spheres" => Ok(Procedural::Spheres),
            "boxes" => Ok(Procedural::Boxes),
            "mixed" => Ok(Procedural::Mixed),
            other => Err(format!("unknown procedural dataset `{other}` (spheres, boxes, mixed)")),
        }
    }
}

/// `count` centered shapes: spheres with radius in `[0.3, 0.7]`, boxes with half extent in `[0.2, 0.6]`.
pub fn procedural_shapes(kind: Procedural, count: usize, rng: &mut impl Rng) -> Vec<RealShape> {
    (0..count)
        .map(|i| {
            let sphere = match kind {
                Procedural::Spheres => true,
                Procedural::Boxes => false,
                Procedural::Mixed => i % 2 == 0,
            };
            if sphere {
                let r = rng.random_range(0.3..=0.7);
                RealShape::Analytic {
                    id: format!("sphere{i:04}"),
                    field: Analytic::sphere(r),
                }
            } else {
                let h = rng.random_range(0.2..=0.6);
                RealShape::Analytic {
                    id: format!("box{i:04}"),
                    field: Analytic::cube(h),
                }
            }
        })
        .collect()
}

/// Shape indices of the train, validation and test parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` and cuts it 85/5/10, rounding the smaller parts.
pub fn split_dataset(n: usize, rng: &mut impl Rng) -> Result<Split, TrainError> {
    let val = (n as f64 * 0.05).round() as usize;
    let test = (n as f64 * 0.10).round() as usize;
    let train = n.saturating_sub(val + test);
    if train == 0 || val == 0 || test == 0 {
        return Err(TrainError::Data(format!(
            "{n} shapes leave an empty split ({train}/{val}/{test})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    Ok(Split {
        train: idx[..train].to_vec(),
        val: idx[train..train + val].to_vec(),
        test: idx[train + val..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = split_dataset(64, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (55, 3, 6));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
        assert_eq!(split_dataset(100, &mut rng).unwrap().val.len(), 5);
        assert!(split_dataset(5, &mut rng).is_err());
    }

    #[test]
    fn procedural_radii() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in procedural_shapes(Procedural::Spheres, 50, &mut rng) {
            let RealShape::Analytic { field, .. } = s else { panic!() };
            let r = -field.sdf([0.0; 3]);
            assert!((0.3..=0.7).contains(&r));
        }
    }

    #[test]
    fn sampled_matches_analytic_roughly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sphere = Analytic::sphere(0.5);
        let mut set = SdfSampleSet::new("s");
        for _ in 0..20000 {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            set.push(p, sphere.sdf(p), Provenance::Uniform);
        }
        for _ in 0..2000 {
            let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let q = sphere.project(p);
            set.push(q, 0.0, Provenance::NearSurface);
        }
        let shape = RealShape::Sampled(SampledShape::new(set).unwrap());
        let raster = shape.raster(8);
        let truth: Vec<f64> = raster_points(8).into_iter().map(|p| sphere.sdf(p)).collect();
        let err = raster.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.1, "max error {err}");
        let (pts, vals) = shape.uniform_points(100, &mut rng);
        assert_eq!((pts.len(), vals.len()), (100, 100));
        let (np, nv) = shape.near_surface(&pts, &vals, RefinementConfig::default(), &mut rng);
        assert_eq!(np.len(), nv.len());
        assert!(nv.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn analytic_near_surface_is_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = RealShape::Analytic {
            id: "s".into(),
            field: Analytic::sphere(0.5),
        };
        let (pts, vals) = shape.uniform_points(2000, &mut rng);
        let cfg = RefinementConfig { delta: 0.1, sigma: 0.0 };
        let (np, nv) = shape.near_surface(&pts, &vals, cfg, &mut rng);
        assert_eq!(np.len(), vals.iter().filter(|v| v.abs() < 0.1).count());
        assert!(nv.iter().all(|v| v.abs() < 1e-12));
    }
}
