//! Mesh to SDF dataset preparation.
//!
//! A normalized mesh is depth-rendered from many orthographic cameras. The
//! back-projected pixels form a surface cloud that supplies distances; a
//! query is outside when any camera sees it in front of the rendered surface.

mod dataset;
mod render;

use rand::Rng;
use thiserror::Error;

use crate::mesh::{dist2, norm, scale, sub, TriangleMesh};
use crate::spatial::KdTree;

pub use dataset::{read_dataset, write_dataset, DatasetError, Provenance, SdfSampleSet, MAX_ABS_SDF};
pub use render::{back_project, render_view, CameraRig, DepthBuffer};

/// Radius of the bounding sphere after normalization.
pub const NORMALIZED_RADIUS: f64 = 0.9;

/// Depth margin a query needs in front of the surface to count as seen.
pub const VISIBILITY_BIAS: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum Mesh2SdfError {
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("mesh has no extent")]
    Degenerate,
    #[error("no surface was rendered")]
    EmptyCloud,
}

/// Centers the bounding box at the origin and scales the bounding sphere to radius 0.9.
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh, Mesh2SdfError> {
    let (lo, hi) = mesh.bounds().ok_or(Mesh2SdfError::EmptyMesh)?;
    if mesh.triangles.is_empty() {
        return Err(Mesh2SdfError::EmptyMesh);
    }
    let center = scale([lo[0] + hi[0], lo[1] + hi[1], lo[2] + hi[2]], 0.5);
    let radius = mesh
        .vertices
        .iter()
        .map(|v| norm(sub(*v, center)))
        .fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(Mesh2SdfError::Degenerate);
    }
    let s = NORMALIZED_RADIUS / radius;
    Ok(mesh.map_vertices(|v| scale(sub(v, center), s)))
}

/// Depth buffers and the surface cloud of one mesh.
#[derive(Clone, Debug)]
pub struct SurfaceScan {
    rig: CameraRig,
    buffers: Vec<DepthBuffer>,
    cloud: Vec<[f64; 3]>,
    tree: KdTree,
}

/// Renders `mesh` from every camera of `rig` and back-projects the buffers.
pub fn render_depth(mesh: &TriangleMesh, rig: &CameraRig) -> Result<SurfaceScan, Mesh2SdfError> {
    let mut buffers = Vec::with_capacity(rig.views());
    let mut cloud = Vec::new();
    for k in 0..rig.views() {
        let b = render_view(mesh, rig, k);
        cloud.extend(back_project(rig, k, &b, rig.cloud_stride));
        buffers.push(b);
    }
    if cloud.is_empty() {
        return Err(Mesh2SdfError::EmptyCloud);
    }
    let tree = KdTree::new(&cloud);
    Ok(SurfaceScan {
        rig: rig.clone(),
        buffers,
        cloud,
        tree,
    })
}

impl SurfaceScan {
    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn buffers(&self) -> &[DepthBuffer] {
        &self.buffers
    }

    pub fn cloud(&self) -> &[[f64; 3]] {
        &self.cloud
    }

    /// Seen by some camera: outside its window, or in front of its rendered surface.
    pub fn is_seen(&self, p: [f64; 3]) -> bool {
        (0..self.rig.views()).any(|k| {
            let (x, y, z) = self.rig.project(k, p);
            match self.rig.pixel(x, y) {
                None => true,
                Some((i, j)) => z < self.buffers[k].at(i, j) - VISIBILITY_BIAS,
            }
        })
    }

    /// Distance to the nearest cloud point, negative when no camera sees `p`.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let (_, d2) = self.tree.nearest(p).expect("cloud is non-empty");
        let d = d2.sqrt();
        if self.is_seen(p) {
            d
        } else {
            -d
        }
    }
}

/// Sizes of a prepared sample set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    pub n_uniform: usize,
    /// Cloud points stored with value 0 as near-surface ground truth.
    pub n_near: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            n_uniform: 64 * 64 * 64,
            n_near: 16384,
        }
    }
}

/// Uniform samples in `[-1, 1]^3` with their signed distances, then near-surface entries.
pub fn build_sample_set(id: &str, scan: &SurfaceScan, opts: SampleOptions, rng: &mut impl Rng) -> SdfSampleSet {
    let mut set = SdfSampleSet::new(id);
    for _ in 0..opts.n_uniform {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        set.push(p, scan.signed_distance(p), Provenance::Uniform);
    }
    let picks = rand::seq::index::sample(rng, scan.cloud.len(), opts.n_near.min(scan.cloud.len()));
    for i in picks {
        let p = scan.cloud[i].map(|c| c.clamp(-1.0, 1.0));
        set.push(p, 0.0, Provenance::NearSurface);
    }
    set
}

/// Normalizes, renders and samples one mesh.
pub fn prepare_mesh(
    id: &str,
    mesh: &TriangleMesh,
    rig: &CameraRig,
    opts: SampleOptions,
    rng: &mut impl Rng,
) -> Result<SdfSampleSet, Mesh2SdfError> {
    let mesh = normalize_mesh(&mesh.cleaned())?;
    let scan = render_depth(&mesh, rig)?;
    Ok(build_sample_set(id, &scan, opts, rng))
}

/// Thresholds of [`filter_shape`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterConfig {
    pub min_interior: f64,
    pub pairs: usize,
    pub pair_distance: f64,
    /// Slack on the Lipschitz bound per pair.
    pub tolerance: f64,
    /// Largest tolerated fraction of violating pairs.
    pub max_violations: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_interior: 0.01,
            pairs: 10_000,
            pair_distance: 0.05,
            tolerance: 0.01,
            max_violations: 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Accept,
    Interior { fraction: f64 },
    Discontinuous { violations: usize, pairs: usize },
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        *self == Verdict::Accept
    }
}

/// Fraction of close uniform pairs whose values break the Lipschitz bound.
pub fn discontinuity(set: &SdfSampleSet, cfg: &FilterConfig, rng: &mut impl Rng) -> (usize, usize) {
    let uniform = set.indices(Provenance::Uniform);
    if uniform.len() < 2 {
        return (0, 0);
    }
    let pts: Vec<[f64; 3]> = uniform.iter().map(|&i| set.points[i]).collect();
    let tree = KdTree::new(&pts);
    let (mut pairs, mut violations) = (0, 0);
    for _ in 0..cfg.pairs * 20 {
        if pairs == cfg.pairs {
            break;
        }
        let a = rng.random_range(0..pts.len());
        let near: Vec<usize> = tree
            .within(pts[a], cfg.pair_distance)
            .into_iter()
            .filter(|&b| b != a && dist2(pts[a], pts[b]) < cfg.pair_distance * cfg.pair_distance)
            .collect();
        if near.is_empty() {
            continue;
        }
        let b = near[rng.random_range(0..near.len())];
        let gap = (set.values[uniform[a]] - set.values[uniform[b]]).abs();
        if gap > dist2(pts[a], pts[b]).sqrt() + cfg.tolerance {
            violations += 1;
        }
        pairs += 1;
    }
    (violations, pairs)
}

/// Rejects shapes with too little interior, then shapes with a discontinuous field.
pub fn filter_shape(set: &SdfSampleSet, cfg: &FilterConfig, rng: &mut impl Rng) -> Verdict {
    let fraction = set.interior_fraction();
    if fraction < cfg.min_interior {
        return Verdict::Interior { fraction };
    }
    let (violations, pairs) = discontinuity(set, cfg, rng);
    if pairs > 0 && violations as f64 > cfg.max_violations * pairs as f64 {
        return Verdict::Discontinuous { violations, pairs };
    }
    Verdict::Accept
}
