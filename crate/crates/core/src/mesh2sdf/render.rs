//! Orthographic depth rendering around the unit-normalized shape.

use crate::mesh::{add, cross, dot, norm, scale, TriangleMesh};

/// Distance of every camera plane from the origin, beyond the cube corners.
const CAMERA_DISTANCE: f64 = 2.0;

/// Orthographic cameras looking at the origin from directions on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    /// Unit vectors from the origin towards each camera.
    pub directions: Vec<[f64; 3]>,
    /// Pixels per side of each depth buffer.
    pub resolution: usize,
    /// Half width of the square view window.
    pub extent: f64,
    /// Every `cloud_stride`-th pixel per axis is back-projected into the cloud.
    pub cloud_stride: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self::fibonacci(50, 1024)
    }
}

impl CameraRig {
    /// `views` directions on a Fibonacci sphere.
    pub fn fibonacci(views: usize, resolution: usize) -> Self {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let directions = (0..views)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / views as f64;
                let r = (1.0 - y * y).sqrt();
                let t = golden * i as f64;
                [r * t.cos(), y, r * t.sin()]
            })
            .collect();
        Self {
            directions,
            resolution,
            extent: 1.0,
            cloud_stride: 4,
        }
    }

    pub fn views(&self) -> usize {
        self.directions.len()
    }

    /// Smallest angle in degrees between two camera directions.
    pub fn min_angle_deg(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.directions.iter().enumerate() {
            for b in &self.directions[i + 1..] {
                best = best.min(dot(*a, *b).clamp(-1.0, 1.0).acos());
            }
        }
        best.to_degrees()
    }

    pub fn pixel_size(&self) -> f64 {
        2.0 * self.extent / self.resolution as f64
    }

    /// Image axes `(u, v)` of view `k`.
    pub fn basis(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        let d = self.directions[k];
        let up = if d[2].abs() < 0.9 { [0.0, 0.0, 1.0] } else { [1.0, 0.0, 0.0] };
        let u = cross(up, d);
        let u = scale(u, 1.0 / norm(u));
        (u, cross(d, u))
    }

    /// Image coordinates and depth of `p` in view `k`.
    pub fn project(&self, k: usize, p: [f64; 3]) -> (f64, f64, f64) {
        let (u, v) = self.basis(k);
        (dot(p, u), dot(p, v), CAMERA_DISTANCE - dot(p, self.directions[k]))
    }

    /// Pixel containing image coordinates `(x, y)`, if inside the window.
    pub fn pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let px = self.pixel_size();
        let i = ((x + self.extent) / px).floor();
        let j = ((y + self.extent) / px).floor();
        let n = self.resolution as f64;
        (i >= 0.0 && j >= 0.0 && i < n && j < n).then_some((i as usize, j as usize))
    }

    /// Object-space point seen at the center of pixel `(i, j)` with the given depth in view `k`.
    pub fn unproject(&self, k: usize, i: usize, j: usize, depth: f64) -> [f64; 3] {
        let (u, v) = self.basis(k);
        let px = self.pixel_size();
        let x = -self.extent + (i as f64 + 0.5) * px;
        let y = -self.extent + (j as f64 + 0.5) * px;
        add(add(scale(u, x), scale(v, y)), scale(self.directions[k], CAMERA_DISTANCE - depth))
    }
}

/// Nearest-surface depth per pixel of one view, row-major, infinite where empty.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer {
    pub resolution: usize,
    pub depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.depth[j * self.resolution + i]
    }

    pub fn covered(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }
}

/// Rasterizes `mesh` into view `k`; triangles are two-sided.
pub fn render_view(mesh: &TriangleMesh, rig: &CameraRig, k: usize) -> DepthBuffer {
    let n = rig.resolution;
    let px = rig.pixel_size();
    let mut depth = vec![f64::INFINITY; n * n];
    let center = |i: usize| -rig.extent + (i as f64 + 0.5) * px;
    let first = |lo: f64| (((lo + rig.extent) / px - 0.5).ceil().max(0.0)) as usize;
    let last = |hi: f64| ((hi + rig.extent) / px - 0.5).floor().min(n as f64 - 1.0);
    for t in 0..mesh.triangles.len() {
        let c = mesh.corners(t).map(|p| rig.project(k, p));
        let area = (c[1].0 - c[0].0) * (c[2].1 - c[0].1) - (c[2].0 - c[0].0) * (c[1].1 - c[0].1);
        let span = (0..3)
            .map(|a| {
                let b = (a + 1) % 3;
                (c[a].0 - c[b].0).powi(2) + (c[a].1 - c[b].1).powi(2)
            })
            .fold(0.0, f64::max);
        // edge-on triangles give unstable barycentrics
        if area.abs() <= 1e-9 * span {
            continue;
        }
        let (xmin, xmax) = (c[0].0.min(c[1].0).min(c[2].0), c[0].0.max(c[1].0).max(c[2].0));
        let (ymin, ymax) = (c[0].1.min(c[1].1).min(c[2].1), c[0].1.max(c[1].1).max(c[2].1));
        let (hi_i, hi_j) = (last(xmax), last(ymax));
        if hi_i < 0.0 || hi_j < 0.0 {
            continue;
        }
        for j in first(ymin)..=hi_j as usize {
            let y = center(j);
            for i in first(xmin)..=hi_i as usize {
                let x = center(i);
                let w0 = ((c[1].0 - x) * (c[2].1 - y) - (c[2].0 - x) * (c[1].1 - y)) / area;
                let w1 = ((c[2].0 - x) * (c[0].1 - y) - (c[0].0 - x) * (c[2].1 - y)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * c[0].2 + w1 * c[1].2 + w2 * c[2].2;
                let cell = &mut depth[j * n + i];
                if z < *cell {
                    *cell = z;
                }
            }
        }
    }
    DepthBuffer { resolution: n, depth }
}

/// Back-projects every `stride`-th covered pixel of view `k`.
pub fn back_project(rig: &CameraRig, k: usize, buffer: &DepthBuffer, stride: usize) -> Vec<[f64; 3]> {
    let n = buffer.resolution;
    let mut out = Vec::new();
    for j in (0..n).step_by(stride.max(1)) {
        for i in (0..n).step_by(stride.max(1)) {
            let d = buffer.at(i, j);
            if d.is_finite() {
                out.push(rig.unproject(k, i, j, d));
            }
        }
    }
    out
}
