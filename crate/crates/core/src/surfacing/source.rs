//! Things that can be queried for a signed distance.

use crate::critic::VoxelGrid;
use crate::generator::{Generator, GeneratorError, LatentCode};
use crate::mesh::{norm, scale, sub};

pub trait SdfSource {
    fn eval_batch(&self, points: &[[f64; 3]]) -> Vec<f64>;

    fn eval(&self, p: [f64; 3]) -> f64 {
        self.eval_batch(&[p])[0]
    }
}

/// Closed-form distance fields.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Analytic {
    Sphere { center: [f64; 3], radius: f64 },
    Box { center: [f64; 3], half: [f64; 3] },
    /// `normal . p = offset`, with a unit normal.
    Plane { normal: [f64; 3], offset: f64 },
}

impl Analytic {
    pub fn sphere(radius: f64) -> Self {
        Analytic::Sphere {
            center: [0.0; 3],
            radius,
        }
    }

    pub fn cube(half: f64) -> Self {
        Analytic::Box {
            center: [0.0; 3],
            half: [half; 3],
        }
    }

    pub fn plane(normal: [f64; 3], offset: f64) -> Self {
        let n = norm(normal);
        Analytic::Plane {
            normal: scale(normal, 1.0 / n),
            offset: offset / n,
        }
    }

    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            Analytic::Sphere { center, radius } => norm(sub(p, center)) - radius,
            Analytic::Box { center, half } => {
                let q: [f64; 3] = std::array::from_fn(|k| (p[k] - center[k]).abs() - half[k]);
                let outside = norm(q.map(|v| v.max(0.0)));
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            Analytic::Plane { normal, offset } => crate::mesh::dot(normal, p) - offset,
        }
    }

    /// Gradient of [`Analytic::sdf`]; unit length wherever it is defined.
    pub fn gradient(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            Analytic::Sphere { center, .. } => {
                let d = sub(p, center);
                let n = norm(d);
                if n == 0.0 {
                    [0.0; 3]
                } else {
                    scale(d, 1.0 / n)
                }
            }
            Analytic::Box { center, half } => {
                let d = sub(p, center);
                let q: [f64; 3] = std::array::from_fn(|k| d[k].abs() - half[k]);
                let sign = d.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
                if q.iter().any(|&v| v > 0.0) {
                    let m = q.map(|v| v.max(0.0));
                    let n = norm(m);
                    std::array::from_fn(|k| sign[k] * m[k] / n)
                } else {
                    let k = if q[0] >= q[1] && q[0] >= q[2] {
                        0
                    } else if q[1] >= q[2] {
                        1
                    } else {
                        2
                    };
                    let mut g = [0.0; 3];
                    g[k] = sign[k];
                    g
                }
            }
            Analytic::Plane { normal, .. } => normal,
        }
    }

    /// Closest surface point by one projection step.
    pub fn project(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.sdf(p);
        sub(p, scale(self.gradient(p), s))
    }
}

impl SdfSource for Analytic {
    fn eval_batch(&self, points: &[[f64; 3]]) -> Vec<f64> {
        points.iter().map(|&p| self.sdf(p)).collect()
    }

    fn eval(&self, p: [f64; 3]) -> f64 {
        self.sdf(p)
    }
}

/// Trilinear interpolation of a cell-centered raster over `[-1, 1]^3`; constant beyond the outer centers.
#[derive(Clone, Debug)]
pub struct GridSource {
    grid: VoxelGrid,
}

impl GridSource {
    pub fn new(grid: VoxelGrid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let r = self.grid.resolution();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let u = ((p[k] + 1.0) * r as f64 / 2.0 - 0.5).clamp(0.0, (r - 1) as f64);
            let i = (u.floor() as usize).min(r - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..8 {
            let o = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3).map(|k| if o[k] == 1 { frac[k] } else { 1.0 - frac[k] }).product();
            if w != 0.0 {
                acc += w * self.grid.at(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
            }
        }
        acc
    }
}

impl SdfSource for GridSource {
    fn eval_batch(&self, points: &[[f64; 3]]) -> Vec<f64> {
        points.iter().map(|&p| self.sample(p)).collect()
    }
}

/// The generator with a fixed latent.
#[derive(Clone, Debug)]
pub struct GeneratorSource<'a> {
    generator: &'a Generator,
    latent: LatentCode,
}

impl<'a> GeneratorSource<'a> {
    pub fn new(generator: &'a Generator, latent: LatentCode) -> Result<Self, GeneratorError> {
        generator.check_latent(&latent)?;
        Ok(Self { generator, latent })
    }
}

impl SdfSource for GeneratorSource<'_> {
    fn eval_batch(&self, points: &[[f64; 3]]) -> Vec<f64> {
        if points.is_empty() {
            return Vec::new();
        }
        self.generator
            .forward_batch(&self.latent, points)
            .expect("latent length checked at construction")
    }
}

impl<T: SdfSource + ?Sized> SdfSource for &T {
    fn eval_batch(&self, points: &[[f64; 3]]) -> Vec<f64> {
        (**self).eval_batch(points)
    }
}
