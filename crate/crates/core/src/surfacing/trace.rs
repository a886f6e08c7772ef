//! Sphere tracing with Lambertian shading.
//!
//! All rays march in lockstep so each iteration is one batched field query.

use std::io::{self, Write};

use super::source::SdfSource;
use crate::mesh::{add, cross, dot, norm, scale, sub};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceOptions {
    /// Multiplier on each step; below 1 for fields that may overestimate distance.
    pub damping: f64,
    pub hit_eps: f64,
    pub max_steps: usize,
    /// Smallest step taken.
    pub min_step: f64,
    /// Central-difference step for normals.
    pub normal_step: f64,
    /// Direction the light travels.
    pub light: [f64; 3],
    pub ambient: f64,
}

impl TraceOptions {
    /// Settings for exact distance fields.
    pub fn exact() -> Self {
        Self {
            damping: 1.0,
            hit_eps: 1e-3,
            max_steps: 200,
            min_step: 1e-4,
            normal_step: 1e-3,
            light: [-0.4, -0.6, -0.7],
            ambient: 0.1,
        }
    }

    /// Settings for learned fields.
    pub fn learned() -> Self {
        Self {
            damping: 0.8,
            ..Self::exact()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub hit: bool,
    pub t: f64,
    pub steps: usize,
    /// Smallest field value seen before the march stopped.
    pub min_value: f64,
}

/// Pinhole camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov_y: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            eye: [1.6, 1.2, 2.2],
            target: [0.0; 3],
            up: [0.0, 1.0, 0.0],
            fov_y: 40.0,
        }
    }
}

impl Camera {
    /// Unit ray direction through pixel `(x, y)`, row 0 at the top.
    pub fn ray(&self, x: usize, y: usize, width: usize, height: usize) -> [f64; 3] {
        let f = sub(self.target, self.eye);
        let f = scale(f, 1.0 / norm(f));
        let r = cross(f, self.up);
        let r = scale(r, 1.0 / norm(r));
        let u = cross(r, f);
        let h = (self.fov_y.to_radians() / 2.0).tan();
        let aspect = width as f64 / height as f64;
        let sx = ((x as f64 + 0.5) / width as f64 * 2.0 - 1.0) * h * aspect;
        let sy = (1.0 - (y as f64 + 0.5) / height as f64 * 2.0) * h;
        let d = add(f, add(scale(r, sx), scale(u, sy)));
        scale(d, 1.0 / norm(d))
    }
}

/// Shaded intensities in `[0, 1]`, `None` for background.
#[derive(Clone, Debug, PartialEq)]
pub struct RayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Option<f64>>,
}

impl RayImage {
    pub fn hit_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }

    /// Binary PPM; background is white, surfaces are shaded in a warm gray.
    pub fn write_ppm(&self, mut w: impl Write) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.pixels.len() * 3);
        for p in &self.pixels {
            match p {
                None => bytes.extend([255, 255, 255]),
                Some(i) => {
                    let v = i.clamp(0.0, 1.0);
                    bytes.extend([(230.0 * v) as u8, (215.0 * v) as u8, (200.0 * v) as u8]);
                }
            }
        }
        w.write_all(&bytes)
    }
}

/// Entry and exit distances of a ray through `[-1, 1]^3`.
fn clip_to_cube(o: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-300 {
            if o[k].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let a = (-1.0 - o[k]) / d[k];
        let b = (1.0 - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Marches every ray inside the unit cube.
pub fn march(source: &dyn SdfSource, origins: &[[f64; 3]], dirs: &[[f64; 3]], opts: &TraceOptions) -> Vec<RayHit> {
    let n = origins.len();
    let mut hits = vec![
        RayHit {
            hit: false,
            t: 0.0,
            steps: 0,
            min_value: f64::INFINITY,
        };
        n
    ];
    let mut t_max = vec![0.0; n];
    let mut active = Vec::new();
    for i in 0..n {
        if let Some((t0, t1)) = clip_to_cube(origins[i], dirs[i]) {
            hits[i].t = t0;
            t_max[i] = t1;
            active.push(i);
        }
    }
    while !active.is_empty() {
        let pts: Vec<[f64; 3]> = active.iter().map(|&i| add(origins[i], scale(dirs[i], hits[i].t))).collect();
        let vals = source.eval_batch(&pts);
        let mut still = Vec::with_capacity(active.len());
        for (&i, &s) in active.iter().zip(&vals) {
            let h = &mut hits[i];
            h.steps += 1;
            h.min_value = h.min_value.min(s);
            if s < opts.hit_eps {
                h.hit = true;
                continue;
            }
            h.t += (opts.damping * s).max(opts.min_step);
            if h.t <= t_max[i] && h.steps < opts.max_steps {
                still.push(i);
            }
        }
        active = still;
    }
    hits
}

/// Renders `source` as seen from `camera`.
pub fn sphere_trace(source: &dyn SdfSource, camera: &Camera, width: usize, height: usize, opts: &TraceOptions) -> RayImage {
    assert!(width > 0 && height > 0, "image dimensions must be positive");
    let dirs: Vec<[f64; 3]> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| camera.ray(x, y, width, height))
        .collect();
    let origins = vec![camera.eye; dirs.len()];
    let hits = march(source, &origins, &dirs, opts);
    let hit_idx: Vec<usize> = (0..hits.len()).filter(|&i| hits[i].hit).collect();
    let h = opts.normal_step;
    let mut probes = Vec::with_capacity(hit_idx.len() * 6);
    for &i in &hit_idx {
        let p = add(origins[i], scale(dirs[i], hits[i].t));
        for k in 0..3 {
            let mut a = p;
            let mut b = p;
            a[k] += h;
            b[k] -= h;
            probes.push(a);
            probes.push(b);
        }
    }
    let vals = source.eval_batch(&probes);
    let light = scale(opts.light, -1.0 / norm(opts.light));
    let mut pixels = vec![None; hits.len()];
    for (n, &i) in hit_idx.iter().enumerate() {
        let v = &vals[6 * n..6 * n + 6];
        let g = [v[0] - v[1], v[2] - v[3], v[4] - v[5]];
        let len = norm(g);
        let lambert = if len > 0.0 { dot(scale(g, 1.0 / len), light).max(0.0) } else { 0.0 };
        pixels[i] = Some(opts.ambient + (1.0 - opts.ambient) * lambert);
    }
    RayImage { width, height, pixels }
}
