//! Point-cloud evaluation of generated shape sets.

mod assignment;

use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::mesh::{add, dist2, scale, sub, TriangleMesh};
use crate::spatial::KdTree;

pub use assignment::{assignment_cost, auction, hungarian};

/// Default number of surface samples per cloud.
pub const CLOUD_SIZE: usize = 2048;

/// Default histogram resolution of [`jsd`].
pub const JSD_GRID: usize = 28;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("mesh has no area to sample")]
    EmptyMesh,
    #[error("point sets have sizes {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

pub type PointCloud = Vec<[f64; 3]>;

/// `n` points drawn area-uniformly over the triangles of `mesh`.
pub fn sample_surface(mesh: &TriangleMesh, n: usize, rng: &mut impl Rng) -> Result<PointCloud, MetricError> {
    let mut cum = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cum.push(total);
    }
    if !(total > 0.0) {
        return Err(MetricError::EmptyMesh);
    }
    Ok((0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let t = cum.partition_point(|&c| c <= target).min(cum.len() - 1);
            let [a, b, c] = mesh.corners(t);
            let (mut r1, mut r2) = (rng.random::<f64>(), rng.random::<f64>());
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            add(a, add(scale(sub(b, a), r1), scale(sub(c, a), r2)))
        })
        .collect())
}

fn mean_nearest(from: &[[f64; 3]], tree: &KdTree) -> f64 {
    from.iter().map(|p| tree.nearest(*p).expect("non-empty").1).sum::<f64>() / from.len() as f64
}

/// Symmetric mean of squared nearest-neighbour distances.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(mean_nearest(a, &KdTree::new(b)) + mean_nearest(b, &KdTree::new(a)))
}

fn distance_matrix(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
    a.iter().flat_map(|p| b.iter().map(move |q| dist2(*p, *q).sqrt())).collect()
}

/// Mean matched distance under the optimal bijection, solved exactly.
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = a.len();
    let cost = distance_matrix(a, b);
    Ok(assignment_cost(&cost, n, &hungarian(&cost, n)) / n as f64)
}

/// [`emd`] by auction; at most `final_eps` above the exact value.
pub fn emd_approx(a: &[[f64; 3]], b: &[[f64; 3]], final_eps: f64) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::SizeMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    let n = a.len();
    let cost = distance_matrix(a, b);
    Ok(assignment_cost(&cost, n, &auction(&cost, n, final_eps / n as f64)) / n as f64)
}

/// Normalized occupancy histogram of all points over an `r^3` grid on `[-1, 1]^3`.
pub fn occupancy(clouds: &[PointCloud], r: usize) -> Vec<f64> {
    let mut h = vec![0.0; r * r * r];
    let mut count = 0usize;
    let bin = |c: f64| (((c + 1.0) / 2.0 * r as f64).floor().max(0.0) as usize).min(r - 1);
    for p in clouds.iter().flatten() {
        h[(bin(p[2]) * r + bin(p[1])) * r + bin(p[0])] += 1.0;
        count += 1;
    }
    if count > 0 {
        for v in &mut h {
            *v /= count as f64;
        }
    }
    h
}

/// Jensen-Shannon divergence of two distributions, natural log.
pub fn jsd_distributions(p: &[f64], q: &[f64]) -> f64 {
    let kl_to_mid = |a: f64, b: f64| {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            a * (a / m).ln()
        } else {
            0.0
        }
    };
    let (mut kp, mut kq) = (0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        kp += kl_to_mid(a, b);
        kq += kl_to_mid(b, a);
    }
    0.5 * kp + 0.5 * kq
}

/// JSD between the pooled occupancy of two sets of clouds.
pub fn jsd(generated: &[PointCloud], reference: &[PointCloud], r: usize) -> Result<f64, MetricError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(jsd_distributions(&occupancy(generated, r), &occupancy(reference, r)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudDistance {
    Chamfer,
    Emd,
    /// Auction EMD within the given tolerance.
    EmdApprox,
}

fn cloud_distance(kind: CloudDistance, a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64, MetricError> {
    match kind {
        CloudDistance::Chamfer => chamfer(a, b),
        CloudDistance::Emd => emd(a, b),
        CloudDistance::EmdApprox => emd_approx(a, b, 1e-3),
    }
}

/// Minimum matching distance and coverage in percent.
pub fn mmd_cov(
    generated: &[PointCloud],
    reference: &[PointCloud],
    kind: CloudDistance,
) -> Result<(f64, f64), MetricError> {
    if generated.is_empty() || reference.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut d = Vec::with_capacity(generated.len() * reference.len());
    for g in generated {
        for r in reference {
            d.push(cloud_distance(kind, g, r)?);
        }
    }
    let nr = reference.len();
    let mmd = (0..nr)
        .map(|j| (0..generated.len()).map(|i| d[i * nr + j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / nr as f64;
    let mut covered = vec![false; nr];
    for i in 0..generated.len() {
        let row = &d[i * nr..(i + 1) * nr];
        let mut best = 0;
        for j in 1..nr {
            if row[j] < row[best] {
                best = j;
            }
        }
        covered[best] = true;
    }
    let cov = 100.0 * covered.iter().filter(|c| **c).count() as f64 / nr as f64;
    Ok((mmd, cov))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub jsd: f64,
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub jsd_grid: usize,
    /// Use the auction solver for EMD.
    pub approximate_emd: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            jsd_grid: JSD_GRID,
            approximate_emd: false,
        }
    }
}

/// All five metrics of `generated` against `reference`.
pub fn evaluate(generated: &[PointCloud], reference: &[PointCloud], cfg: &EvalConfig) -> Result<MetricReport, MetricError> {
    let (mmd_cd, cov_cd) = mmd_cov(generated, reference, CloudDistance::Chamfer)?;
    let emd_kind = if cfg.approximate_emd { CloudDistance::EmdApprox } else { CloudDistance::Emd };
    let (mmd_emd, cov_emd) = mmd_cov(generated, reference, emd_kind)?;
    Ok(MetricReport {
        jsd: jsd(generated, reference, cfg.jsd_grid)?,
        mmd_cd,
        mmd_emd,
        cov_cd,
        cov_emd,
    })
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "label,jsd,mmd_cd,mmd_emd,cov_cd,cov_emd";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{},{},{}",
            self.jsd, self.mmd_cd, self.mmd_emd, self.cov_cd, self.cov_emd
        )
    }

    /// Aligned text table with one row per labelled report.
    pub fn table(rows: &[(String, MetricReport)]) -> String {
        let w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<w$} {:>8} {:>8} {:>8} {:>7} {:>7}", "model", "JSD", "MMD-CD", "MMD-EMD", "COV-CD", "COV-EMD");
        for (l, r) in rows {
            let _ = writeln!(
                s,
                "{:<w$} {:>8.4} {:>8.4} {:>8.4} {:>7.1} {:>7.1}",
                l, r.jsd, r.mmd_cd, r.mmd_emd, r.cov_cd, r.cov_emd
            );
        }
        s
    }
}

/// Least-squares sphere through a point set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereFit {
    pub center: [f64; 3],
    pub radius: f64,
    /// Root mean square of the radial deviations.
    pub rms: f64,
}

/// Algebraic fit refined by Gauss-Newton on the geometric residuals.
pub fn fit_sphere(points: &[[f64; 3]]) -> Option<SphereFit> {
    if points.len() < 4 {
        return None;
    }
    // |p|^2 = 2 c.p + k, linear in (c, k)
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for p in points {
        let row = [2.0 * p[0], 2.0 * p[1], 2.0 * p[2], 1.0];
        let rhs = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        for i in 0..4 {
            atb[i] += row[i] * rhs;
            for j in 0..4 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let sol = solve4(ata, atb)?;
    let mut c = [sol[0], sol[1], sol[2]];
    let mut r = (sol[3] + c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).max(0.0).sqrt();
    for _ in 0..20 {
        let mut jtj = [[0.0; 4]; 4];
        let mut jtr = [0.0; 4];
        for p in points {
            let d = sub(*p, c);
            let len = dist2(*p, c).sqrt().max(1e-300);
            let res = len - r;
            let jac = [-d[0] / len, -d[1] / len, -d[2] / len, -1.0];
            for i in 0..4 {
                jtr[i] += jac[i] * res;
                for j in 0..4 {
                    jtj[i][j] += jac[i] * jac[j];
                }
            }
        }
        let Some(step) = solve4(jtj, jtr) else { break };
        for k in 0..3 {
            c[k] -= step[k];
        }
        r -= step[3];
        if step.iter().map(|s| s * s).sum::<f64>() < 1e-28 {
            break;
        }
    }
    let rms = (points.iter().map(|p| (dist2(*p, c).sqrt() - r).powi(2)).sum::<f64>() / points.len() as f64).sqrt();
    Some(SphereFit { center: c, radius: r, rms })
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..4 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..4 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some(std::array::from_fn(|i| b[i] / a[i][i]))
}
