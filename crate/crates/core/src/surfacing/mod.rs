//! Surface extraction and rendering from any SDF source.

mod marching;
mod source;
mod tables;
mod trace;

use crate::critic::{CriticError, VoxelGrid};
use crate::generator::{raster_points, LatentCode};

pub use marching::{marching_cubes, marching_cubes_grid};
pub use source::{Analytic, GeneratorSource, GridSource, SdfSource};
pub use trace::{march, sphere_trace, Camera, RayHit, RayImage, TraceOptions};

/// A coarse raster, its trilinear upscale and a direct fine raster of the same field.
#[derive(Clone, Debug)]
pub struct UpscaleComparison {
    pub low: VoxelGrid,
    pub upscaled: VoxelGrid,
    pub direct: VoxelGrid,
}

pub fn grid_upscale_eval(source: &dyn SdfSource, low: usize, high: usize) -> Result<UpscaleComparison, CriticError> {
    let low_grid = VoxelGrid::new(low, source.eval_batch(&raster_points(low)))?;
    let fine = raster_points(high);
    let interp = GridSource::new(low_grid.clone());
    let upscaled = VoxelGrid::new(high, interp.eval_batch(&fine))?;
    let direct = VoxelGrid::new(high, source.eval_batch(&fine))?;
    Ok(UpscaleComparison {
        low: low_grid,
        upscaled,
        direct,
    })
}

/// `count` latents evenly spaced from `z0` to `z1`, both ends included.
pub fn interpolate_latents(z0: &LatentCode, z1: &LatentCode, count: usize) -> Vec<LatentCode> {
    assert!(count >= 2, "interpolation needs at least the two endpoints");
    (0..count)
        .map(|i| {
            if i == 0 {
                z0.clone()
            } else if i == count - 1 {
                z1.clone()
            } else {
                z0.lerp(z1, i as f64 / (count - 1) as f64)
            }
        })
        .collect()
}
