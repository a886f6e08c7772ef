//! A coarse raster upscaled by interpolation against a direct fine raster.
//!
//! `cargo run --release --example upscale_compare`

use sdfgan::metrics::{fit_sphere, sample_surface};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::surfacing::{grid_upscale_eval, marching_cubes_grid, Analytic};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sphere = Analytic::sphere(0.55);
    let c = grid_upscale_eval(&sphere, 8, 64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, grid) in [("low 8", &c.low), ("upscaled 64", &c.upscaled), ("direct 64", &c.direct)] {
        let mesh = marching_cubes_grid(grid);
        let fit = fit_sphere(&sample_surface(&mesh, 4096, &mut rng)?).ok_or("degenerate surface")?;
        println!(
            "{name:>12}: {:6} triangles, radius {:.4}, rms {:.5}",
            mesh.triangles.len(),
            fit.radius,
            fit.rms
        );
    }
    Ok(())
}
