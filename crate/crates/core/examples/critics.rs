//! Scoring a voxel grid and a point set with freshly initialized critics.
//!
//! `cargo run --example critics`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::autodiff::{Tape, Tensor};
use sdfgan::critic::{GrowthStage, PointCritic, PointCriticConfig, VoxelCritic, VoxelCriticConfig};
use sdfgan::generator::raster_points;
use sdfgan::surfacing::{Analytic, SdfSource};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = Analytic::sphere(0.6);

    let stage = GrowthStage::first();
    let r = stage.resolution();
    let voxel = VoxelCritic::new(VoxelCriticConfig::default(), &mut rng)?;
    let mut tape = Tape::new();
    let bound = voxel.params().bind(&mut tape, false);
    let grid = tape.constant(Tensor::new(vec![1, 1, r, r, r], shape.eval_batch(&raster_points(r))));
    let s = voxel.score(&mut tape, &bound, grid, stage)?;
    println!("voxel critic on a {r}^3 sphere: {:.5}", tape.value(s).item());

    let point = PointCritic::new(PointCriticConfig::default(), &mut rng)?;
    let pts = raster_points(8);
    let rows: Vec<f64> = pts.iter().flat_map(|p| [p[0], p[1], p[2], shape.eval(*p)]).collect();
    let mut tape = Tape::new();
    let bound = point.params().bind(&mut tape, false);
    let x = tape.constant(Tensor::matrix(pts.len(), 4, rows));
    let s = point.score(&mut tape, &bound, x, &[0, pts.len()])?;
    println!("point critic on {} samples: {:.5}", pts.len(), tape.value(s).item());
    Ok(())
}
