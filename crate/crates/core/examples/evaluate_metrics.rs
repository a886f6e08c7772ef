//! Distribution metrics between two sets of surface clouds.
//!
//! `cargo run --release --example evaluate_metrics`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::metrics::{evaluate, sample_surface, EvalConfig, MetricReport, PointCloud};
use sdfgan::surfacing::{marching_cubes, Analytic};

fn clouds(radii: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<PointCloud>, Box<dyn std::error::Error>> {
    radii
        .iter()
        .map(|&r| Ok(sample_surface(&marching_cubes(&Analytic::sphere(r), 32), 512, rng)?))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let reference = clouds(&[0.3, 0.4, 0.5, 0.6], &mut rng)?;
    let close = clouds(&[0.32, 0.41, 0.52, 0.58], &mut rng)?;
    let collapsed = clouds(&[0.45, 0.45, 0.45, 0.45], &mut rng)?;
    let cfg = EvalConfig::default();
    let rows = vec![
        ("close".to_string(), evaluate(&close, &reference, &cfg)?),
        ("collapsed".to_string(), evaluate(&collapsed, &reference, &cfg)?),
    ];
    print!("{}", MetricReport::table(&rows));
    Ok(())
}
