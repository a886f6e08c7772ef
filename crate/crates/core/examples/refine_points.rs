//! Projecting near-surface samples onto the generated surface.
//!
//! `cargo run --release --example refine_points -- [checkpoint.sgpc]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdfgan::generator::{refine_generated_samples, Generator, GeneratorConfig, RefinementConfig};
use sdfgan::train::{load_generator, sample_latent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = match std::env::args().nth(1) {
        Some(p) => load_generator(p.as_ref())?,
        None => Generator::new(GeneratorConfig::default(), &mut rng)?,
    };
    let z = sample_latent(g.config().latent_dim, &mut rng);
    let points: Vec<[f64; 3]> = (0..4096).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    for delta in [0.01, 0.1, 1.0] {
        let cfg = RefinementConfig { delta, sigma: 0.01 };
        let r = refine_generated_samples(&g, &z, &points, cfg, &mut rng)?;
        let added = &r.values[points.len()..];
        if added.is_empty() {
            println!("delta {delta}: no sample within the band");
            continue;
        }
        let mean_abs = added.iter().map(|v| v.abs()).sum::<f64>() / added.len() as f64;
        println!("delta {delta}: {} points added, mean |sdf| at added points {mean_abs:.5}", r.added);
    }
    Ok(())
}
