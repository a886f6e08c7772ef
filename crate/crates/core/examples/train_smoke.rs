//! A short training run on procedural spheres.
//!
//! `cargo run --release --example train_smoke -- [point|voxel|point-refined] [steps] [out dir]`

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::train::{procedural_shapes, train, DiscriminatorKind, Procedural, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let kind: DiscriminatorKind = args.next().as_deref().unwrap_or("point").parse()?;
    let steps: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let out = PathBuf::from(args.next().unwrap_or_else(|| "smoke_run".into()));

    let config = TrainConfig::from_kv(&format!(
        "discriminator = {}
         max_steps = {steps}
         batch_size = 8
         latent_dim = 32
         hidden_dim = 64
         layers = 8
         reinjection_layer = 4
         point_shared = 16,32,64,128
         point_dense = 64,32
         points_per_shape = 128
         learning_rate = 0.001
         seed = 1",
        kind.name()
    ))?;
    let shapes = procedural_shapes(Procedural::Spheres, 64, &mut ChaCha8Rng::seed_from_u64(1));
    let (trainer, records) = train(config, shapes, Some(&out))?;
    for r in records.iter().step_by((steps / 10).max(1)) {
        println!("{}", r.csv_row());
    }
    if let Some(best) = &trainer.state().best {
        println!("selected step {} (validation estimate {:.4})", best.step, best.wasserstein);
    }
    println!("checkpoints and metrics.csv in {}", out.display());
    Ok(())
}
