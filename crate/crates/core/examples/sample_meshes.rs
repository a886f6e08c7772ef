//! Random latents through a trained generator and Marching Cubes.
//!
//! `cargo run --release --example sample_meshes -- smoke_run/best.sgpc`

use std::fs::File;
use std::io::BufWriter;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::mesh::write_ply;
use sdfgan::metrics::{fit_sphere, sample_surface};
use sdfgan::surfacing::{marching_cubes, GeneratorSource};
use sdfgan::train::{load_generator, sample_latent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: sample_meshes <checkpoint.sgpc>  (train_smoke writes one)");
        std::process::exit(1);
    };
    let g = load_generator(path.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..4 {
        let z = sample_latent(g.config().latent_dim, &mut rng);
        let mesh = marching_cubes(&GeneratorSource::new(&g, z)?, 48);
        if mesh.is_empty() {
            println!("draw {i}: no surface");
            continue;
        }
        let cloud = sample_surface(&mesh, 2048, &mut rng)?;
        if let Some(fit) = fit_sphere(&cloud) {
            println!("draw {i}: {} triangles, sphere radius {:.3}, rms {:.4}", mesh.triangles.len(), fit.radius, fit.rms);
        }
        write_ply(BufWriter::new(File::create(format!("sample_{i}.ply"))?), &mesh)?;
    }
    Ok(())
}
