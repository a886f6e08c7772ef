//! Fitting latents to two shapes and rendering the path between them.
//!
//! `cargo run --release --example interpolate_latents -- smoke_run/best.sgpc`

use std::fs::File;
use std::io::BufWriter;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::commands::analytic_sample_set;
use sdfgan::generator::{fit_latent, FitConfig, LatentCode};
use sdfgan::surfacing::{interpolate_latents, sphere_trace, Analytic, Camera, GeneratorSource, TraceOptions};
use sdfgan::train::load_generator;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: interpolate_latents <checkpoint.sgpc>");
        std::process::exit(1);
    };
    let g = load_generator(path.as_ref())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ends = Vec::new();
    for r in [0.3, 0.7] {
        let target = analytic_sample_set("target", &Analytic::sphere(r), 16384, &mut rng);
        let fit = fit_latent(&g, &target, LatentCode::zeros(g.config().latent_dim), FitConfig::default(), &mut rng)?;
        println!("radius {r}: final loss {:.5}", fit.losses.last().copied().unwrap_or(f64::NAN));
        ends.push(fit.latent);
    }
    for (i, z) in interpolate_latents(&ends[0], &ends[1], 5).into_iter().enumerate() {
        let img = sphere_trace(&GeneratorSource::new(&g, z)?, &Camera::default(), 96, 96, &TraceOptions::learned());
        img.write_ppm(BufWriter::new(File::create(format!("frame_{i}.ppm"))?))?;
    }
    println!("wrote frame_0.ppm .. frame_4.ppm");
    Ok(())
}
