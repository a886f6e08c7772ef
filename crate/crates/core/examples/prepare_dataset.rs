//! Meshes to signed distance samples: normalize, render depth views, sample, filter.
//!
//! `cargo run --release --example prepare_dataset -- shapes.sdfd`

use std::fs::File;
use std::io::BufWriter;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdfgan::mesh::{icosphere, unit_cube};
use sdfgan::mesh2sdf::{filter_shape, prepare_mesh, write_dataset, CameraRig, FilterConfig, SampleOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "shapes.sdfd".into());
    let rig = CameraRig::fibonacci(50, 256);
    let opts = SampleOptions {
        n_uniform: 32 * 32 * 32,
        n_near: 4096,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut accepted = Vec::new();
    for (id, mesh) in [("sphere", icosphere(3, 1.0)), ("cube", unit_cube())] {
        let set = prepare_mesh(id, &mesh, &rig, opts, &mut rng)?;
        let verdict = filter_shape(&set, &FilterConfig::default(), &mut rng);
        println!(
            "{id}: {} samples, {:.1}% inside, {verdict:?}",
            set.len(),
            100.0 * set.interior_fraction()
        );
        if verdict.accepted() {
            accepted.push(set);
        }
    }
    write_dataset(BufWriter::new(File::create(&out)?), &accepted)?;
    println!("wrote {} shapes to {out}", accepted.len());
    Ok(())
}
