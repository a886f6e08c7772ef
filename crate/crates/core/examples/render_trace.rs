//! Sphere tracing analytic fields to PPM images.
//!
//! `cargo run --release --example render_trace`

use std::fs::File;
use std::io::BufWriter;

use sdfgan::surfacing::{sphere_trace, Analytic, Camera, TraceOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let shapes = [
        ("sphere", Analytic::sphere(0.7)),
        ("box", Analytic::Box { center: [0.0; 3], half: [0.5, 0.3, 0.6] }),
    ];
    for (name, shape) in shapes {
        let img = sphere_trace(&shape, &Camera::default(), 160, 120, &TraceOptions::exact());
        let path = format!("{name}.ppm");
        img.write_ppm(BufWriter::new(File::create(&path)?))?;
        println!("{path}: {} of {} pixels hit", img.hit_count(), 160 * 120);
    }
    Ok(())
}
