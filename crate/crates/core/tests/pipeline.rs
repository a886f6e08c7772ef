//! The command line end to end on small inputs.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use sdfgan::commands::main_with_args;
use sdfgan::mesh::{icosphere, read_ply, unit_cube, write_obj};
use sdfgan::mesh2sdf::read_dataset;

const TINY: &str = "\
discriminator = point
latent_dim = 4
hidden_dim = 16
layers = 3
reinjection_layer = 1
batch_size = 4
critic_steps_per_gen_step = 2
point_shared = 8,16
point_dense = 8
points_per_shape = 32
learning_rate = 0.001
";

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("sdfgan").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn preprocess_writes_dataset_and_rejection_log() {
    let dir = tempfile::tempdir().unwrap();
    let meshes = dir.path().join("meshes");
    fs::create_dir(&meshes).unwrap();
    write_obj(File::create(meshes.join("ball.obj")).unwrap(), &icosphere(3, 0.7)).unwrap();
    write_obj(File::create(meshes.join("cube.obj")).unwrap(), &unit_cube()).unwrap();
    fs::write(meshes.join("junk.obj"), "v 0 0\nf 1 2 9\n").unwrap();
    let out = dir.path().join("data.sdfd");
    let code = run(&[
        "preprocess",
        "--input",
        s(&meshes),
        "--output",
        s(&out),
        "--uniform",
        "2000",
        "--near",
        "200",
        "--resolution",
        "256",
        "--views",
        "20",
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0);
    let sets = read_dataset(BufReader::new(File::open(&out).unwrap())).unwrap();
    let ids: Vec<&str> = sets.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["ball", "cube"]);
    for set in &sets {
        assert!(set.len() >= 2200);
    }
    let log = fs::read_to_string(dir.path().join("data.rejections.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("id,reason,detail"));
    assert!(lines.next().unwrap().starts_with("junk,unreadable,"));
    let m = manifest(&dir.path().join("data.sdfd.manifest.json"));
    assert_eq!(m["command"], "preprocess");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);

    // empty input directory is a data error
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(run(&["preprocess", "--input", s(&empty), "--output", s(&out)]), 2);
    // two shapes cannot be split three ways
    let train_out = dir.path().join("run");
    assert_eq!(run(&["train", "--dataset", s(&out), "--steps", "1", "--out", s(&train_out)]), 2);
}

#[test]
fn train_then_use_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let run_dir = dir.path().join("run");
    let code = run(&[
        "train",
        "--procedural",
        "spheres",
        "--count",
        "20",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--steps",
        "12",
        "--out",
        s(&run_dir),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    for f in ["checkpoint.sgpc", "best.sgpc", "config.txt", "manifest.json"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    assert_eq!(manifest(&run_dir.join("manifest.json"))["seed"], 5);
    let saved = fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(saved.contains("hidden_dim = 16"));

    // resuming continues the step count
    let resumed = dir.path().join("resumed");
    let code = run(&[
        "train",
        "--procedural",
        "spheres",
        "--count",
        "20",
        "--config",
        s(&cfg),
        "--seed",
        "5",
        "--steps",
        "15",
        "--resume",
        s(&run_dir.join("checkpoint.sgpc")),
        "--out",
        s(&resumed),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(resumed.join("metrics.csv")).unwrap();
    let steps: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(steps, ["12", "13", "14"]);

    let ckpt = run_dir.join("best.sgpc");
    let samples = dir.path().join("samples");
    let code = run(&[
        "sample", "--checkpoint", s(&ckpt), "--count", "3", "--resolution", "16", "--out", s(&samples),
    ]);
    assert_eq!(code, 0);
    let m = manifest(&samples.join("manifest.json"));
    let written = m["outputs"].as_array().unwrap().len();
    let skipped = m["notes"].as_array().unwrap().len();
    assert_eq!(written + skipped, 3);
    for f in fs::read_dir(&samples).unwrap() {
        let p = f.unwrap().path();
        if p.extension().is_some_and(|e| e == "ply") {
            let mesh = read_ply(BufReader::new(File::open(&p).unwrap())).unwrap();
            assert!(!mesh.is_empty());
        }
    }

    let image = dir.path().join("view.ppm");
    let code = run(&[
        "render", "--checkpoint", s(&ckpt), "--width", "24", "--height", "16", "--out", s(&image),
    ]);
    assert_eq!(code, 0);
    let bytes = fs::read(&image).unwrap();
    assert!(bytes.starts_with(b"P6\n24 16\n255\n"));
    assert_eq!(bytes.len(), b"P6\n24 16\n255\n".len() + 24 * 16 * 3);
    assert!(dir.path().join("view.ppm.manifest.json").exists());

    let up = dir.path().join("upscale");
    let code = run(&[
        "upscale-demo", "--checkpoint", s(&ckpt), "--low", "4", "--high", "16", "--out", s(&up),
    ]);
    assert_eq!(code, 0);
    for f in ["low_4.ply", "upscaled_16.ply", "direct_16.ply"] {
        assert!(up.join(f).exists(), "{f}");
    }

    let frames = dir.path().join("frames");
    let code = run(&[
        "interpolate",
        "--checkpoint",
        s(&ckpt),
        "--procedural",
        "spheres",
        "--count",
        "20",
        "--shape-a",
        "sphere0000",
        "--shape-b",
        "sphere0001",
        "--frames",
        "3",
        "--size",
        "8",
        "--fit-steps",
        "5",
        "--out",
        s(&frames),
    ]);
    assert_eq!(code, 0);
    for i in 0..3 {
        assert!(frames.join(format!("frame_{i:02}.ppm")).exists());
    }
    let code = run(&[
        "interpolate", "--checkpoint", s(&ckpt), "--procedural", "spheres", "--count", "20", "--shape-a",
        "nope", "--shape-b", "sphere0001", "--out", s(&frames),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn evaluate_mesh_directory() {
    let dir = tempfile::tempdir().unwrap();
    let meshes = dir.path().join("gen");
    fs::create_dir(&meshes).unwrap();
    for (i, r) in [0.4, 0.6].iter().enumerate() {
        write_obj(File::create(meshes.join(format!("g{i}.obj"))).unwrap(), &icosphere(2, *r)).unwrap();
    }
    let out = dir.path().join("eval.csv");
    let code = run(&[
        "evaluate",
        "--meshes",
        s(&meshes),
        "--procedural",
        "spheres",
        "--count",
        "3",
        "--resolution",
        "16",
        "--points",
        "128",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), row.len());
    for v in &row[1..] {
        assert!(v.parse::<f64>().unwrap().is_finite(), "{v}");
    }
    let m = manifest(&dir.path().join("eval.csv.manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_for_bad_invocations() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--procedural", "spheres"]), 1);
    assert_eq!(run(&["render", "--checkpoint", "/no/such.sgpc", "--out", "/tmp/x.ppm"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "hidden_dim = many\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        run(&["train", "--procedural", "spheres", "--config", s(&cfg), "--out", s(&out)]),
        1
    );
}
