//! The `sdfgan` command line.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::critic::VoxelGrid;
use crate::generator::{fit_latent, FitConfig, Generator, LatentCode};
use crate::mesh::{read_obj, write_ply, TriangleMesh};
use crate::mesh2sdf::{
    filter_shape, normalize_mesh, read_dataset, render_depth, build_sample_set, write_dataset, CameraRig,
    FilterConfig, Provenance, SampleOptions, SdfSampleSet, Verdict,
};
use crate::metrics::{evaluate, sample_surface, EvalConfig, MetricReport, PointCloud, CLOUD_SIZE};
use crate::surfacing::{
    grid_upscale_eval, interpolate_latents, marching_cubes, marching_cubes_grid, sphere_trace, Analytic, Camera,
    GeneratorSource, GridSource, TraceOptions,
};
use crate::train::{
    load_generator, procedural_shapes, sample_latent, Checkpoint, DiscriminatorKind, Procedural, RealShape,
    SampledShape, TrainConfig, TrainError, Trainer,
};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 1,
            CommandError::Data(_) => 2,
            CommandError::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Data(e.to_string())
    }
}

impl From<TrainError> for CommandError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CommandError::Numeric(e.to_string()),
            TrainError::Config(_) => CommandError::Usage(e.to_string()),
            _ => CommandError::Data(e.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CommandError {
    CommandError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "sdfgan", version, about = "Generate shapes as continuous signed distance fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a directory of OBJ meshes into an SDF dataset
    Preprocess(PreprocessArgs),
    /// Train a generator against a voxel or point critic
    Train(TrainArgs),
    /// Extract meshes for random latent codes
    Sample(SampleArgs),
    /// Fit two shapes and render the latent path between them
    Interpolate(InterpolateArgs),
    /// Sphere-trace one generated shape into a PPM image
    Render(RenderArgs),
    /// Compare low resolution, trilinear upscaling and direct evaluation
    UpscaleDemo(UpscaleArgs),
    /// Score generated shapes against a reference set
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory of .obj files
    #[arg(long)]
    pub input: PathBuf,
    /// Output dataset file
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 64 * 64 * 64)]
    pub uniform: usize,
    #[arg(long, default_value_t = 16384)]
    pub near: usize,
    /// Depth buffer resolution
    #[arg(long, default_value_t = 1024)]
    pub resolution: usize,
    #[arg(long, default_value_t = 50)]
    pub views: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Where training shapes come from.
#[derive(Debug, Args, Clone)]
pub struct ShapeSource {
    /// Dataset file written by `preprocess`
    #[arg(long, conflicts_with = "procedural")]
    pub dataset: Option<PathBuf>,
    /// Built-in analytic shapes: spheres, boxes or mixed
    #[arg(long)]
    pub procedural: Option<Procedural>,
    /// Number of procedural shapes
    #[arg(long, default_value_t = 64)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub shapes: ShapeSource,
    /// key = value training config
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub discriminator: Option<DiscriminatorKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a checkpoint written by an earlier run
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub shapes: ShapeSource,
    #[arg(long)]
    pub shape_a: String,
    #[arg(long)]
    pub shape_b: String,
    #[arg(long, default_value_t = 5)]
    pub frames: usize,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    #[arg(long, default_value_t = 1000)]
    pub fit_steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Output .ppm file
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct UpscaleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub low: usize,
    #[arg(long, default_value_t = 128)]
    pub high: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generator to sample shapes from
    #[arg(long, conflicts_with = "meshes")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of generated .ply or .obj meshes
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    #[command(flatten)]
    pub reference: ShapeSource,
    /// Generated shapes drawn from a checkpoint
    #[arg(long, default_value_t = 16)]
    pub generated: usize,
    /// Marching Cubes resolution for both sides
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = CLOUD_SIZE)]
    pub points: usize,
    /// Auction solver instead of the exact assignment for EMD
    #[arg(long)]
    pub approximate_emd: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV file; the text table goes to stdout
    #[arg(long)]
    pub out: PathBuf,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub notes: Vec<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    fn new(command: &str, seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            config: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            seed,
            started_unix: now(),
            finished_unix: 0,
            notes: Vec::new(),
        }
    }

    fn write(mut self, path: &Path) -> Result<(), CommandError> {
        self.finished_unix = now();
        let text = serde_json::to_string_pretty(&self).map_err(data)?;
        fs::write(path, text)?;
        Ok(())
    }
}

/// Manifest path for an output file or directory.
fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.json")
    } else {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Preprocess(a) => preprocess(&a),
        Command::Train(a) => train(&a),
        Command::Sample(a) => sample(&a),
        Command::Interpolate(a) => interpolate(&a),
        Command::Render(a) => render(&a),
        Command::UpscaleDemo(a) => upscale_demo(&a),
        Command::Evaluate(a) => evaluate_cmd(&a),
    }
}

fn obj_files(dir: &Path) -> Result<Vec<PathBuf>, CommandError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CommandError::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .collect();
    files.sort();
    Ok(files)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<(), CommandError> {
    let mut manifest = RunManifest::new("preprocess", Some(a.seed));
    let files = obj_files(&a.input)?;
    if files.is_empty() {
        return Err(CommandError::Data(format!("no .obj files in {}", a.input.display())));
    }
    let mut rig = CameraRig::fibonacci(a.views, a.resolution);
    rig.cloud_stride = (a.resolution / 256).max(1);
    let opts = SampleOptions {
        n_uniform: a.uniform,
        n_near: a.near,
    };
    let mut accepted = Vec::new();
    let mut log = String::new();
    let mut failures = 0;
    for (i, path) in files.iter().enumerate() {
        let id = path.file_stem().map_or_else(|| format!("shape{i}"), |s| s.to_string_lossy().into_owned());
        manifest.inputs.push(path.clone());
        let mesh = match File::open(path).map_err(data).and_then(|f| read_obj(BufReader::new(f)).map_err(data)) {
            Ok(m) => m,
            Err(e) => {
                failures += 1;
                log.push_str(&format!("{id},unreadable,{e}\n"));
                continue;
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(i as u64);
        let set = match normalize_mesh(&mesh.cleaned())
            .and_then(|m| render_depth(&m, &rig))
            .map(|scan| build_sample_set(&id, &scan, opts, &mut rng))
        {
            Ok(s) => s,
            Err(e) => {
                failures += 1;
                log.push_str(&format!("{id},unreadable,{e}\n"));
                continue;
            }
        };
        match filter_shape(&set, &FilterConfig::default(), &mut rng) {
            Verdict::Accept => accepted.push(set),
            Verdict::Interior { fraction } => log.push_str(&format!("{id},interior,{fraction}\n")),
            Verdict::Discontinuous { violations, pairs } => {
                log.push_str(&format!("{id},discontinuous,{violations}/{pairs}\n"))
            }
        }
    }
    if failures == files.len() {
        return Err(CommandError::Data("no mesh could be read".into()));
    }
    let mut w = BufWriter::new(File::create(&a.output)?);
    write_dataset(&mut w, &accepted).map_err(data)?;
    w.flush()?;
    let log_path = a.output.with_extension("rejections.csv");
    fs::write(&log_path, format!("id,reason,detail\n{log}"))?;
    println!("{} accepted, {} rejected", accepted.len(), files.len() - accepted.len());
    manifest.outputs = vec![a.output.clone(), log_path];
    manifest.write(&manifest_path(&a.output))
}

/// Real shapes from a dataset file or the procedural generator.
pub fn load_shapes(src: &ShapeSource, seed: u64) -> Result<Vec<RealShape>, CommandError> {
    match (&src.dataset, src.procedural) {
        (Some(path), _) => {
            let sets = read_dataset(BufReader::new(File::open(path)?)).map_err(data)?;
            sets.into_iter()
                .map(|s| Ok(RealShape::Sampled(SampledShape::new(s)?)))
                .collect::<Result<_, TrainError>>()
                .map_err(Into::into)
        }
        (None, Some(kind)) => Ok(procedural_shapes(kind, src.count, &mut ChaCha8Rng::seed_from_u64(seed))),
        (None, None) => Err(CommandError::Usage("give --dataset or --procedural".into())),
    }
}

pub fn train(a: &TrainArgs) -> Result<(), CommandError> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_kv(&fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(k) = a.discriminator {
        config.discriminator = k;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.steps {
        config.max_steps = Some(n);
    }
    config.validate()?;
    let mut manifest = RunManifest::new("train", Some(config.seed));
    manifest.config = a.config.clone();
    manifest.inputs.extend(a.shapes.dataset.clone());
    let shapes = load_shapes(&a.shapes, config.seed)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            manifest.inputs.push(p.clone());
            Trainer::resume(config, shapes, Checkpoint::load(p)?)?
        }
        None => Trainer::new(config, shapes)?,
    };
    let records = trainer.run(Some(&a.out))?;
    if let Some(last) = records.last() {
        println!(
            "step {} critic {:.4} gp {:.4}",
            last.step, last.critic.loss, last.critic.gp
        );
    }
    if let Some(b) = &trainer.state().best {
        println!("selected step {} with validation estimate {:.4}", b.step, b.wasserstein);
    }
    manifest.outputs = ["metrics.csv", "checkpoint.sgpc", "best.sgpc", "config.txt"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    manifest.write(&a.out.join("manifest.json"))
}

fn load_model(path: &Path) -> Result<Generator, CommandError> {
    if !path.exists() {
        return Err(CommandError::Data(format!("checkpoint {} not found", path.display())));
    }
    Ok(load_generator(path)?)
}

pub fn sample(a: &SampleArgs) -> Result<(), CommandError> {
    let g = load_model(&a.checkpoint)?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = RunManifest::new("sample", Some(a.seed));
    manifest.inputs.push(a.checkpoint.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    for i in 0..a.count {
        let z = sample_latent(g.config().latent_dim, &mut rng);
        let mesh = marching_cubes(&GeneratorSource::new(&g, z).map_err(data)?, a.resolution);
        if mesh.is_empty() {
            eprintln!("warning: draw {i} has no zero crossing at resolution {}; skipped", a.resolution);
            manifest.notes.push(format!("draw {i} empty"));
            continue;
        }
        let path = a.out.join(format!("sample_{i:03}.ply"));
        let mut w = BufWriter::new(File::create(&path)?);
        write_ply(&mut w, &mesh)?;
        w.flush()?;
        manifest.outputs.push(path);
    }
    manifest.write(&a.out.join("manifest.json"))
}

/// Uniform samples of an analytic field, as stored for a preprocessed shape.
pub fn analytic_sample_set(id: &str, field: &Analytic, n: usize, rng: &mut impl Rng) -> SdfSampleSet {
    let mut set = SdfSampleSet::new(id);
    for _ in 0..n {
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        set.push(p, field.sdf(p), Provenance::Uniform);
    }
    set
}

fn find_shape(shapes: &[RealShape], id: &str, rng: &mut impl Rng) -> Result<SdfSampleSet, CommandError> {
    let s = shapes
        .iter()
        .find(|s| s.id() == id)
        .ok_or_else(|| CommandError::Data(format!("shape `{id}` not in the dataset")))?;
    Ok(match s {
        RealShape::Analytic { id, field } => analytic_sample_set(id, field, 32768, rng),
        RealShape::Sampled(s) => s.set().clone(),
    })
}

fn write_image(img: &crate::surfacing::RayImage, path: &Path) -> Result<(), CommandError> {
    let mut w = BufWriter::new(File::create(path)?);
    img.write_ppm(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn interpolate(a: &InterpolateArgs) -> Result<(), CommandError> {
    if a.frames < 2 {
        return Err(CommandError::Usage("--frames must be at least 2".into()));
    }
    let g = load_model(&a.checkpoint)?;
    let shapes = load_shapes(&a.shapes, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let cfg = FitConfig {
        steps: a.fit_steps,
        ..FitConfig::default()
    };
    let mut ends = Vec::new();
    for id in [&a.shape_a, &a.shape_b] {
        let target = find_shape(&shapes, id, &mut rng)?;
        let fit = fit_latent(&g, &target, LatentCode::zeros(g.config().latent_dim), cfg, &mut rng).map_err(data)?;
        if fit.aborted {
            return Err(CommandError::Numeric(format!(
                "fitting `{id}` diverged after {} steps (last losses {:?})",
                fit.losses.len(),
                &fit.losses[fit.losses.len().saturating_sub(3)..]
            )));
        }
        println!("fitted {id}: mean abs error {:.5}", fit.losses.last().copied().unwrap_or(f64::NAN));
        ends.push(fit.latent);
    }
    fs::create_dir_all(&a.out)?;
    let mut manifest = RunManifest::new("interpolate", Some(a.seed));
    manifest.inputs.push(a.checkpoint.clone());
    manifest.inputs.extend(a.shapes.dataset.clone());
    for (i, z) in interpolate_latents(&ends[0], &ends[1], a.frames).into_iter().enumerate() {
        let src = GeneratorSource::new(&g, z).map_err(data)?;
        let img = sphere_trace(&src, &Camera::default(), a.size, a.size, &TraceOptions::learned());
        let path = a.out.join(format!("frame_{i:02}.ppm"));
        write_image(&img, &path)?;
        manifest.outputs.push(path);
    }
    manifest.write(&a.out.join("manifest.json"))
}

pub fn render(a: &RenderArgs) -> Result<(), CommandError> {
    let g = load_model(&a.checkpoint)?;
    let z = sample_latent(g.config().latent_dim, &mut ChaCha8Rng::seed_from_u64(a.seed));
    let src = GeneratorSource::new(&g, z).map_err(data)?;
    let img = sphere_trace(&src, &Camera::default(), a.width, a.height, &TraceOptions::learned());
    write_image(&img, &a.out)?;
    println!("{} of {} pixels hit the surface", img.hit_count(), a.width * a.height);
    let mut manifest = RunManifest::new("render", Some(a.seed));
    manifest.inputs.push(a.checkpoint.clone());
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path(&a.out))
}

fn write_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), CommandError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, mesh)?;
    w.flush()?;
    Ok(())
}

pub fn upscale_demo(a: &UpscaleArgs) -> Result<(), CommandError> {
    if a.low < 2 || a.high < 2 {
        return Err(CommandError::Usage("resolutions must be at least 2".into()));
    }
    let g = load_model(&a.checkpoint)?;
    let z = sample_latent(g.config().latent_dim, &mut ChaCha8Rng::seed_from_u64(a.seed));
    let src = GeneratorSource::new(&g, z).map_err(data)?;
    let c = grid_upscale_eval(&src, a.low, a.high).map_err(data)?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = RunManifest::new("upscale-demo", Some(a.seed));
    manifest.inputs.push(a.checkpoint.clone());
    for (name, grid) in [("low", &c.low), ("upscaled", &c.upscaled), ("direct", &c.direct)] {
        let mesh = marching_cubes_grid(grid);
        let path = a.out.join(format!("{name}_{}.ply", grid.resolution()));
        write_mesh(&mesh, &path)?;
        println!("{name}: {} triangles", mesh.triangles.len());
        manifest.outputs.push(path);
    }
    manifest.write(&a.out.join("manifest.json"))
}

fn read_mesh_file(path: &Path) -> Result<TriangleMesh, CommandError> {
    let r = BufReader::new(File::open(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => crate::mesh::read_ply(r).map_err(data),
        _ => read_obj(r).map_err(data),
    }
}

/// Surface cloud of a reference shape, via Marching Cubes over its field.
fn reference_cloud(shape: &RealShape, r: usize, points: usize, rng: &mut impl Rng) -> Result<PointCloud, CommandError> {
    let mesh = match shape {
        RealShape::Analytic { field, .. } => marching_cubes(field, r),
        RealShape::Sampled(_) => {
            let grid = VoxelGrid::new(r, shape.raster(r)).map_err(data)?;
            marching_cubes(&GridSource::new(grid), r)
        }
    };
    sample_surface(&mesh, points, rng).map_err(|e| CommandError::Data(format!("shape `{}`: {e}", shape.id())))
}

pub fn evaluate_cmd(a: &EvaluateArgs) -> Result<(), CommandError> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut manifest = RunManifest::new("evaluate", Some(a.seed));
    let mut generated = Vec::new();
    match (&a.checkpoint, &a.meshes) {
        (Some(ckpt), _) => {
            let g = load_model(ckpt)?;
            manifest.inputs.push(ckpt.clone());
            for i in 0..a.generated {
                let z = sample_latent(g.config().latent_dim, &mut rng);
                let mesh = marching_cubes(&GeneratorSource::new(&g, z).map_err(data)?, a.resolution);
                match sample_surface(&mesh, a.points, &mut rng) {
                    Ok(c) => generated.push(c),
                    Err(_) => manifest.notes.push(format!("draw {i} empty")),
                }
            }
        }
        (None, Some(dir)) => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ply" || x == "obj"))
                .collect();
            files.sort();
            for f in files {
                generated.push(sample_surface(&read_mesh_file(&f)?, a.points, &mut rng).map_err(data)?);
                manifest.inputs.push(f);
            }
        }
        (None, None) => return Err(CommandError::Usage("give --checkpoint or --meshes".into())),
    }
    let shapes = load_shapes(&a.reference, a.seed)?;
    manifest.inputs.extend(a.reference.dataset.clone());
    let reference: Vec<PointCloud> = shapes
        .iter()
        .map(|s| reference_cloud(s, a.resolution, a.points, &mut rng))
        .collect::<Result<_, _>>()?;
    if generated.is_empty() || reference.is_empty() {
        return Err(CommandError::Data("nothing to evaluate".into()));
    }
    let cfg = EvalConfig {
        approximate_emd: a.approximate_emd,
        ..EvalConfig::default()
    };
    let report = evaluate(&generated, &reference, &cfg).map_err(data)?;
    let label = a
        .checkpoint
        .as_ref()
        .or(a.meshes.as_ref())
        .map_or("generated".to_string(), |p| p.display().to_string());
    print!("{}", MetricReport::table(&[(label.clone(), report)]));
    fs::write(&a.out, format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row(&label)))?;
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path(&a.out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["sdfgan", "bogus"]), 1);
        assert_eq!(main_with_args(["sdfgan", "train"]), 1);
        assert_eq!(
            main_with_args(["sdfgan", "sample", "--checkpoint", "/nonexistent.sgpc", "--out", "/tmp/x"]),
            2
        );
        assert_eq!(main_with_args(["sdfgan", "--help"]), 0);
    }

    #[test]
    fn analytic_sources_are_sdf_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = analytic_sample_set("s", &Analytic::sphere(0.5), 100, &mut rng);
        assert_eq!(set.len(), 100);
        assert!(set.validate().is_ok());
        let _: &dyn crate::surfacing::SdfSource = &Analytic::sphere(0.5);
    }
}
