//! Training configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::str::FromStr;

use super::TrainError;
use crate::critic::{GrowthSchedule, PointCriticConfig, VoxelCriticConfig};
use crate::generator::{GeneratorConfig, RefinementConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscriminatorKind {
    Voxel,
    Point,
    PointRefined,
}

impl DiscriminatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            DiscriminatorKind::Voxel => "voxel",
            DiscriminatorKind::Point => "point",
            DiscriminatorKind::PointRefined => "point-refined",
        }
    }

    pub fn code(&self) -> f64 {
        match self {
            DiscriminatorKind::Voxel => 0.0,
            DiscriminatorKind::Point => 1.0,
            DiscriminatorKind::PointRefined => 2.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(DiscriminatorKind::Voxel),
            1 => Some(DiscriminatorKind::Point),
            2 => Some(DiscriminatorKind::PointRefined),
            _ => None,
        }
    }
}

impl FromStr for DiscriminatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "voxel" => Ok(DiscriminatorKind::Voxel),
            "point" => Ok(DiscriminatorKind::Point),
            "point-refined" => Ok(DiscriminatorKind::PointRefined),
            other => Err(format!("unknown discriminator `{other}` (voxel, point, point-refined)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_max: usize,
    /// Caps the run below `epochs_max` epochs when set.
    pub max_steps: Option<usize>,
    pub critic_steps_per_gen_step: usize,
    pub batch_size: usize,
    pub gp_lambda: f64,
    pub discriminator: DiscriminatorKind,
    pub growth: GrowthSchedule,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub voxel_critic: VoxelCriticConfig,
    pub point_critic: PointCriticConfig,
    /// Overrides the stage point count of the point critic.
    pub points_per_shape: Option<usize>,
    pub refinement: RefinementConfig,
    /// Steps between checkpoints written by [`super::train`]; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Fraction of the run after which validation results may select the final model.
    pub selection_start: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs_max: 2000,
            max_steps: None,
            critic_steps_per_gen_step: 5,
            batch_size: 16,
            gp_lambda: 10.0,
            discriminator: DiscriminatorKind::Voxel,
            growth: GrowthSchedule::Fixed(0),
            seed: 0,
            generator: GeneratorConfig::default(),
            voxel_critic: VoxelCriticConfig::default(),
            point_critic: PointCriticConfig::default(),
            points_per_shape: None,
            refinement: RefinementConfig::default(),
            checkpoint_every: 0,
            selection_start: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, TrainError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| TrainError::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, TrainError> {
    v.split(',').map(|s| parse::<usize>(key, s.trim())).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.epochs_max == 0 {
            return bad("epochs_max must be at least 1");
        }
        if self.critic_steps_per_gen_step == 0 || self.batch_size == 0 {
            return bad("critic_steps_per_gen_step and batch_size must be positive");
        }
        if !(self.gp_lambda >= 0.0) {
            return bad("gp_lambda must be non-negative");
        }
        if !(self.refinement.delta > 0.0) || !(self.refinement.sigma >= 0.0) {
            return bad("refinement needs delta > 0 and sigma >= 0");
        }
        if !(0.0..=1.0).contains(&self.selection_start) {
            return bad("selection_start must lie in [0, 1]");
        }
        if self.points_per_shape == Some(0) {
            return bad("points_per_shape must be positive");
        }
        self.generator.validate().map_err(|e| TrainError::Config(e.to_string()))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), TrainError> {
        match key {
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "epochs_max" => self.epochs_max = parse(key, v)?,
            "max_steps" => self.max_steps = if v == "none" { None } else { Some(parse(key, v)?) },
            "critic_steps_per_gen_step" => self.critic_steps_per_gen_step = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "gp_lambda" => self.gp_lambda = parse(key, v)?,
            "discriminator" => self.discriminator = v.parse().map_err(TrainError::Config)?,
            "growth" => {
                self.growth = if let Some(stage) = v.strip_prefix("fixed:") {
                    GrowthSchedule::Fixed(parse(key, stage)?)
                } else if let Some(steps) = v.strip_prefix("progressive:") {
                    GrowthSchedule::progressive(parse(key, steps)?)
                } else {
                    return Err(TrainError::Config(format!(
                        "`growth`: expected fixed:<stage> or progressive:<total steps>, got `{v}`"
                    )));
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "latent_dim" => self.generator.latent_dim = parse(key, v)?,
            "hidden_dim" => self.generator.hidden_dim = parse(key, v)?,
            "layers" => self.generator.layers = parse(key, v)?,
            "reinjection_layer" => self.generator.reinjection_layer = parse(key, v)?,
            "voxel_width" => self.voxel_critic.width = parse(key, v)?,
            "voxel_min_width" => self.voxel_critic.min_width = parse(key, v)?,
            "voxel_dense" => self.voxel_critic.dense = parse(key, v)?,
            "point_shared" => self.point_critic.shared = parse_list(key, v)?,
            "point_dense" => self.point_critic.dense = parse_list(key, v)?,
            "points_per_shape" => {
                self.points_per_shape = if v == "stage" { None } else { Some(parse(key, v)?) }
            }
            "delta" => self.refinement.delta = parse(key, v)?,
            "sigma" => self.refinement.sigma = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "selection_start" => self.selection_start = parse(key, v)?,
            other => return Err(TrainError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("learning_rate", self.learning_rate.to_string());
        put("epochs_max", self.epochs_max.to_string());
        put("max_steps", self.max_steps.map_or("none".into(), |v| v.to_string()));
        put("critic_steps_per_gen_step", self.critic_steps_per_gen_step.to_string());
        put("batch_size", self.batch_size.to_string());
        put("gp_lambda", self.gp_lambda.to_string());
        put("discriminator", self.discriminator.name().into());
        put(
            "growth",
            match self.growth {
                GrowthSchedule::Fixed(k) => format!("fixed:{k}"),
                GrowthSchedule::Progressive { total_steps, .. } => format!("progressive:{total_steps}"),
            },
        );
        put("seed", self.seed.to_string());
        put("latent_dim", self.generator.latent_dim.to_string());
        put("hidden_dim", self.generator.hidden_dim.to_string());
        put("layers", self.generator.layers.to_string());
        put("reinjection_layer", self.generator.reinjection_layer.to_string());
        put("voxel_width", self.voxel_critic.width.to_string());
        put("voxel_min_width", self.voxel_critic.min_width.to_string());
        put("voxel_dense", self.voxel_critic.dense.to_string());
        put("point_shared", join(&self.point_critic.shared));
        put("point_dense", join(&self.point_critic.dense));
        put("points_per_shape", self.points_per_shape.map_or("stage".into(), |v| v.to_string()));
        put("delta", self.refinement.delta.to_string());
        put("sigma", self.refinement.sigma.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("selection_start", self.selection_start.to_string());
        s
    }
}
