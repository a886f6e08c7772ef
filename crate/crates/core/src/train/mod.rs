//! WGAN-GP training of the generator against a voxel or point critic.
//!
//! One step is one critic update; every `critic_steps_per_gen_step`-th step is
//! followed by a generator update. All randomness of a step comes from a
//! generator seeded by `(seed, purpose, step)`, so a run is a pure function of
//! its config and dataset and can resume from any checkpoint.

mod batch;
mod checkpoint;
mod config;
mod data;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::autodiff::{DiffError, ParamError, RmsProp, Tape};
use crate::critic::{Critic, CriticError, GrowthStage, PointCritic, VoxelCritic};
use crate::generator::{Generator, GeneratorError, LatentCode};

pub use batch::{
    critic_batch, critic_objective, generator_objective, interpolate_shape, penalty_from_squares,
    wasserstein_estimate, CriticBatch, CriticLosses, PointRows, GP_NORM_EPS,
};
pub use checkpoint::{load_generator, Checkpoint};
pub use config::{DiscriminatorKind, TrainConfig};
pub use data::{procedural_shapes, split_dataset, Procedural, RealShape, SampledShape, Split};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Critic(#[from] CriticError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

/// Independent random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
enum Stream {
    Init = 1,
    Split = 2,
    Order = 3,
    Critic = 4,
    Gen = 5,
    Val = 6,
}

fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng.set_word_pos((index as u128) << 36);
    rng
}

/// A latent code of i.i.d. standard normal values.
pub fn sample_latent(dim: usize, rng: &mut impl Rng) -> LatentCode {
    LatentCode::new((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// What happened in one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: GrowthStage,
    pub critic: CriticLosses,
    pub gen_loss: Option<f64>,
    pub wasserstein_val: Option<f64>,
    /// The critic update left the generator parameters bit-identical.
    pub generator_untouched: bool,
    /// The generator update, if any, left the critic parameters bit-identical.
    pub critic_untouched: bool,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str = "step,stage,alpha,critic_loss,gen_loss,gp,wasserstein_val";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.stage.index,
            self.stage.alpha,
            self.critic.loss,
            opt(self.gen_loss),
            self.critic.gp,
            opt(self.wasserstein_val)
        )
    }

    pub fn all_finite(&self) -> bool {
        let c = &self.critic;
        [c.loss, c.gp, c.mean_real, c.mean_fake].iter().all(|v| v.is_finite())
            && self.gen_loss.is_none_or(f64::is_finite)
            && self.wasserstein_val.is_none_or(f64::is_finite)
    }
}

/// Best validation result seen so far.
#[derive(Clone, Debug)]
pub struct BestModel {
    pub step: usize,
    pub wasserstein: f64,
    pub generator: Generator,
}

/// Mutable training state.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// Steps completed.
    pub step: usize,
    pub stage: GrowthStage,
    pub generator: Generator,
    pub critic: Critic,
    /// Latest validation estimate.
    pub wasserstein: Option<f64>,
    pub best: Option<BestModel>,
}

pub struct Trainer {
    config: TrainConfig,
    shapes: Vec<RealShape>,
    split: Split,
    state: TrainState,
}

impl Trainer {
    pub fn new(config: TrainConfig, shapes: Vec<RealShape>) -> Result<Self, TrainError> {
        config.validate()?;
        if shapes.is_empty() {
            return Err(TrainError::Data("dataset is empty".into()));
        }
        let split = split_dataset(shapes.len(), &mut stream_rng(config.seed, Stream::Split, 0))?;
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let generator = Generator::new(config.generator.clone(), &mut rng)?;
        let critic = match config.discriminator {
            DiscriminatorKind::Voxel => Critic::Voxel(VoxelCritic::new(config.voxel_critic.clone(), &mut rng)?),
            _ => Critic::Point(PointCritic::new(config.point_critic.clone(), &mut rng)?),
        };
        let stage = config.growth.stage_at(0);
        Ok(Self {
            config,
            shapes,
            split,
            state: TrainState {
                step: 0,
                stage,
                generator,
                critic,
                wasserstein: None,
                best: None,
            },
        })
    }

    /// Restores a run from a checkpoint written with the same config and dataset.
    pub fn resume(config: TrainConfig, shapes: Vec<RealShape>, ckpt: Checkpoint) -> Result<Self, TrainError> {
        let mut t = Self::new(config, shapes)?;
        ckpt.check_compatible(&t.config)?;
        t.state = ckpt.into_state(&t.config)?;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn shapes(&self) -> &[RealShape] {
        &self.shapes
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.split.train.len().div_ceil(self.config.batch_size)
    }

    /// Step count of the whole run.
    pub fn total_steps(&self) -> usize {
        let full = self.config.epochs_max * self.steps_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_state(&self.config, &self.state)
    }

    fn points(&self, stage: GrowthStage) -> usize {
        self.config.points_per_shape.unwrap_or(stage.point_count())
    }

    /// Training shapes of the current step.
    fn batch_indices(&self, step: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, step % spe);
        let mut order = self.split.train.clone();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut stream_rng(self.config.seed, Stream::Order, epoch as u64));
        let b = self.config.batch_size;
        order[pos * b..((pos + 1) * b).min(order.len())].to_vec()
    }

    fn latents(&self, n: usize, rng: &mut impl Rng) -> Vec<LatentCode> {
        (0..n).map(|_| sample_latent(self.config.generator.latent_dim, rng)).collect()
    }

    fn non_finite(&self, detail: String) -> TrainError {
        TrainError::NonFinite {
            step: self.state.step,
            detail: format!("stage {:?}: {detail}", self.state.stage),
        }
    }

    /// One critic update on the batch of the current step.
    pub fn critic_step(&mut self) -> Result<CriticLosses, TrainError> {
        let step = self.state.step;
        let stage = self.state.stage;
        let mut rng = stream_rng(self.config.seed, Stream::Critic, step as u64);
        let idx = self.batch_indices(step);
        let shapes: Vec<&RealShape> = idx.iter().map(|&i| &self.shapes[i]).collect();
        let latents = self.latents(shapes.len(), &mut rng);
        let batch = critic_batch(
            self.config.discriminator,
            &self.state.generator,
            &shapes,
            &latents,
            stage,
            self.points(stage),
            self.config.refinement,
            &mut rng,
        )?;
        let eps: Vec<f64> = (0..shapes.len()).map(|_| rng.random::<f64>()).collect();
        let mut tape = Tape::new();
        let bound = self.state.critic.params().bind(&mut tape, true);
        let (loss, losses) =
            critic_objective(&self.state.critic, &mut tape, &bound, &batch, stage, self.config.gp_lambda, &eps)?;
        if !losses.loss.is_finite() || !losses.gp.is_finite() {
            return Err(self.non_finite(format!("critic losses {losses:?}")));
        }
        let grads = tape.grad(loss, bound.vars(), false)?;
        let grads: Vec<_> = grads.iter().map(|g| tape.value(*g).clone()).collect();
        drop(tape);
        RmsProp::new(self.config.learning_rate).step(self.state.critic.params_mut(), &grads)?;
        if let Err(e) = self.state.critic.params().all_finite() {
            return Err(self.non_finite(format!("critic parameters after update: {e}")));
        }
        Ok(losses)
    }

    /// One generator update against the current critic.
    pub fn generator_step(&mut self) -> Result<f64, TrainError> {
        let step = self.state.step;
        let stage = self.state.stage;
        let mut rng = stream_rng(self.config.seed, Stream::Gen, step as u64);
        let latents = self.latents(self.config.batch_size, &mut rng);
        let mut tape = Tape::new();
        let gbound = self.state.generator.params().bind(&mut tape, true);
        let dbound = self.state.critic.params().bind(&mut tape, false);
        let loss = generator_objective(
            self.config.discriminator,
            &self.state.generator,
            &self.state.critic,
            &mut tape,
            &gbound,
            &dbound,
            &latents,
            stage,
            self.points(stage),
            self.config.refinement,
            &mut rng,
        )?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(self.non_finite(format!("generator loss {value}")));
        }
        let grads = tape.grad(loss, gbound.vars(), false)?;
        let grads: Vec<_> = grads.iter().map(|g| tape.value(*g).clone()).collect();
        drop(tape);
        RmsProp::new(self.config.learning_rate).step(self.state.generator.params_mut(), &grads)?;
        if let Err(e) = self.state.generator.params().all_finite() {
            return Err(self.non_finite(format!("generator parameters after update: {e}")));
        }
        Ok(value)
    }

    /// Validation estimate with fixed latents and points.
    pub fn validate(&self) -> Result<f64, TrainError> {
        let stage = self.state.stage;
        let mut rng = stream_rng(self.config.seed, Stream::Val, 0);
        let shapes: Vec<&RealShape> = self.split.val.iter().map(|&i| &self.shapes[i]).collect();
        let latents = self.latents(shapes.len(), &mut rng);
        let batch = critic_batch(
            self.config.discriminator,
            &self.state.generator,
            &shapes,
            &latents,
            stage,
            self.points(stage),
            self.config.refinement,
            &mut rng,
        )?;
        wasserstein_estimate(&self.state.critic, &batch, stage)
    }

    /// Runs one step: a critic update, maybe a generator update, and validation at epoch ends.
    pub fn step(&mut self) -> Result<StepRecord, TrainError> {
        let step = self.state.step;
        self.state.stage = self.config.growth.grow(self.state.stage, step);
        let g_before = self.state.generator.params().fingerprint();
        let critic = self.critic_step()?;
        let generator_untouched = self.state.generator.params().fingerprint() == g_before;
        let mut gen_loss = None;
        let mut critic_untouched = true;
        if (step + 1) % self.config.critic_steps_per_gen_step == 0 {
            let d_before = self.state.critic.params().fingerprint();
            gen_loss = Some(self.generator_step()?);
            critic_untouched = self.state.critic.params().fingerprint() == d_before;
        }
        let mut wasserstein_val = None;
        if (step + 1) % self.steps_per_epoch() == 0 {
            let w = self.validate()?;
            if !w.is_finite() {
                return Err(self.non_finite(format!("validation estimate {w}")));
            }
            wasserstein_val = Some(w);
            self.state.wasserstein = Some(w);
            let eligible = step + 1 >= self.selection_start();
            let better = self.state.best.as_ref().is_none_or(|b| w.abs() < b.wasserstein.abs());
            if eligible && better {
                self.state.best = Some(BestModel {
                    step: step + 1,
                    wasserstein: w,
                    generator: self.state.generator.clone(),
                });
            }
        }
        self.state.step += 1;
        Ok(StepRecord {
            step,
            stage: self.state.stage,
            critic,
            gen_loss,
            wasserstein_val,
            generator_untouched,
            critic_untouched,
        })
    }

    /// First step count after which a validation result may become the best model.
    pub fn selection_start(&self) -> usize {
        (self.total_steps() as f64 * self.config.selection_start).floor() as usize
    }

    /// Runs to the end, writing metrics and checkpoints into `out` when given.
    pub fn run(&mut self, out: Option<&Path>) -> Result<Vec<StepRecord>, TrainError> {
        let total = self.total_steps();
        let mut csv = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("config.txt"), self.config.to_kv())?;
                let mut w = BufWriter::new(File::create(dir.join("metrics.csv"))?);
                writeln!(w, "{}", StepRecord::CSV_HEADER)?;
                Some(w)
            }
            None => None,
        };
        let mut records = Vec::with_capacity(total.saturating_sub(self.state.step));
        while self.state.step < total {
            let rec = match self.step() {
                Ok(r) => r,
                Err(e) => {
                    if let (Some(dir), TrainError::NonFinite { .. }) = (out, &e) {
                        self.checkpoint().save(&dir.join("nonfinite.sgpc"))?;
                    }
                    return Err(e);
                }
            };
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", rec.csv_row())?;
            }
            records.push(rec);
            if let (Some(dir), true) = (out, self.config.checkpoint_every > 0) {
                if self.state.step % self.config.checkpoint_every == 0 {
                    self.checkpoint().save(&dir.join("checkpoint.sgpc"))?;
                }
            }
        }
        if let Some(dir) = out {
            if let Some(w) = csv.as_mut() {
                w.flush()?;
            }
            let ckpt = self.checkpoint();
            ckpt.save(&dir.join("checkpoint.sgpc"))?;
            ckpt.save_best(&dir.join("best.sgpc"))?;
        }
        Ok(records)
    }

    /// The selected model: the best validated generator, else the current one.
    pub fn final_generator(&self) -> &Generator {
        self.state.best.as_ref().map_or(&self.state.generator, |b| &b.generator)
    }
}

/// Trains on `shapes` from scratch.
pub fn train(config: TrainConfig, shapes: Vec<RealShape>, out: Option<&Path>) -> Result<(Trainer, Vec<StepRecord>), TrainError> {
    let mut t = Trainer::new(config, shapes)?;
    let records = t.run(out)?;
    Ok((t, records))
}
