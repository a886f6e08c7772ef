//! Training checkpoints as named tensors.
//!
//! Generator entries carry the prefix `g/`, critic entries `d/`, the best
//! validated generator `best/g/`, and run metadata lives under `meta/`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{BestModel, DiscriminatorKind, TrainConfig, TrainError, TrainState};
use crate::autodiff::{read_checkpoint, write_checkpoint, ParameterStore, Tensor};
use crate::critic::{Critic, GrowthStage, PointCritic, VoxelCritic};
use crate::generator::{Generator, GeneratorConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

fn meta(name: &str, v: f64) -> (String, Tensor) {
    (format!("meta/{name}"), Tensor::scalar(v))
}

impl Checkpoint {
    pub fn from_state(config: &TrainConfig, state: &TrainState) -> Self {
        let g = &config.generator;
        let mut entries = vec![
            meta("step", state.step as f64),
            meta("stage_index", state.stage.index as f64),
            meta("stage_alpha", state.stage.alpha),
            meta("kind", config.discriminator.code()),
            meta("latent_dim", g.latent_dim as f64),
            meta("hidden_dim", g.hidden_dim as f64),
            meta("layers", g.layers as f64),
            meta("reinjection_layer", g.reinjection_layer as f64),
        ];
        if let Some(w) = state.wasserstein {
            entries.push(meta("wasserstein", w));
        }
        entries.extend(state.generator.params().to_named("g/"));
        entries.extend(state.critic.params().to_named("d/"));
        if let Some(b) = &state.best {
            entries.push(meta("best_step", b.step as f64));
            entries.push(meta("best_wasserstein", b.wasserstein));
            entries.extend(b.generator.params().to_named("best/g/"));
        }
        Self { entries }
    }

    pub fn meta(&self, name: &str) -> Option<f64> {
        let key = format!("meta/{name}");
        self.entries.iter().find(|(n, _)| *n == key).map(|(_, t)| t.item())
    }

    fn require(&self, name: &str) -> Result<f64, TrainError> {
        self.meta(name)
            .ok_or_else(|| TrainError::Checkpoint(format!("missing meta/{name}")))
    }

    pub fn generator_config(&self) -> Result<GeneratorConfig, TrainError> {
        Ok(GeneratorConfig {
            latent_dim: self.require("latent_dim")? as usize,
            hidden_dim: self.require("hidden_dim")? as usize,
            layers: self.require("layers")? as usize,
            reinjection_layer: self.require("reinjection_layer")? as usize,
        })
    }

    pub fn kind(&self) -> Result<DiscriminatorKind, TrainError> {
        let code = self.require("kind")?;
        DiscriminatorKind::from_code(code).ok_or_else(|| TrainError::Checkpoint(format!("unknown kind code {code}")))
    }

    pub fn check_compatible(&self, config: &TrainConfig) -> Result<(), TrainError> {
        if self.kind()? != config.discriminator {
            return Err(TrainError::Checkpoint(format!(
                "checkpoint is for the {} critic, config asks for {}",
                self.kind()?.name(),
                config.discriminator.name()
            )));
        }
        if self.generator_config()? != config.generator {
            return Err(TrainError::Checkpoint("generator dimensions differ from the config".into()));
        }
        Ok(())
    }

    /// Generator stored under `prefix`.
    pub fn generator(&self, prefix: &str) -> Result<Generator, TrainError> {
        let store = ParameterStore::from_named(&self.entries, prefix)?;
        if store.is_empty() {
            return Err(TrainError::Checkpoint(format!("no tensors under `{prefix}`")));
        }
        Ok(Generator::from_params(self.generator_config()?, store)?)
    }

    /// The selected generator: the best validated one if present, else the latest.
    pub fn selected_generator(&self) -> Result<Generator, TrainError> {
        if self.meta("best_step").is_some() {
            self.generator("best/g/")
        } else {
            self.generator("g/")
        }
    }

    pub(super) fn into_state(self, config: &TrainConfig) -> Result<TrainState, TrainError> {
        let generator = self.generator("g/")?;
        let d = ParameterStore::from_named(&self.entries, "d/")?;
        let critic = match config.discriminator {
            DiscriminatorKind::Voxel => Critic::Voxel(VoxelCritic::from_params(config.voxel_critic.clone(), d)?),
            _ => Critic::Point(PointCritic::from_params(config.point_critic.clone(), d)?),
        };
        let best = match self.meta("best_step") {
            Some(step) => Some(BestModel {
                step: step as usize,
                wasserstein: self.require("best_wasserstein")?,
                generator: self.generator("best/g/")?,
            }),
            None => None,
        };
        Ok(TrainState {
            step: self.require("step")? as usize,
            stage: GrowthStage {
                index: self.require("stage_index")? as usize,
                alpha: self.require("stage_alpha")?,
            },
            generator,
            critic,
            wasserstein: self.meta("wasserstein"),
            best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &self.entries)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    /// Writes only the selected generator and the metadata needed to load it.
    pub fn save_best(&self, path: &Path) -> Result<(), TrainError> {
        let prefix = if self.meta("best_step").is_some() { "best/g/" } else { "g/" };
        let mut entries: Vec<(String, Tensor)> = self
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with("meta/"))
            .cloned()
            .collect();
        entries.extend(
            self.generator(prefix)?
                .params()
                .to_named("g/"),
        );
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, &entries)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Ok(Self {
            entries: read_checkpoint(BufReader::new(File::open(path)?))?,
        })
    }
}

/// Loads the selected generator from a checkpoint file.
pub fn load_generator(path: &Path) -> Result<Generator, TrainError> {
    let ckpt = Checkpoint::load(path)?;
    // files from `save_best` carry best metadata but store the model under g/
    if ckpt.entries.iter().any(|(n, _)| n.starts_with("best/g/")) {
        ckpt.generator("best/g/")
    } else {
        ckpt.generator("g/")
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;

    fn config() -> TrainConfig {
        let mut c = TrainConfig::default();
        c.discriminator = DiscriminatorKind::Point;
        c.generator = crate::generator::GeneratorConfig {
            latent_dim: 4,
            hidden_dim: 8,
            layers: 3,
            reinjection_layer: 2,
        };
        c.point_critic.shared = vec![8];
        c.point_critic.dense = vec![8];
        c.points_per_shape = Some(16);
        c.batch_size = 4;
        c.critic_steps_per_gen_step = 2;
        c.selection_start = 0.0;
        c.max_steps = Some(12);
        c
    }

    fn shapes() -> Vec<RealShape> {
        procedural_shapes(Procedural::Spheres, 40, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn resume_reproduces_next_steps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.sgpc");
        let mut a = Trainer::new(config(), shapes()).unwrap();
        for _ in 0..9 {
            a.step().unwrap();
        }
        a.checkpoint().save(&path).unwrap();
        let mut b = Trainer::resume(config(), shapes(), Checkpoint::load(&path).unwrap()).unwrap();
        assert!(b.state().best.is_some());
        for _ in 0..3 {
            assert_eq!(a.step().unwrap(), b.step().unwrap());
        }
        assert_eq!(a.state().generator.params().fingerprint(), b.state().generator.params().fingerprint());
    }

    #[test]
    fn incompatible_config_is_rejected() {
        let t = Trainer::new(config(), shapes()).unwrap();
        let mut other = config();
        other.discriminator = DiscriminatorKind::Voxel;
        assert!(Trainer::resume(other, shapes(), t.checkpoint()).is_err());
    }

    #[test]
    fn best_file_loads_the_selected_generator() {
        let dir = tempfile::tempdir().unwrap();
        let (t, _) = train(config(), shapes(), Some(dir.path())).unwrap();
        let g = load_generator(&dir.path().join("best.sgpc")).unwrap();
        assert_eq!(g.params().fingerprint(), t.final_generator().params().fingerprint());
        let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), 13);
        assert!(csv.starts_with(StepRecord::CSV_HEADER));
    }
}
