//! Permutation-invariant critic over `(x, y, z, s)` tuples.
//!
//! A shared per-point MLP, a channel-wise max over each shape's points, then
//! dense layers down to one score.

use rand::Rng;

use super::{dense, CriticError, Result};
use crate::autodiff::{Bound, ParamError, ParameterStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCriticConfig {
    pub shared: Vec<usize>,
    /// Hidden dense widths after pooling; a final width-1 layer follows.
    pub dense: Vec<usize>,
}

impl Default for PointCriticConfig {
    fn default() -> Self {
        Self {
            shared: vec![64, 128, 256, 512],
            dense: vec![256, 128],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointCritic {
    config: PointCriticConfig,
    params: ParameterStore,
}

impl PointCritic {
    pub fn new(config: PointCriticConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.shared.is_empty() || config.shared.iter().chain(&config.dense).any(|&w| w == 0) {
            return Err(CriticError::Config("need at least one shared layer and positive widths".into()));
        }
        let mut p = ParameterStore::new();
        let mut fan_in = 4;
        for (i, &w) in config.shared.iter().enumerate() {
            let b = 1.0 / (fan_in as f64).sqrt();
            p.insert_uniform(format!("shared{i}.w"), &[fan_in, w], b, rng)?;
            p.insert_uniform(format!("shared{i}.b"), &[1, w], b, rng)?;
            fan_in = w;
        }
        for (i, &w) in config.dense.iter().chain(std::iter::once(&1)).enumerate() {
            let b = 1.0 / (fan_in as f64).sqrt();
            p.insert_uniform(format!("dense{i}.w"), &[fan_in, w], b, rng)?;
            p.insert_uniform(format!("dense{i}.b"), &[1, w], b, rng)?;
            fan_in = w;
        }
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: PointCriticConfig, params: ParameterStore) -> Result<Self> {
        let template = Self::new(config.clone(), &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        check_layout(template.params(), &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &PointCriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// Scores for the shapes whose rows of `x: M x 4` lie between consecutive `offsets`.
    pub fn score(&self, tape: &mut Tape, bound: &Bound, x: Var, offsets: &[usize]) -> Result<Var> {
        for (b, w) in offsets.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(CriticError::EmptySet(b));
            }
        }
        if offsets.len() < 2 {
            return Err(CriticError::EmptySet(0));
        }
        let mut h = x;
        for i in 0..self.config.shared.len() {
            h = dense(tape, h, bound.get(&format!("shared{i}.w")), bound.get(&format!("shared{i}.b")), true)?;
        }
        let mut h = tape.segment_max(h, offsets)?;
        let last = self.config.dense.len();
        for i in 0..=last {
            h = dense(tape, h, bound.get(&format!("dense{i}.w")), bound.get(&format!("dense{i}.b")), i < last)?;
        }
        Ok(h)
    }
}

/// Checks that `params` has exactly the tensors of `template`, with the same shapes.
pub(crate) fn check_layout(template: &ParameterStore, params: &ParameterStore) -> Result<()> {
    if template.len() != params.len() {
        return Err(CriticError::Config(format!(
            "expected {} parameter tensors, found {}",
            template.len(),
            params.len()
        )));
    }
    for (name, t) in template.iter() {
        match params.get(name) {
            Some(v) if v.shape() == t.shape() => {}
            Some(v) => {
                return Err(ParamError::Shape {
                    name: name.into(),
                    expected: t.shape().to_vec(),
                    got: v.shape().to_vec(),
                }
                .into())
            }
            None => return Err(ParamError::Unknown(name.into()).into()),
        }
    }
    Ok(())
}
