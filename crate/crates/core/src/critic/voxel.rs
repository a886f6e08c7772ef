//! Progressive 3D convolutional critic.
//!
//! Stage `k` reads an `(8 * 2^k)^3` raster through a 1x1x1 input projection,
//! then halves the resolution with stride-2 kernel-4 convolutions down to
//! `1^3`, and ends in two dense layers. While a stage fades in, the newest
//! block is blended with the previous stage's input projection applied to the
//! average-pooled raster.

use std::sync::Arc;

use rand::Rng;

use super::{dense, CriticError, GrowthStage, Result, LEAK, STAGES};
use crate::autodiff::{Bound, ConvSpec, ParameterStore, Tape, Var};

const DOWN: ConvSpec = ConvSpec { stride: 2, pad: 1 };
const UNIT: ConvSpec = ConvSpec { stride: 1, pad: 0 };

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelCriticConfig {
    /// Channels at resolution `r` are `max(width / r, min_width)`.
    pub width: usize,
    pub min_width: usize,
    /// Width of the hidden dense layer.
    pub dense: usize,
}

impl Default for VoxelCriticConfig {
    fn default() -> Self {
        Self {
            width: 128,
            min_width: 4,
            dense: 128,
        }
    }
}

impl VoxelCriticConfig {
    pub fn channels(&self, resolution: usize) -> usize {
        (self.width / resolution).max(self.min_width)
    }
}

#[derive(Clone, Debug)]
pub struct VoxelCritic {
    config: VoxelCriticConfig,
    params: ParameterStore,
}

impl VoxelCritic {
    pub fn new(config: VoxelCriticConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.width == 0 || config.min_width == 0 || config.dense == 0 {
            return Err(CriticError::Config("widths must be positive".into()));
        }
        let mut p = ParameterStore::new();
        let top = GrowthStage { index: STAGES - 1, alpha: 1.0 }.resolution();
        let mut r = 8;
        while r <= top {
            let c = config.channels(r);
            p.insert_uniform(format!("from{r}.w"), &[c, 1, 1, 1, 1], 1.0, rng)?;
            p.insert_uniform(format!("from{r}.b"), &[c, 1], 1.0, rng)?;
            r *= 2;
        }
        let mut r = top;
        while r >= 2 {
            let (ci, co) = (config.channels(r), config.channels(r / 2));
            let bound = 1.0 / ((ci * 64) as f64).sqrt();
            p.insert_uniform(format!("down{r}.w"), &[co, ci, 4, 4, 4], bound, rng)?;
            p.insert_uniform(format!("down{r}.b"), &[co, 1], bound, rng)?;
            r /= 2;
        }
        let c1 = config.channels(1);
        let b1 = 1.0 / (c1 as f64).sqrt();
        p.insert_uniform("dense.w", &[c1, config.dense], b1, rng)?;
        p.insert_uniform("dense.b", &[1, config.dense], b1, rng)?;
        let b2 = 1.0 / (config.dense as f64).sqrt();
        p.insert_uniform("out.w", &[config.dense, 1], b2, rng)?;
        p.insert_uniform("out.b", &[1, 1], b2, rng)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: VoxelCriticConfig, params: ParameterStore) -> Result<Self> {
        let template = Self::new(config, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        super::point::check_layout(template.params(), &params)?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &VoxelCriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    /// Scores for `x: [B, 1, R, R, R]`, returned as `B x 1`.
    pub fn score(&self, tape: &mut Tape, bound: &Bound, x: Var, stage: GrowthStage) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let r = stage.resolution();
        if shape.len() != 5 || shape[1] != 1 || shape[2..].iter().any(|&e| e != r) {
            return Err(CriticError::Resolution {
                expected: r,
                got: shape.get(2).copied().unwrap_or(0),
            });
        }
        let batch = shape[0];
        let main = self.from_sdf(tape, bound, x, r, batch)?;
        let mut h = self.down(tape, bound, main, r, batch)?;
        if stage.index > 0 && stage.alpha < 1.0 {
            let pooled = tape.avg_pool2(x)?;
            let bypass = self.from_sdf(tape, bound, pooled, r / 2, batch)?;
            let a = tape.scale(h, stage.alpha)?;
            let b = tape.scale(bypass, 1.0 - stage.alpha)?;
            h = tape.add(a, b)?;
        }
        let mut res = r / 2;
        while res >= 2 {
            h = self.down(tape, bound, h, res, batch)?;
            res /= 2;
        }
        let flat = tape.reshape(h, &[batch, self.config.channels(1)])?;
        let y = dense(tape, flat, bound.get("dense.w"), bound.get("dense.b"), true)?;
        dense(tape, y, bound.get("out.w"), bound.get("out.b"), false)
    }

    fn from_sdf(&self, tape: &mut Tape, bound: &Bound, x: Var, r: usize, batch: usize) -> Result<Var> {
        let y = tape.conv3d(x, bound.get(&format!("from{r}.w")), UNIT)?;
        let y = add_channel_bias(tape, y, bound.get(&format!("from{r}.b")), batch)?;
        Ok(tape.leaky_relu(y, LEAK)?)
    }

    fn down(&self, tape: &mut Tape, bound: &Bound, x: Var, r: usize, batch: usize) -> Result<Var> {
        let y = tape.conv3d(x, bound.get(&format!("down{r}.w")), DOWN)?;
        let y = add_channel_bias(tape, y, bound.get(&format!("down{r}.b")), batch)?;
        Ok(tape.leaky_relu(y, LEAK)?)
    }
}

/// Adds `bias: C x 1` to every channel of `y: [B, C, D, H, W]`.
fn add_channel_bias(tape: &mut Tape, y: Var, bias: Var, batch: usize) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product();
    let rows = tape.reshape(y, &[batch * c, spatial])?;
    let idx: Arc<[usize]> = (0..batch).flat_map(|_| 0..c).collect::<Vec<_>>().into();
    let tiled = tape.gather_rows(bias, idx)?;
    let rows = tape.add_col(rows, tiled)?;
    Ok(tape.reshape(rows, &shape)?)
}
