//! The conditional SDF network `g(z, p)`.
//!
//! Every layer but the last is linear, layer-normalized and rectified. The
//! input `[z; p]` enters the first layer and is concatenated again onto the
//! hidden state before `reinjection_layer`. Weights for the `[z; p]` part are
//! stored separately so a latent shared by many points is multiplied once.

mod fit;
mod refine;

use std::sync::Arc;

use rand::Rng;
use thiserror::Error;

use crate::autodiff::layers::LAYER_NORM_EPS;
use crate::autodiff::{matmul, Bound, DiffError, ParamError, ParameterStore, Tape, Tensor, Var};

pub use fit::{fit_latent, fit_loss, FitConfig, FitOutcome};
pub use refine::{
    build_refined_point_set, owners, project_to_surface, refine_generated_samples, refine_on_tape, GeneratorField,
    RefinedBatch, RefinedSamples, RefinementConfig, TapeField,
};

/// Points per plain forward chunk.
const CHUNK: usize = 2048;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("latent has {got} values, generator expects {expected}")]
    LatentLength { expected: usize, got: usize },
    #[error("empty point batch")]
    EmptyBatch,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

pub type Result<T> = std::result::Result<T, GeneratorError>;

/// A shape encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(Vec<f64>);

impl LatentCode {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &LatentCode, t: f64) -> LatentCode {
        LatentCode(self.0.iter().zip(&other.0).map(|(a, b)| (1.0 - t) * a + t * b).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    /// Layer whose input gets `[z; p]` appended. 0 disables reinjection.
    pub reinjection_layer: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden_dim: 256,
            layers: 8,
            reinjection_layer: 4,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden_dim == 0 {
            return Err(GeneratorError::Config("dimensions must be positive".into()));
        }
        if self.layers < 2 {
            return Err(GeneratorError::Config("need at least 2 layers".into()));
        }
        if self.reinjection_layer >= self.layers {
            return Err(GeneratorError::Config(format!(
                "reinjection layer {} must be below layer count {}",
                self.reinjection_layer, self.layers
            )));
        }
        Ok(())
    }

    fn takes_input(&self, layer: usize) -> bool {
        layer == 0 || (self.reinjection_layer > 0 && layer == self.reinjection_layer)
    }

    fn hidden_in(&self, layer: usize) -> usize {
        if layer == 0 {
            0
        } else {
            self.hidden_dim
        }
    }

    fn out_dim(&self, layer: usize) -> usize {
        if layer + 1 == self.layers {
            1
        } else {
            self.hidden_dim
        }
    }

    fn fan_in(&self, layer: usize) -> usize {
        self.hidden_in(layer) + if self.takes_input(layer) { self.latent_dim + 3 } else { 0 }
    }
}

/// Generator weights and layout.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParameterStore,
}

/// One layer's parameters for the plain forward path.
struct PlainLayer<'a> {
    w: Option<&'a Tensor>,
    wz: Option<&'a Tensor>,
    wp: Option<&'a Tensor>,
    b: &'a Tensor,
    norm: Option<(&'a Tensor, &'a Tensor)>,
}

impl Generator {
    /// Fresh weights and biases uniform in `±1/sqrt(fan_in)`, unit norm gains, zero norm biases.
    pub fn new(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterStore::new();
        for i in 0..config.layers {
            let bound = 1.0 / (config.fan_in(i) as f64).sqrt();
            let out = config.out_dim(i);
            if config.hidden_in(i) > 0 {
                params.insert_uniform(format!("l{i}.w"), &[config.hidden_in(i), out], bound, rng)?;
            }
            if config.takes_input(i) {
                params.insert_uniform(format!("l{i}.wz"), &[config.latent_dim, out], bound, rng)?;
                params.insert_uniform(format!("l{i}.wp"), &[3, out], bound, rng)?;
            }
            params.insert_uniform(format!("l{i}.b"), &[1, out], bound, rng)?;
            if i + 1 < config.layers {
                params.insert(format!("l{i}.gain"), Tensor::ones(&[1, out]))?;
                params.insert(format!("l{i}.bias"), Tensor::zeros(&[1, out]))?;
            }
        }
        Ok(Self { config, params })
    }

    /// Wraps existing parameters, checking that every expected tensor is present with the right shape.
    pub fn from_params(config: GeneratorConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let template = Self::new(config, &mut rng)?;
        if template.params.len() != params.len() {
            return Err(GeneratorError::Config(format!(
                "expected {} parameter tensors, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in template.params.iter() {
            match params.get(name) {
                Some(v) if v.shape() == t.shape() => {}
                Some(v) => {
                    return Err(GeneratorError::Param(ParamError::Shape {
                        name: name.into(),
                        expected: t.shape().to_vec(),
                        got: v.shape().to_vec(),
                    }))
                }
                None => return Err(GeneratorError::Param(ParamError::Unknown(name.into()))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn check_latent(&self, z: &LatentCode) -> Result<()> {
        if z.len() != self.config.latent_dim {
            return Err(GeneratorError::LatentLength {
                expected: self.config.latent_dim,
                got: z.len(),
            });
        }
        Ok(())
    }

    /// `g(z, p)` for one point.
    pub fn forward(&self, z: &LatentCode, p: [f64; 3]) -> Result<f64> {
        Ok(self.forward_batch(z, &[p])?[0])
    }

    /// `g(z, p_i)` for every point; results match [`Generator::forward`] bit for bit.
    pub fn forward_batch(&self, z: &LatentCode, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        if points.is_empty() {
            return Err(GeneratorError::EmptyBatch);
        }
        let layers = self.plain_layers();
        let zt = Tensor::row(z.values().to_vec());
        let z_terms: Vec<Option<Tensor>> = layers
            .iter()
            .map(|l| l.wz.map(|wz| matmul(&zt, wz, false, false)))
            .collect();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let p = Tensor::matrix(chunk.len(), 3, chunk.iter().flatten().copied().collect());
            let mut h: Option<Tensor> = None;
            for (layer, zterm) in layers.iter().zip(&z_terms) {
                let mut acc = match (layer.w, &h) {
                    (Some(w), Some(h)) => Some(matmul(h, w, false, false)),
                    _ => None,
                };
                if let (Some(wp), Some(zterm)) = (layer.wp, zterm) {
                    let mut pt = matmul(&p, wp, false, false);
                    add_row_in_place(&mut pt, zterm);
                    acc = Some(match acc {
                        Some(a) => a.zip_map(&pt, |x, y| x + y),
                        None => pt,
                    });
                }
                let mut a = acc.expect("layer has an input");
                add_row_in_place(&mut a, layer.b);
                if let Some((gain, bias)) = layer.norm {
                    layer_norm_relu_in_place(&mut a, gain, bias);
                }
                h = Some(a);
            }
            out.extend_from_slice(h.expect("at least one layer").data());
        }
        Ok(out)
    }

    /// Values at every raster point of an `r^3` grid, x fastest.
    pub fn eval_raster(&self, z: &LatentCode, r: usize) -> Result<Vec<f64>> {
        self.forward_batch(z, &raster_points(r))
    }

    fn plain_layers(&self) -> Vec<PlainLayer<'_>> {
        let p = &self.params;
        (0..self.config.layers)
            .map(|i| PlainLayer {
                w: p.get(&format!("l{i}.w")),
                wz: p.get(&format!("l{i}.wz")),
                wp: p.get(&format!("l{i}.wp")),
                b: p.get(&format!("l{i}.b")).expect("bias"),
                norm: p.get(&format!("l{i}.gain")).zip(p.get(&format!("l{i}.bias"))),
            })
            .collect()
    }

    /// Differentiable forward on a tape.
    ///
    /// `z` is `B x latent_dim`, `p` is `N x 3` and `owner[i]` names the row of
    /// `z` that conditions point `i`. Returns `N x 1`.
    pub fn forward_tape(&self, tape: &mut Tape, bound: &Bound, z: Var, p: Var, owner: Arc<[usize]>) -> Result<Var> {
        let n = tape.shape(p)[0];
        if n == 0 {
            return Err(GeneratorError::EmptyBatch);
        }
        if tape.shape(z)[1] != self.config.latent_dim {
            return Err(GeneratorError::LatentLength {
                expected: self.config.latent_dim,
                got: tape.shape(z)[1],
            });
        }
        let mut h: Option<Var> = None;
        for i in 0..self.config.layers {
            let mut acc = match h {
                Some(h) if self.config.hidden_in(i) > 0 => Some(tape.matmul(h, bound.get(&format!("l{i}.w")))?),
                _ => None,
            };
            if self.config.takes_input(i) {
                let zt = tape.matmul(z, bound.get(&format!("l{i}.wz")))?;
                let zt = tape.gather_rows(zt, owner.clone())?;
                let pt = tape.matmul(p, bound.get(&format!("l{i}.wp")))?;
                let s = tape.add(pt, zt)?;
                acc = Some(match acc {
                    Some(a) => tape.add(a, s)?,
                    None => s,
                });
            }
            let a = tape.add_row(acc.expect("layer has an input"), bound.get(&format!("l{i}.b")))?;
            h = Some(if i + 1 < self.config.layers {
                let g = bound.get(&format!("l{i}.gain"));
                let b = bound.get(&format!("l{i}.bias"));
                let y = crate::autodiff::layers::layer_norm(tape, a, g, b)?;
                tape.relu(y)?
            } else {
                a
            });
        }
        Ok(h.expect("at least one layer"))
    }
}

/// Cell-centered raster coordinates `-1 + (2i + 1) / r`, x fastest.
pub fn raster_points(r: usize) -> Vec<[f64; 3]> {
    let c = |i: usize| -1.0 + (2 * i + 1) as f64 / r as f64;
    let mut pts = Vec::with_capacity(r * r * r);
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                pts.push([c(i), c(j), c(k)]);
            }
        }
    }
    pts
}

fn add_row_in_place(m: &mut Tensor, row: &Tensor) {
    let r = row.data().to_vec();
    for chunk in m.data_mut().chunks_mut(r.len()) {
        for (x, b) in chunk.iter_mut().zip(&r) {
            *x += b;
        }
    }
}

fn layer_norm_relu_in_place(m: &mut Tensor, gain: &Tensor, bias: &Tensor) {
    let c = gain.len();
    let (g, b) = (gain.data(), bias.data());
    for row in m.data_mut().chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (k, x) in row.iter_mut().enumerate() {
            *x = ((*x - mean) * inv * g[k] + b[k]).max(0.0);
        }
    }
}

/// Latent rows and per-point owners for several shapes sharing one tape.
pub fn stack_latents(latents: &[LatentCode]) -> Tensor {
    let d = latents.first().map_or(0, |z| z.len());
    Tensor::matrix(latents.len(), d, latents.iter().flat_map(|z| z.values().iter().copied()).collect())
}
