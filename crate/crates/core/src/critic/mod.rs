//! Critics over voxel rasters and over `(x, y, z, s)` point sets.

mod growth;
mod point;
mod voxel;

use thiserror::Error;

use crate::autodiff::{DiffError, ParamError, ParameterStore, Tape, Var};

pub use growth::{GrowthSchedule, GrowthStage, STAGES};
pub use point::{PointCritic, PointCriticConfig};
pub use voxel::{VoxelCritic, VoxelCriticConfig};

/// Slope of the critics' leaky ReLU.
pub const LEAK: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("grid resolution {got} does not match stage resolution {expected}")]
    Resolution { expected: usize, got: usize },
    #[error("resolution {0} is not a power of two of at least 2")]
    BadResolution(usize),
    #[error("grid has {got} values, expected {expected}")]
    GridSize { expected: usize, got: usize },
    #[error("point set {0} is empty")]
    EmptySet(usize),
    #[error("invalid critic config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Param(#[from] ParamError),
}

pub type Result<T> = std::result::Result<T, CriticError>;

/// A cubic raster of signed distances, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    values: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 || !resolution.is_power_of_two() {
            return Err(CriticError::BadResolution(resolution));
        }
        let expected = resolution.pow(3);
        if values.len() != expected {
            return Err(CriticError::GridSize {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { resolution, values })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let r = self.resolution;
        self.values[(k * r + j) * r + i]
    }
}

/// Points with signed distances, the point critic's input for one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSdfSet {
    pub points: Vec<[f64; 3]>,
    pub values: Vec<f64>,
}

impl PointSdfSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Row-major `(x, y, z, s)` values.
    pub fn rows(&self) -> Vec<f64> {
        self.points
            .iter()
            .zip(&self.values)
            .flat_map(|(p, s)| [p[0], p[1], p[2], *s])
            .collect()
    }
}

/// Either critic, as held by the trainer.
#[derive(Clone, Debug)]
pub enum Critic {
    Voxel(VoxelCritic),
    Point(PointCritic),
}

impl Critic {
    pub fn params(&self) -> &ParameterStore {
        match self {
            Critic::Voxel(c) => c.params(),
            Critic::Point(c) => c.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        match self {
            Critic::Voxel(c) => c.params_mut(),
            Critic::Point(c) => c.params_mut(),
        }
    }
}

/// `x W + b` followed by a leaky ReLU when `activate`.
pub(crate) fn dense(tape: &mut Tape, x: Var, w: Var, b: Var, activate: bool) -> Result<Var> {
    let y = crate::autodiff::layers::linear(tape, x, w, b)?;
    Ok(if activate { tape.leaky_relu(y, LEAK)? } else { y })
}
