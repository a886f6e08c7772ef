//! Adversarial generation of continuous signed distance fields.

pub mod autodiff;
pub mod commands;
pub mod critic;
pub mod generator;
pub mod mesh;
pub mod mesh2sdf;
pub mod metrics;
pub mod spatial;
pub mod surfacing;
pub mod train;
