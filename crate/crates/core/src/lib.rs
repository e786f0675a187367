//! Localize parameter regions responsible for linguistic competence in a tiny
//! decoder-only transformer, and measure their causal role through
//! perturbation, freeze-retrain, and perplexity experiments.

pub mod cli;
pub mod error;
pub mod evalx;
pub mod hexfloat;
pub mod io;
pub mod langgen;
pub mod mask;
pub mod model;
pub mod numkernel;
pub mod perturb;
pub mod pipeline;
pub mod regionmap;
pub mod trainer;

pub use error::{Error, Result};
