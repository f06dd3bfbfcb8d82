//! Gap-filling of cloud-masked 3-D + time CO fields with a hierarchical
//! model whose process stage is a discretized advection operator.
//!
//! Modules follow the pipeline: [`grid`] and [`dynamics`] define the
//! lattice and transport stencil, [`scenario`] generates synthetic truth
//! and observations, [`sampler`] fits the hierarchical model by Gibbs
//! sampling, [`kriging`] is the per-snapshot spatial baseline, [`eval`]
//! scores estimates, and [`pipeline`] wires everything to on-disk artifacts.

pub mod dynamics;
pub mod error;
pub mod eval;
pub mod grid;
pub mod io;
pub mod kriging;
pub mod obs;
pub mod pipeline;
pub mod sampler;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
