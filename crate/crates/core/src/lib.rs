//! Layered regularization of 2D vortex sheets.
//!
//! A vortex sheet on a closed analytic curve is replaced by a continuum of
//! nearby parallel sheets (discretized by a layer quadrature) whose offsets
//! and densities evolve under the exact Biot–Savart coupling. The crate
//! evolves both the layered system and the single Birkhoff–Rott reference
//! sheet, and provides the measurements that compare them.

pub mod cli;
pub mod dynamics;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod spectral;
