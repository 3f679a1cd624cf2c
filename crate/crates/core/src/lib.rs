//! Core algorithms for microwave-based piston position estimation in
//! hydraulic cylinders: the three-port scattering forward model and its
//! analytic inverse, synthetic experiment generation, a tape-based autodiff
//! engine, real- and complex-valued network layers, and the training and
//! evaluation machinery built on top of them.
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the command
//! line live in the companion `scatterpos` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod datagen;
pub mod eval;
mod math;
pub mod nn;
pub mod physics;
pub mod train;
