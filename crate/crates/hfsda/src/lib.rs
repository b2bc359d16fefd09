//! Speech enhancement with heterogeneous feature fusion and dual-dimension
//! attention.
//!
//! The crate implements a magnitude-masking enhancement network: a
//! time-frequency branch built from dynamic convolutions, a self-supervised
//! embedding branch, a fusion stage, and a stack of attention blocks that
//! model time and frequency structure separately. Everything runs on a small
//! `f64` reverse-mode autodiff tape so training is dependency-free and
//! bitwise deterministic.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod data;
pub mod dda;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod model;
pub mod odconv;
pub mod params;
pub mod plot;
pub mod resample;
pub mod ssl;
pub mod tensorio;
pub mod testkit;
pub mod trainer;

pub use error::{Error, Result};
