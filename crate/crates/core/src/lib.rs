//! Reconstruction of separated sources `σ(t) F(x)` in coupled heat systems
//! from internal measurements of a subset of the state components.

pub mod bench;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod fem;
pub mod forward;
pub mod io;
pub mod mesh;
pub mod optimize;
pub mod reconstruct;
pub mod spectral;
pub mod volterra;

pub use error::{Error, Result};
