//! Training and verification toolkit for continuous-depth (ODE-driven) and
//! residual networks with a fixed linear readout.
//!
//! The model family evolves a hidden state by an affine flow and accumulates
//! its output through componentwise-activated projections; see
//! [`model::OdeNetSpec`] for the continuous-depth form and
//! [`resnet::ResNetParams`] for the discrete twin. On top of the simulators
//! the crate provides:
//!
//! - adjoint-based loss gradients and minibatch SGD / momentum training
//!   ([`adjoint`], [`optimizer`]);
//! - an independent finite-difference oracle that verifies every gradient
//!   entry ([`gradcheck`]);
//! - an exact compiler from shallow ridge-function networks to residual
//!   parameters and piecewise-constant parameter paths ([`uap`]);
//! - experiment datasets, IDX/CSV ingestion, and a k-nearest-neighbor
//!   baseline ([`data`], [`baselines`]);
//! - a binary checkpoint format shared by both architectures
//!   ([`checkpoint`]).
//!
//! All scalars are `f64`. Randomness is always explicit: a `u64` seed feeds
//! xoshiro256** through the pinned pipeline in [`rng`], so any run of any
//! component reproduces bitwise.

pub mod activation;
pub mod adjoint;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod forward;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod resnet;
pub mod rng;
pub mod uap;

pub use activation::Activation;
pub use error::{Error, Result};
pub use linalg::Mat;
pub use model::{Gradients, OdeNetSpec, ParamPath};
