//! Soft-body tactile sensor simulation and sim-to-sim transfer harness.
//!
//! The crate simulates an optical tactile sensor: a deformable dome whose
//! internal pins are tracked in a 2D image plane. Contact with rigid
//! primitives drives a pushing/pulling/damping deformation model, the pin
//! layout is converted into fixed-length learning representations, and a
//! small fully-connected network is trained on domain-randomised datasets
//! to predict contact geometry. An evaluation harness sweeps randomisation
//! factors and measures transfer onto a hidden-parameter environment.
//!
//! Modules follow the data flow:
//!
//! - [`mesh`]: procedural sensor-tip geometry and pin layout
//! - [`collision`]: signed-distance contact detection against rigid shapes
//! - [`dynamics`]: membrane deformation and tap simulation
//! - [`representations`]: pin normalisation and tactile-signal encodings
//! - [`scenarios`]: tasks, domain randomisation, dataset generation
//! - [`learn`]: MLP, training loop, gradient verification
//! - [`evaluation`]: metrics, randomisation-factor sweeps
//! - [`config`]: TOML run configuration
//! - [`cli`]: command implementations behind the `tacsim` binary

pub mod cli;
pub mod collision;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod learn;
pub mod mesh;
pub mod representations;
pub mod scenarios;

pub use error::{Error, Result};
