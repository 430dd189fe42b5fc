//! Prompt-conditioned B-mode image model with a cancer heatmap head and a csPCa risk head,
//! trained with needle-involvement weak supervision, calibrated into a 1–5 risk score by
//! histogram matching and evaluated with core-, involvement- and patient-level protocols.
//!
//! The crate also ships a deterministic generator of speckle-textured synthetic biopsy data
//! with known ground truth, used throughout the tests and examples.

pub mod cli;
pub mod data;
pub mod error;

pub use error::{Error, Result};
pub mod nn;
pub(crate) mod seeding;
pub mod model;
pub mod objective;
pub mod metrics;
pub mod riskscore;
pub mod synth;
pub mod trainer;
