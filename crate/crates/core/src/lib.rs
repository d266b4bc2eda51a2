//! Histopathology-to-ultrasound distillation for prostate cancer detection.

pub mod bench;
pub mod cli;
pub mod datamodel;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod trainloop;

pub use error::{Error, Result};
