//! Image-to-joint regression for a tendon-driven continuum arm.
//!
//! The crate renders labeled synthetic scenes of the arm ([`arm_sim`],
//! [`raster`]), corrupts them ([`augment`]), fits a small VGG-style CNN
//! written from scratch ([`nn`]) with a two-stage transfer-learning
//! protocol ([`train`]) and reports errors, robustness and feature maps
//! ([`evalreport`]). [`cli`] wires everything into one binary.

pub mod arm_sim;
pub mod augment;
pub mod cli;
pub mod evalreport;
pub mod nn;
pub mod raster;
pub mod rng;
pub mod train;

pub use arm_sim::{ArmConfig, CameraConfig};
pub use nn::{ModelSpec, ModelState, Tensor};
pub use train::{Dataset, Preset, TrainConfig};
