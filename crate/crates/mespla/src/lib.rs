//! Multi-modal environmental sensing path-loss prediction testbed.
//!
//! A self-contained pipeline for V2I path-loss experiments on synthetic
//! data: a deterministic urban T-junction scene with a log-distance labeling
//! oracle, camera/lidar/GPS sensor rendering, the preprocessing chain
//! (HSV brightness manipulation, point-cloud filtering, Miller projection),
//! a reverse-mode autodiff engine, a multi-modal feature extraction and
//! fusion network with attention weighting, and an experiment harness for
//! RMSE/CDF evaluation, modality ablations, and lighting-robustness studies.
//!
//! Start with the runnable examples (`cargo run --release -p mespla
//! --example scene_tour`) or the `mespla` CLI for the end-to-end pipeline.

pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod mfef;
pub mod preprocess;
pub mod scene;
pub mod seeds;
pub mod sensors;

pub use error::{Error, Result};
