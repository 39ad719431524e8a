//! Confidence-guided diffusion denoising for amplitude-modulated
//! continuous-wave (AMCW) time-of-flight depth.
//!
//! The pipeline works on raw I/Q correlation measurements instead of depth:
//! a simulator produces ideal and noisy correlation frames for procedural
//! scenes, a range codec compresses their dynamic range into `[-1, 1]`, a
//! gradient-based confidence map is derived from the noisy depth, and a
//! small diffusion denoiser (frozen prior plus a zero-convolution guidance
//! branch) is trained to predict the injected noise. Deterministic DDIM
//! sampling reconstructs denoised correlations, which are converted back to
//! depth and scored with standard depth metrics.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`tofmodel`] - forward/inverse ToF model, sensor noise, scene synthesis
//! * [`rangecodec`] - dynamic-range normalization of correlation pairs
//! * [`confidence`] - Sobel-gradient confidence maps
//! * [`scheduler`] - DDPM forward process and DDIM sampling
//! * [`nn`] - the denoiser: base U-Net and guidance branch with backprop
//! * [`training`] - epsilon-prediction loss, Adam, two-stage training
//! * [`evalkit`] - depth metrics, error maps, bilateral baseline
//! * [`io`] - PFM images, dataset manifests, run configs, checkpoints
//! * [`pipeline`] - dataset synthesis and the end-to-end denoise loop

pub mod confidence;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod io;
pub mod nn;
pub mod pipeline;
pub mod rangecodec;
pub mod rng;
pub mod scheduler;
pub mod tensor;
pub mod tofmodel;
pub mod training;

pub use error::{Error, Result};
