//! Cross-view correspondence learning for ground-to-satellite image retrieval.
//!
//! The crate holds the numerical core of the model and its training:
//!
//! * a two-branch, four-stage convolutional encoder ([`encoder`], [`model`]),
//! * learnable view neural maps, the neural bird's-eye-view converter that
//!   maps ground maps into satellite space, and map-guided feature
//!   recalibration ([`correspondence`]),
//! * the symmetric InfoNCE objective ([`objective`]),
//! * AdamW with a warmup/cosine schedule and a batch gradient step ([`optim`],
//!   [`schedule`], [`train`]),
//! * exhaustive retrieval and its metrics ([`retrieval`]),
//! * a deterministic synthetic ground/overhead pair generator ([`synth`]).
//!
//! Everything here is `no_std` + `alloc`. File formats, the command line and
//! the training driver live in the `clnet` crate.
//!
//! All differentiable operations come as explicit forward/backward pairs and
//! are generic over [`Scalar`], so the same code trains in `f32` and is
//! gradient-checked in `f64`.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod correspondence;
pub mod encoder;
mod error;
pub mod grid;
pub mod model;
pub mod objective;
pub mod optim;
pub mod preset;
pub mod retrieval;
mod scalar;
pub mod schedule;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use grid::{FeatureGrid, Grid, ImageTensor, ViewId};
pub use model::{Model, ModelConfig, Params};
pub use preset::{AblationPreset, ResidualSource};
pub use scalar::Scalar;
