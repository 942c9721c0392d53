//! Leaky integrate-and-fire spiking network decoder for continuous regression.
//!
//! The crate covers the whole pipeline for decoding finger velocities from
//! frame-averaged spiking-band-power features:
//!
//! * [`lif`]: neuron kernels (membrane update, spikes, surrogate derivative).
//! * [`network`]: the fully connected spiking decoder with threshold-scaled
//!   batch normalization, unfolded (training) and streaming (inference) passes.
//! * [`train`]: spatio-temporal backpropagation, AdamW and the training loop.
//! * [`data`]: frame files, chronological split, standardization and a
//!   synthetic cosine-tuning generator.
//! * [`kf`]: linear Kalman filter baseline.
//! * [`profiler`]: spike accounting and MAC/ADD/memory cost model.
//! * [`cli`]: the command-line front end.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Kernels walk several equally long slices in lockstep by index.
#![allow(clippy::needless_range_loop)]

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod kf;
pub mod lif;
pub mod metrics;
pub mod network;
pub mod profiler;
pub mod real;
pub mod train;

pub use error::{Error, Result};
pub use real::Real;
