//! latlab: a desk-scale laboratory for streaming sequence-transducer latency
//! research.
//!
//! The crate trains tiny transducer models on synthetic frame-aligned tasks
//! and measures the latency metrics that matter for streaming recognition:
//! endpointer latency, partial latency, and prefetch latency. It contains
//!
//! - [`numerics`]: dense f64 tensors, stable log-space math, and a tape-based
//!   reverse-mode differentiation engine;
//! - [`transducer`]: the exact transducer lattice loss with emission
//!   regularization (FastEmit-style gradient scaling, constrained-alignment
//!   and end-of-query penalties);
//! - [`encoder`]: a streaming Conformer-style encoder (convolution before
//!   attention, group normalization, local self-attention, no positional
//!   encoding) plus cascaded non-causal layers for a second pass;
//! - [`decoder`]: prediction/joint networks and a streaming beam search with
//!   partial-hypothesis emission, end-of-query detection, and two-pass
//!   decoding that shares one decoder;
//! - [`prefetch`]: prefetch decision policies over stream traces;
//! - [`metrics`]: latency percentiles, prefetch rate, and token error rate;
//! - [`harness`]: synthetic data generation, the training loop, and the
//!   experiment runner that produces comparison tables.

pub mod decoder;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod prefetch;
pub mod transducer;

pub use error::{Error, Result};
