//! Numerical core for joint electrode detection and catheter segmentation.
//!
//! Everything here is allocation-only `no_std`: a reverse-mode tape over
//! `f64` tensors, the encoder/attention/decoder network with its three heads,
//! the task losses, KPI-driven sample and task prioritization, evaluation
//! metrics, and the procedural sample generator. File formats, configuration
//! and the training driver live in the `cathnet` crate.
#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod prioritizer;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use tensor::{Tape, Tensor, Var};
