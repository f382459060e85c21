//! Learning contact-force profiles from demonstrations and reproducing them
//! with a simulated admittance-controlled probe.
//!
//! Pipeline: [`demo`] recordings → [`alignment`] (Soft-DTW) → [`gmm`]
//! (EM + GMR reference) → [`kmp`] (kernelized movement primitive with
//! via-points) → [`control`] (closed-loop reproduction) → [`metrics`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod control;
pub mod demo;
pub mod error;
pub mod gmm;
pub mod image;
pub mod kmp;
pub mod linalg;
pub mod metrics;

pub use error::{Error, ErrorKind, Result};
