//! Road-surface anomaly detection from vehicle driving noise.
//!
//! Audio is turned into MFCC windows, a reconstruction network trained on
//! normal (dry-road) windows reproduces its input, and windows whose
//! reconstruction distance exceeds `mu + 1.5 sigma` of the training scores
//! are flagged as abnormal (wet road).

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod mfcc;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
