//! Hourly step-count imputation with a multi-timescale sparse self-attention
//! model, a suite of baseline imputers, and the evaluation machinery used to
//! compare them.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command-line
//! tool and anything else touching the operating system live in the
//! `stepimpute` companion crate.
//!
//! Module map:
//!
//! - [`series`]: hourly blocks, participant series, normalization statistics
//!   and the elementary rate/count transforms.
//! - [`ingest`]: minute-to-hour rollup, day-of-week alignment and the seeded
//!   synthetic cohort generator.
//! - [`window`]: the 9×23 multi-timescale context grid, its mask and the
//!   relative-position index.
//! - [`nn`]: hand-differentiated numeric kernels, Adam and a finite-difference
//!   gradient checker.
//! - [`model`]: local activity profiles, the attention imputer and its
//!   training loop.
//! - [`baselines`]: fill methods, kNN, regression and chained-equation
//!   iterative imputation.
//! - [`eval`]: metrics, stratified splits, binning and autocorrelation.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(feature = "parallel")]
extern crate std;

pub mod baselines;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod math;
pub mod model;
pub mod nn;
mod par;
pub mod rng;
pub mod series;
pub mod window;

pub use error::{Error, Result};
pub use series::{HourMask, HourlyBlock, NormStats, ParticipantSeries};
pub use window::{ContextWindow, WindowShape};
