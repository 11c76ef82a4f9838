//! Self-collaborative denoising for distantly supervised sequence labeling.
//!
//! Two teacher-student tagger pairs are trained on noisy BIO labels. Inside
//! each pair the EMA teacher picks tokens whose noisy label it agrees with
//! confidently and the student learns only from those; periodically each
//! teacher relabels the training set for the other pair.

pub mod cli;
pub mod corpus;
pub mod denoise;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod scdl;
pub mod tagger;

pub use error::{Error, Result};
