//! Algorithmic core of the scorestream pipeline.
//!
//! Everything in this crate is pure computation: tokenization, vocabulary
//! construction, paragraph-vector training and inference, score regression,
//! fit metrics, rolling-window series math and alert-rule evaluation.
//! No IO, no clocks, no global state. The crate is `no_std` (with `alloc`)
//! so the numeric kernels stay portable and trivially testable; file formats,
//! the broker, the time-series store and the CLI live in the companion
//! `scorestream` crate.
//!
//! Determinism is a hard contract here: every routine that consumes
//! randomness takes an explicit seed and uses a fixed-algorithm generator,
//! so identical inputs produce bit-identical outputs.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod alerts;
pub mod embedding;
pub mod matrix;
pub mod metrics;
pub mod real;
pub mod regression;
pub mod series;
pub mod tokenize;
pub mod vocab;

pub use embedding::{InferredVector, ParagraphVectorModel, PvHyperparams, PvTrainer};
pub use matrix::Matrix;
pub use metrics::{evaluate_r_squared, EvaluationReport};
pub use regression::{LossKind, RegressionModel, SgdParams, Standardizer};
pub use series::{downsample, rolling_bands, Aggregator, Bucket, RollingBand};
pub use tokenize::tokenize;
pub use vocab::{NoiseTable, Vocabulary};

/// FNV-1a over a token sequence, with a separator between tokens so that
/// `["ab","c"]` and `["a","bc"]` hash differently. Used to derive
/// per-document inference seeds from the model seed.
pub fn hash_tokens(tokens: &[alloc::string::String]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
