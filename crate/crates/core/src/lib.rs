//! Distribution-free probabilistic evaluation of generative model outputs.
//!
//! A model is queried `n` times, every output is mapped to a leakage score in
//! `[0, 1]`, and the resulting [`SampleSet`](bounds::SampleSet) is turned into
//! metrics that hold with probability at least `1 - alpha`:
//!
//! - [`bounds`]: Clopper-Pearson upper bound for binary scores, DKW-based
//!   exceedance bound, expectation band and standard-deviation upper bound.
//! - [`scores`]: ROUGE-L, keyword leakage, self-BLEU diversity and the ED score.
//! - [`decoding`]: entropy objective, sequence confidence, adaptive temperature
//!   and top-p sampling over supplied token distributions.
//! - [`coverage`]: seeded Monte Carlo harness that measures how often each bound
//!   is violated on distributions with known ground truth.
//! - [`report`]: the end-to-end evaluation pipeline behind the CLI.

pub mod bounds;
pub mod coverage;
pub mod decoding;
mod error;
pub mod report;
pub mod scores;
pub mod special;

pub use error::{Error, Result};

/// Schema tag written into every report document.
pub const SCHEMA: &str = "probe-bounds/1";
