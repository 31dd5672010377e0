//! Concrete leakage measures mapping one generated output to `[0, 1]`, plus
//! the self-BLEU diversity measure and the ED development score.
//!
//! Tokenization for ROUGE-L and BLEU: split on Unicode whitespace, lowercase,
//! strip trailing non-alphanumeric characters, drop tokens that end up empty.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bounds::SampleSet;
use crate::{Error, Result};

/// Identifier of the tokenizer, echoed into reports.
pub const TOKENIZER: &str = "unicode-whitespace+lowercase+strip-trailing-punct";

/// Smoothing count substituted for zero n-gram matches.
pub const BLEU_SMOOTHING: f64 = 1e-9;
/// Highest n-gram order used by BLEU.
pub const BLEU_MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    source_text: String,
}

impl TokenSequence {
    pub fn tokenize(text: &str) -> Self {
        let tokens = text
            .split_whitespace()
            .map(|t| {
                t.to_lowercase()
                    .trim_end_matches(|c: char| !c.is_alphanumeric())
                    .to_string()
            })
            .filter(|t| !t.is_empty())
            .collect();
        Self {
            tokens,
            source_text: text.to_string(),
        }
    }

    /// Sequence made of already-split tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let source_text = tokens.join(" ");
        Self { tokens, source_text }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 between `candidate` and `reference`.
pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> f64 {
    let l = lcs_len(candidate.tokens(), reference.tokens());
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// 1 if any keyword occurs in `answer` (case-insensitive, whitespace-normalized).
pub fn keyword_leak<S: AsRef<str>>(answer: &str, keywords: &[S]) -> Result<u8> {
    if keywords.is_empty() {
        return Err(Error::domain("keyword list is empty"));
    }
    let keys: Vec<String> = keywords.iter().map(|k| normalize(k.as_ref())).collect();
    if keys.iter().any(String::is_empty) {
        return Err(Error::domain("keywords must contain non-whitespace text"));
    }
    let answer = normalize(answer);
    Ok(keys.iter().any(|k| answer.contains(k.as_str())) as u8)
}

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(order) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU of `hypothesis` against several references.
///
/// Counts are clipped by the maximum count in any single reference; the
/// brevity penalty uses the reference length closest to the hypothesis
/// (shorter wins ties).
pub fn sentence_bleu(hypothesis: &TokenSequence, references: &[&TokenSequence]) -> f64 {
    let hyp = hypothesis.tokens();
    if hyp.is_empty() || references.is_empty() {
        return 0.0;
    }
    let max_order = BLEU_MAX_ORDER.min(hyp.len());
    let mut log_sum = 0.0;
    for order in 1..=max_order {
        let hyp_counts = ngram_counts(hyp, order);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (gram, c) in ngram_counts(r.tokens(), order) {
                let e = max_ref.entry(gram).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matched: usize = hyp_counts
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let total = hyp.len() + 1 - order;
        let numerator = if matched == 0 {
            BLEU_SMOOTHING
        } else {
            matched as f64
        };
        log_sum += (numerator / total as f64).ln();
    }
    let c = hyp.len();
    let r = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap();
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    bp * (log_sum / max_order as f64).exp()
}

/// `1 - mean_i BLEU(g_i; all other generations)`, clamped to `[0, 1]`.
pub fn self_bleu_diversity(generations: &[TokenSequence]) -> Result<f64> {
    if generations.len() < 2 {
        return Err(Error::domain("self-BLEU needs at least two generations"));
    }
    let total: f64 = (0..generations.len())
        .map(|i| {
            let refs: Vec<&TokenSequence> = generations
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, g)| g)
                .collect();
            sentence_bleu(&generations[i], &refs)
        })
        .sum();
    Ok((1.0 - total / generations.len() as f64).clamp(0.0, 1.0))
}

/// Trade-off weight between mean and deviation in the ED score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdConfig {
    rho: f64,
}

impl EdConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if rho >= 0.0 && rho.is_finite() {
            Ok(Self { rho })
        } else {
            Err(Error::domain(format!("rho must be finite and >= 0, got {rho}")))
        }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

impl Default for EdConfig {
    fn default() -> Self {
        Self { rho: 2.0 }
    }
}

/// Sample mean plus `rho` times the population standard deviation.
pub fn ed_score(samples: &SampleSet, config: EdConfig) -> f64 {
    ed_from_moments(samples.mean(), samples.population_sd(), config)
}

pub fn ed_from_moments(mean: f64, sd: f64, config: EdConfig) -> f64 {
    mean + config.rho * sd
}
