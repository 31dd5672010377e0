//! Decoding-side computations over externally supplied token distributions.
//!
//! Covers the entropy-optimization objective (per-token entropy averaged over
//! a sequence, weighted on forget and retain batches), sequence confidence,
//! adaptive temperature and temperature/top-p sampling. All logarithms are
//! natural, so entropies are in nats.
//!
//! # Sequence distribution files
//!
//! One sequence per file, plain text:
//!
//! ```text
//! # probe-bounds seqdist vocab=3 steps=2
//! 0.5 0.25 0.25
//! 0.9 0.05 0.05
//! ```
//!
//! The header fixes the vocabulary size and the number of steps; each
//! following non-empty line holds one step's probabilities as decimal text.
//! Lines starting with `#` after the header are comments. Confidence can be
//! computed incrementally over a growing prefix during generation, or post hoc
//! over a finished sequence; both are the same call on different inputs.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Tolerance on `sum(probs) == 1`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

const SEQDIST_MAGIC: &str = "# probe-bounds seqdist";

/// Next-token probabilities over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("token distribution over an empty vocabulary"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::domain("token probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::domain(format!("token probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::domain("token distribution over an empty vocabulary"));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::domain("logits must be finite"));
        }
        Ok(Self {
            probs: softmax(logits),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    /// Index of the most likely token, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn max_prob(&self) -> f64 {
        self.probs[self.argmax()]
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Per-step distributions of one generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDistribution {
    steps: Vec<TokenDistribution>,
}

impl SequenceDistribution {
    pub fn new(steps: Vec<TokenDistribution>) -> Result<Self> {
        let Some(first) = steps.first() else {
            return Err(Error::domain("a sequence needs at least one step"));
        };
        let vocab = first.vocab_size();
        if let Some(i) = steps.iter().position(|s| s.vocab_size() != vocab) {
            return Err(Error::domain(format!(
                "step {i} has vocabulary size {}, expected {vocab}",
                steps[i].vocab_size()
            )));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[TokenDistribution] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.steps[0].vocab_size()
    }

    /// Parse the textual matrix format described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (hline, header) = lines
            .by_ref()
            .find(|(_, l)| !l.is_empty())
            .ok_or_else(|| Error::ingestion(1, "empty sequence distribution file"))?;
        let rest = header
            .strip_prefix(SEQDIST_MAGIC)
            .ok_or_else(|| Error::ingestion(hline, format!("expected header starting with '{SEQDIST_MAGIC}'")))?;
        let mut vocab = None;
        let mut steps = None;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::ingestion(hline, format!("malformed header field '{field}'")))?;
            let value: usize = value
                .parse()
                .map_err(|_| Error::ingestion(hline, format!("header field '{field}' is not an integer")))?;
            match key {
                "vocab" => vocab = Some(value),
                "steps" => steps = Some(value),
                _ => return Err(Error::ingestion(hline, format!("unknown header field '{key}'"))),
            }
        }
        let (Some(vocab), Some(m)) = (vocab, steps) else {
            return Err(Error::ingestion(hline, "header must declare vocab= and steps="));
        };

        let mut parsed = Vec::with_capacity(m);
        let mut last_line = hline;
        for (lineno, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            last_line = lineno;
            let probs = line
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::ingestion(lineno, format!("bad probability: {e}")))?;
            if probs.len() != vocab {
                return Err(Error::ingestion(
                    lineno,
                    format!("expected {vocab} probabilities, found {}", probs.len()),
                ));
            }
            let dist = TokenDistribution::from_probs(probs).map_err(|e| Error::ingestion(lineno, e.to_string()))?;
            parsed.push(dist);
        }
        if parsed.len() != m {
            return Err(Error::ingestion(
                last_line,
                format!("header declares {m} steps, found {}", parsed.len()),
            ));
        }
        Self::new(parsed).map_err(|e| Error::ingestion(hline, e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{SEQDIST_MAGIC} vocab={} steps={}\n", self.vocab_size(), self.len());
        for step in &self.steps {
            let row: Vec<String> = step.probs().iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

/// Entropy `-sum q_i ln q_i`, with `0 ln 0 = 0`.
pub fn token_entropy(dist: &TokenDistribution) -> f64 {
    entropy(dist.probs())
}

fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&q| q > 0.0)
        .map(|&q| q * q.ln())
        .sum::<f64>()
}

/// Mean per-step entropy of a sequence.
pub fn sequence_entropy_loss(seq: &SequenceDistribution) -> f64 {
    seq.steps().iter().map(token_entropy).sum::<f64>() / seq.len() as f64
}

/// Gradient of `H(softmax(logits))` with respect to the logits:
/// `-q_j (ln q_j + H)`.
pub fn entropy_gradient(logits: &[f64]) -> Result<Vec<f64>> {
    let dist = TokenDistribution::from_logits(logits)?;
    let h = token_entropy(&dist);
    Ok(dist
        .probs()
        .iter()
        .map(|&q| if q > 0.0 { -q * (q.ln() + h) } else { 0.0 })
        .collect())
}

/// Entropy weights on forget (`lambda_f > 0`) and retain (`lambda_r < 0`) data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyObjectiveConfig {
    lambda_f: f64,
    lambda_r: f64,
}

impl EntropyObjectiveConfig {
    pub fn new(lambda_f: f64, lambda_r: f64) -> Result<Self> {
        if !(lambda_f > 0.0 && lambda_f.is_finite()) {
            return Err(Error::domain(format!("lambda_f must be positive, got {lambda_f}")));
        }
        if !(lambda_r < 0.0 && lambda_r.is_finite()) {
            return Err(Error::domain(format!("lambda_r must be negative, got {lambda_r}")));
        }
        Ok(Self { lambda_f, lambda_r })
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn lambda_r(&self) -> f64 {
        self.lambda_r
    }
}

fn mean_or_zero(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// `unlearn_loss + lambda_f * mean(forget) + lambda_r * mean(retain)`.
///
/// An empty batch contributes zero.
pub fn entropy_objective(
    unlearn_loss_value: f64,
    forget_losses: &[f64],
    retain_losses: &[f64],
    config: &EntropyObjectiveConfig,
) -> f64 {
    unlearn_loss_value
        + config.lambda_f * mean_or_zero(forget_losses)
        + config.lambda_r * mean_or_zero(retain_losses)
}

/// Mean over steps of the most likely token's probability.
pub fn sequence_confidence(seq: &SequenceDistribution) -> f64 {
    seq.steps().iter().map(TokenDistribution::max_prob).sum::<f64>() / seq.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingPolicy {
    pub base_temperature: f64,
    pub confidence_threshold: f64,
    pub top_p: f64,
}

impl DecodingPolicy {
    pub fn new(base_temperature: f64, confidence_threshold: f64, top_p: f64) -> Result<Self> {
        if !(base_temperature >= 0.0 && base_temperature.is_finite()) {
            return Err(Error::domain(format!("temperature must be >= 0, got {base_temperature}")));
        }
        if !(0.0..=1.0).contains(&confidence_threshold) {
            return Err(Error::domain(format!(
                "confidence threshold must lie in [0, 1], got {confidence_threshold}"
            )));
        }
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::domain(format!("top_p must lie in (0, 1], got {top_p}")));
        }
        Ok(Self {
            base_temperature,
            confidence_threshold,
            top_p,
        })
    }
}

impl Default for DecodingPolicy {
    fn default() -> Self {
        Self {
            base_temperature: 1.0,
            confidence_threshold: 0.9,
            top_p: 0.9,
        }
    }
}

/// Greedy (0) when `confidence` is strictly above the threshold, else the base temperature.
pub fn effective_temperature(confidence: f64, policy: &DecodingPolicy) -> f64 {
    if confidence > policy.confidence_threshold {
        0.0
    } else {
        policy.base_temperature
    }
}

/// Temperature-scaled probabilities `softmax(ln p / temperature)`.
pub fn apply_temperature(probs: &[f64], temperature: f64) -> Vec<f64> {
    debug_assert!(temperature > 0.0);
    let scaled: Vec<f64> = probs
        .iter()
        .map(|&p| if p > 0.0 { p.ln() / temperature } else { f64::NEG_INFINITY })
        .collect();
    softmax(&scaled)
}

/// Smallest probability-sorted prefix with mass `>= top_p`, renormalized.
///
/// Returns `(token index, probability)` pairs in descending probability
/// order; ties keep ascending index order.
pub fn nucleus_filter(probs: &[f64], top_p: f64) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    kept.into_iter().map(|i| (i, probs[i] / mass)).collect()
}

/// Draw one token index.
///
/// `temperature == 0` is greedy argmax. Otherwise probabilities are tempered,
/// cut to the top-p nucleus and sampled from `rng`.
pub fn sample_token<R: Rng + ?Sized>(dist: &TokenDistribution, temperature: f64, top_p: f64, rng: &mut R) -> usize {
    if temperature <= 0.0 {
        return dist.argmax();
    }
    let tempered = apply_temperature(dist.probs(), temperature);
    let nucleus = nucleus_filter(&tempered, top_p);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in &nucleus {
        acc += p;
        if u < acc {
            return i;
        }
    }
    nucleus.last().map(|&(i, _)| i).unwrap_or_else(|| dist.argmax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn dist(p: &[f64]) -> TokenDistribution {
        TokenDistribution::from_probs(p.to_vec()).unwrap()
    }

    #[test]
    fn distribution_validation() {
        assert!(TokenDistribution::from_probs(vec![0.5, 0.4]).is_err());
        assert!(TokenDistribution::from_probs(vec![1.2, -0.2]).is_err());
        assert!(TokenDistribution::from_probs(vec![]).is_err());
        assert!(TokenDistribution::from_logits(&[1.0, f64::NAN]).is_err());
        let d = TokenDistribution::from_logits(&[0.0, 0.0]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(token_entropy(&dist(&[0.0, 1.0, 0.0])), 0.0);
        for v in [2usize, 5, 50] {
            let u = dist(&vec![1.0 / v as f64; v]);
            assert!((token_entropy(&u) - (v as f64).ln()).abs() < 1e-12);
        }
        assert!((token_entropy(&dist(&[0.5, 0.25, 0.25])) - 1.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_maximizes_entropy() {
        let base = vec![0.25; 4];
        let h = token_entropy(&dist(&base));
        for (i, j) in [(0, 1), (1, 3), (2, 0)] {
            for delta in [1e-3, 0.05, 0.2] {
                let mut p = base.clone();
                p[i] += delta;
                p[j] -= delta;
                assert!(token_entropy(&dist(&p)) < h);
            }
        }
    }

    #[test]
    fn sequence_loss_examples() {
        let one_hot = dist(&[1.0, 0.0, 0.0, 0.0]);
        let uniform = dist(&[0.25; 4]);
        let s = SequenceDistribution::new(vec![one_hot.clone(), one_hot.clone()]).unwrap();
        assert_eq!(sequence_entropy_loss(&s), 0.0);
        let s = SequenceDistribution::new(vec![one_hot, uniform.clone()]).unwrap();
        assert!((sequence_entropy_loss(&s) - 4f64.ln() / 2.0).abs() < 1e-15);
        let s = SequenceDistribution::new(vec![uniform.clone()]).unwrap();
        assert_eq!(sequence_entropy_loss(&s), token_entropy(&uniform));
        assert!(SequenceDistribution::new(vec![]).is_err());
        assert!(SequenceDistribution::new(vec![uniform, dist(&[1.0])]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = entropy_gradient(&[0.3; 7]).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        let a = entropy_gradient(&[2.0, 0.0, 0.0]).unwrap();
        let b = entropy_gradient(&[12.0, 10.0, 10.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
        // gradient sums to zero along the shift direction
        assert!(a.iter().sum::<f64>().abs() < 1e-12);
        assert!(entropy_gradient(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn objective_examples() {
        let cfg = EntropyObjectiveConfig::new(1.0, -0.25).unwrap();
        let v = entropy_objective(0.7, &[0.3, 0.5], &[0.9], &cfg);
        assert!((v - 0.875).abs() < 1e-12);
        assert_eq!(entropy_objective(0.7, &[], &[], &cfg), 0.7);
        let near = EntropyObjectiveConfig::new(1.0, -1e-12).unwrap();
        assert!((entropy_objective(0.7, &[0.4], &[0.9], &near) - 1.1).abs() < 1e-11);
        assert!(EntropyObjectiveConfig::new(0.0, -0.1).is_err());
        assert!(EntropyObjectiveConfig::new(1.0, 0.0).is_err());
    }

    #[test]
    fn confidence_examples() {
        let s = SequenceDistribution::new(vec![dist(&[0.0, 1.0]), dist(&[1.0, 0.0])]).unwrap();
        assert_eq!(sequence_confidence(&s), 1.0);
        let s = SequenceDistribution::new(vec![dist(&[0.25; 4]); 3]).unwrap();
        assert!((sequence_confidence(&s) - 0.25).abs() < 1e-15);
        let s = SequenceDistribution::new(vec![dist(&[0.9, 0.1]), dist(&[0.3, 0.7])]).unwrap();
        assert!((sequence_confidence(&s) - 0.8).abs() < 1e-15);
        let s = SequenceDistribution::new(vec![dist(&[0.0, 1.0]), dist(&[0.999, 0.001])]).unwrap();
        assert!(sequence_confidence(&s) < 1.0);
    }

    #[test]
    fn temperature_rule() {
        let policy = DecodingPolicy::default();
        assert_eq!(effective_temperature(0.95, &policy), 0.0);
        assert_eq!(effective_temperature(0.5, &policy), 1.0);
        assert_eq!(effective_temperature(0.9, &policy), 1.0);
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let t = effective_temperature(i as f64 / 100.0, &policy);
            assert!(t <= prev);
            prev = t;
        }
        assert!(DecodingPolicy::new(1.0, 0.9, 0.0).is_err());
        assert!(DecodingPolicy::new(-1.0, 0.9, 0.5).is_err());
    }

    #[test]
    fn nucleus_rules() {
        let kept = nucleus_filter(&[0.5, 0.3, 0.2], 0.7);
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1]);
        assert!((kept[0].1 - 0.625).abs() < 1e-15 && (kept[1].1 - 0.375).abs() < 1e-15);
        // ties broken by index
        let kept = nucleus_filter(&[0.25, 0.25, 0.25, 0.25], 0.5);
        assert_eq!(kept.iter().map(|k| k.0).collect::<Vec<_>>(), vec![0, 1]);
        // crossing token included
        assert_eq!(nucleus_filter(&[0.5, 0.3, 0.2], 0.51).len(), 2);
        assert_eq!(nucleus_filter(&[0.5, 0.3, 0.2], 1.0).len(), 3);
    }

    #[test]
    fn nucleus_preserves_ratios() {
        let p = [0.05, 0.4, 0.1, 0.3, 0.15];
        let kept = nucleus_filter(&p, 0.8);
        for a in &kept {
            for b in &kept {
                assert!((a.1 / b.1 - p[a.0] / p[b.0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn greedy_sampling() {
        let d = dist(&[0.2, 0.4, 0.4]);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        assert_eq!(sample_token(&d, 0.0, 0.9, &mut rng), 1);
    }

    #[test]
    fn seqdist_text_roundtrip() {
        let s = SequenceDistribution::new(vec![dist(&[0.5, 0.25, 0.25]), dist(&[0.1, 0.7, 0.2])]).unwrap();
        let text = s.to_text();
        assert!(text.starts_with("# probe-bounds seqdist vocab=3 steps=2\n"));
        assert_eq!(SequenceDistribution::parse(&text).unwrap(), s);
    }

    #[test]
    fn seqdist_parse_errors() {
        let bad_header = "0.5 0.5\n";
        assert!(matches!(SequenceDistribution::parse(bad_header), Err(Error::Ingestion { line: 1, .. })));
        let short_row = "# probe-bounds seqdist vocab=3 steps=1\n0.5 0.5\n";
        assert!(matches!(SequenceDistribution::parse(short_row), Err(Error::Ingestion { line: 2, .. })));
        let unnormalized = "# probe-bounds seqdist vocab=2 steps=1\n# comment\n0.5 0.6\n";
        assert!(matches!(SequenceDistribution::parse(unnormalized), Err(Error::Ingestion { line: 3, .. })));
        let count = "# probe-bounds seqdist vocab=2 steps=2\n0.5 0.5\n";
        assert!(SequenceDistribution::parse(count).is_err());
    }
}
