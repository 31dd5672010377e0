//! Distribution-free bounds on a leakage score `X` in `[0, 1]`.
//!
//! Every bound is computed from `n` Monte Carlo scores and holds with
//! probability at least `1 - alpha` over the sampling:
//!
//! - [`clopper_pearson_upper`]: upper bound on `Pr(X = 1)` for binary scores.
//! - [`general_leakage_bound`]: upper bound on `Pr(X > x)`, simultaneously for
//!   every `x`, from a one-sided DKW band.
//! - [`expectation_bounds`]: sandwich on `E[X]` from left and right Riemann
//!   sums of a two-sided DKW band over a [`Partition`].
//! - [`std_dev_upper`]: upper bound on `sqrt(Var[X])` from the same band.
//!
//! The expectation band and the standard-deviation bound use one two-sided
//! band, so they hold jointly at level `1 - alpha`.
//!
//! # Sample size
//!
//! [`sample_size_for`] inverts the DKW inequality that is actually applied,
//! `alpha = exp(-2 n eps^2)` (one-sided) or `alpha = 2 exp(-2 n eps^2)`
//! (two-sided). The shortcut `n = ln(sqrt(1/alpha)) / eps^2` that is sometimes
//! quoted drops a factor of two in the exponent and is not used here.

use serde::{Deserialize, Serialize};

use crate::special::{beta_quantile, reg_inc_beta};
use crate::{Error, Result};

/// Width-sum tolerance for partitions.
const PARTITION_TOLERANCE: f64 = 1e-12;

/// Number of uniform cells used when no partition is given.
pub const DEFAULT_PARTITION_K: usize = 100;

/// `n` scores in `[0, 1]` from one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl SampleSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("a sample set needs at least one value"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::domain(format!("sample {i} = {v} lies outside [0, 1]")));
        }
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { values, sorted })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in insertion order.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    /// Standard deviation with divisor `n`.
    pub fn population_sd(&self) -> f64 {
        let mean = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / self.len() as f64).sqrt()
    }

    /// Number of values equal to 1, when every value is exactly 0 or 1.
    pub fn binary_successes(&self) -> Option<u64> {
        let mut ones = 0;
        for &v in &self.values {
            if v == 1.0 {
                ones += 1;
            } else if v != 0.0 {
                return None;
            }
        }
        Some(ones)
    }

    pub fn empirical_cdf(&self) -> EmpiricalCdf<'_> {
        EmpiricalCdf {
            sorted: &self.sorted,
        }
    }
}

/// Significance level `alpha` in `(0, 0.5]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SignificanceLevel(f64);

impl SignificanceLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha <= 0.5 {
            Ok(Self(alpha))
        } else {
            Err(Error::domain(format!("significance level must lie in (0, 0.5], got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for SignificanceLevel {
    fn default() -> Self {
        Self(0.01)
    }
}

impl TryFrom<f64> for SignificanceLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SignificanceLevel> for f64 {
    fn from(a: SignificanceLevel) -> f64 {
        a.0
    }
}

/// Whether a DKW band controls one tail or both tails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sidedness {
    OneSided,
    TwoSided,
}

impl Sidedness {
    pub fn as_str(self) -> &'static str {
        match self {
            Sidedness::OneSided => "one-sided",
            Sidedness::TwoSided => "two-sided",
        }
    }
}

/// Grid `0 = tau_0 <= ... <= tau_K = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    knots: Vec<f64>,
}

impl Partition {
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::domain("a partition needs at least two knots"));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::domain("partition knots must start at 0 and end at 1"));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::domain("partition knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("partition knots must be non-decreasing"));
        }
        let p = Self { knots };
        let total: f64 = p.widths().sum();
        if (total - 1.0).abs() > PARTITION_TOLERANCE {
            return Err(Error::domain(format!("partition widths sum to {total}, not 1")));
        }
        Ok(p)
    }

    /// `k` equal cells.
    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::domain("a partition needs at least one cell"));
        }
        let mut knots: Vec<f64> = (0..=k).map(|i| i as f64 / k as f64).collect();
        knots[k] = 1.0;
        Self::from_knots(knots)
    }

    /// Knots at `0`, every distinct sample value and `1`.
    pub fn sample_adapted(samples: &SampleSet) -> Self {
        let mut knots = Vec::with_capacity(samples.len() + 2);
        knots.push(0.0);
        for &v in samples.sorted() {
            if v > *knots.last().unwrap() && v < 1.0 {
                knots.push(v);
            }
        }
        knots.push(1.0);
        Self { knots }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of cells `K`.
    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_width(&self) -> f64 {
        self.widths().fold(0.0, f64::max)
    }
}

/// Right-continuous step function `x -> #{X_i <= x} / n`.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalCdf<'a> {
    sorted: &'a [f64],
}

impl<'a> EmpiricalCdf<'a> {
    pub fn from_sorted(sorted: &'a [f64]) -> Self {
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        Self { sorted }
    }

    pub fn support(&self) -> &'a [f64] {
        self.sorted
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x >= 1.0 {
            return 1.0;
        }
        let count = self.sorted.partition_point(|&v| v <= x);
        count as f64 / self.sorted.len() as f64
    }
}

/// Empirical CDF with envelopes `clamp(F_n(x) -/+ eps, 0, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct CdfBand<'a> {
    base: EmpiricalCdf<'a>,
    epsilon: f64,
    sidedness: Sidedness,
}

impl<'a> CdfBand<'a> {
    /// Band at confidence `1 - alpha` with the DKW half-width for `sidedness`.
    pub fn new(samples: &'a SampleSet, alpha: SignificanceLevel, sidedness: Sidedness) -> Self {
        Self {
            base: samples.empirical_cdf(),
            epsilon: dkw_epsilon(samples.len(), alpha, sidedness),
            sidedness,
        }
    }

    /// Band with an explicit half-width, e.g. `0` for the plug-in estimate.
    pub fn with_epsilon(base: EmpiricalCdf<'a>, epsilon: f64, sidedness: Sidedness) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::domain(format!("band half-width must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self {
            base,
            epsilon,
            sidedness,
        })
    }

    pub fn base(&self) -> EmpiricalCdf<'a> {
        self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn sidedness(&self) -> Sidedness {
        self.sidedness
    }

    pub fn lower(&self, x: f64) -> f64 {
        (self.base.eval(x) - self.epsilon).clamp(0.0, 1.0)
    }

    pub fn upper(&self, x: f64) -> f64 {
        (self.base.eval(x) + self.epsilon).clamp(0.0, 1.0)
    }
}

/// Sandwich `mu_lower <= E[X] <= mu_upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationBand {
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub partition_used: Partition,
    pub alpha: SignificanceLevel,
    /// Half-width of the CDF band the sums were taken over.
    pub epsilon: f64,
}

impl ExpectationBand {
    pub fn width(&self) -> f64 {
        self.mu_upper - self.mu_lower
    }
}

/// One-sided Clopper-Pearson upper bound on a binomial proportion.
///
/// Returns the `(1 - alpha)`-quantile of `Beta(successes + 1, n - successes)`,
/// or exactly 1 when `successes == n`.
pub fn clopper_pearson_upper(successes: u64, n: u64, alpha: SignificanceLevel) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("binomial bound needs n >= 1"));
    }
    if successes > n {
        return Err(Error::domain(format!("successes ({successes}) exceed trials ({n})")));
    }
    if successes == n {
        return Ok(1.0);
    }
    let bound = beta_quantile(1.0 - alpha.value(), successes as f64 + 1.0, (n - successes) as f64)?;
    Ok(bound.max(successes as f64 / n as f64))
}

/// DKW half-width `sqrt(ln(1/alpha) / 2n)` or `sqrt(ln(2/alpha) / 2n)`.
pub fn dkw_epsilon(n: usize, alpha: SignificanceLevel, sidedness: Sidedness) -> f64 {
    assert!(n >= 1, "dkw_epsilon needs n >= 1");
    (tail_log(alpha, sidedness) / (2.0 * n as f64)).sqrt()
}

fn tail_log(alpha: SignificanceLevel, sidedness: Sidedness) -> f64 {
    match sidedness {
        Sidedness::OneSided => (1.0 / alpha.value()).ln(),
        Sidedness::TwoSided => (2.0 / alpha.value()).ln(),
    }
}

/// Smallest `n` with `dkw_epsilon(n, alpha, sidedness) <= epsilon`.
pub fn sample_size_for(epsilon: f64, alpha: SignificanceLevel, sidedness: Sidedness) -> Result<u64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::domain(format!("target half-width must be positive, got {epsilon}")));
    }
    let raw = (tail_log(alpha, sidedness) / (2.0 * epsilon * epsilon)).ceil();
    if raw > 1e15 {
        return Err(Error::domain(format!("half-width {epsilon} needs an impractical sample size")));
    }
    let mut n = (raw as u64).max(1);
    // ceil of a rounded quotient can be off by one in either direction
    while n > 1 && dkw_epsilon(n as usize - 1, alpha, sidedness) <= epsilon {
        n -= 1;
    }
    while dkw_epsilon(n as usize, alpha, sidedness) > epsilon {
        n += 1;
    }
    Ok(n)
}

/// Upper bound on `Pr(X > x)`: `min(1, 1 - F_n(x) + eps)` with one-sided `eps`.
pub fn general_leakage_bound(samples: &SampleSet, alpha: SignificanceLevel, x: f64) -> Result<f64> {
    let band = CdfBand::new(samples, alpha, Sidedness::OneSided);
    exceedance_bound(&band, x)
}

/// [`general_leakage_bound`] over an existing band.
pub fn exceedance_bound(band: &CdfBand<'_>, x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("leakage threshold {x} outside [0, 1]")));
    }
    Ok((1.0 - band.base().eval(x) + band.epsilon()).min(1.0))
}

/// Expectation band from a two-sided DKW band over `partition`.
pub fn expectation_bounds(
    samples: &SampleSet,
    alpha: SignificanceLevel,
    partition: &Partition,
) -> ExpectationBand {
    let band = CdfBand::new(samples, alpha, Sidedness::TwoSided);
    expectation_from_band(&band, alpha, partition)
}

/// Left/right Riemann sums of `band` over `partition`.
///
/// `mu_upper = 1 - sum_{i<K} d_i lower(tau_i)` and
/// `mu_lower = 1 - sum_{i>=1} d_{i-1} upper(tau_i)`, both clamped to `[0, 1]`.
pub fn expectation_from_band(
    band: &CdfBand<'_>,
    alpha: SignificanceLevel,
    partition: &Partition,
) -> ExpectationBand {
    let knots = partition.knots();
    let mut left = 0.0;
    let mut right = 0.0;
    for w in knots.windows(2) {
        let width = w[1] - w[0];
        left += width * band.lower(w[0]);
        right += width * band.upper(w[1]);
    }
    ExpectationBand {
        mu_lower: (1.0 - right).clamp(0.0, 1.0),
        mu_upper: (1.0 - left).clamp(0.0, 1.0),
        partition_used: partition.clone(),
        alpha,
        epsilon: band.epsilon(),
    }
}

/// Upper bound on the standard deviation of `X`.
///
/// `band` must come from the same samples, `alpha` and partition, via
/// [`expectation_bounds`].
pub fn std_dev_upper(
    samples: &SampleSet,
    alpha: SignificanceLevel,
    partition: &Partition,
    band: &ExpectationBand,
) -> Result<f64> {
    if band.partition_used != *partition {
        return Err(Error::domain("expectation band was computed on a different partition"));
    }
    if band.alpha != alpha {
        return Err(Error::domain(format!(
            "expectation band has alpha {}, requested {}",
            band.alpha.value(),
            alpha.value()
        )));
    }
    let cdf_band = CdfBand::new(samples, alpha, Sidedness::TwoSided);
    if cdf_band.epsilon() != band.epsilon {
        return Err(Error::domain("expectation band half-width does not match these samples"));
    }
    Ok(std_dev_from_band(&cdf_band, band))
}

/// Worst-case squared deviation per cell: `max (kappa - a)^2` over the cell
/// endpoints `kappa` and the expectation bounds `a`.
fn cell_coefficients(knots: &[f64], mu_lower: f64, mu_upper: f64) -> Vec<f64> {
    knots
        .windows(2)
        .map(|w| {
            [w[0], w[1]]
                .iter()
                .flat_map(|&k| [(k - mu_lower).powi(2), (k - mu_upper).powi(2)])
                .fold(0.0, f64::max)
        })
        .collect()
}

/// [`std_dev_upper`] over an explicit CDF band, without consistency checks.
///
/// With `eta_i` the cell coefficients and `d_i = eta_{i-1} - eta_i`,
/// `Var[X] <= eta_{K-1} + sum_{i=1}^{K-1} d_i F(tau_i)`, and each `F(tau_i)` is
/// replaced by the upper envelope when `d_i >= 0` and the lower one otherwise.
/// Probability mass at exactly 0 is charged to the first cell, so the
/// `F(tau_0)` term is the left limit `F(0-) = 0`.
pub fn std_dev_from_band(band: &CdfBand<'_>, expectation: &ExpectationBand) -> f64 {
    let knots = expectation.partition_used.knots();
    let eta = cell_coefficients(knots, expectation.mu_lower, expectation.mu_upper);
    let k = eta.len();
    let mut var = eta[k - 1];
    for i in 1..k {
        let d = eta[i - 1] - eta[i];
        let f = if d >= 0.0 {
            band.upper(knots[i])
        } else {
            band.lower(knots[i])
        };
        var += d * f;
    }
    var.max(0.0).sqrt()
}

/// CDF of `Beta(a, b)`, re-exported for callers that build reference curves.
pub fn beta_cdf(a: f64, b: f64, x: f64) -> Result<f64> {
    reg_inc_beta(a, b, x)
}
