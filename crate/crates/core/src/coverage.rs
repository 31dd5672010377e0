//! Monte Carlo coverage harness for the bounds in [`crate::bounds`].
//!
//! Each trial draws `n` scores from a [`KnownDistribution`], computes every
//! applicable bound and compares it to the analytic truth. Trial `t` draws
//! from its own ChaCha20 stream (`seed`, stream `t`), so a trial's samples do
//! not depend on how many other trials run or in which order. Trials run in
//! parallel and are reduced in trial-index order, so reports are bit-identical
//! for a given seed.
//!
//! For discrete distributions with small support, [`exact_violation_rates`]
//! replaces sampling by enumerating every possible sample composition.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    clopper_pearson_upper, exceedance_bound, expectation_from_band, std_dev_from_band, CdfBand, Partition,
    SampleSet, Sidedness, SignificanceLevel,
};
use crate::special::{beta_quantile, reg_inc_beta};
use crate::{Error, Result, SCHEMA};

/// Generator identity recorded in reports.
pub const RNG_ID: &str = "chacha20 seed_from_u64(seed) stream=trial";

/// Number of evenly spaced thresholds `0, 0.05, ..., 1` for the CDF checks.
pub const GRID_POINTS: usize = 21;

/// Slack for float noise when comparing a bound with its truth.
const VIOLATION_TOLERANCE: f64 = 1e-12;

/// Largest number of compositions [`exact_violation_rates`] will enumerate.
const MAX_COMPOSITIONS: u64 = 5_000_000;

pub fn threshold_grid() -> Vec<f64> {
    (0..GRID_POINTS).map(|j| j as f64 / (GRID_POINTS - 1) as f64).collect()
}

/// Score distribution on `[0, 1]` with closed-form CDF and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnownDistribution {
    Bernoulli { p: f64 },
    Beta { a: f64, b: f64 },
    Discrete { support: Vec<f64>, weights: Vec<f64> },
    PointMass { value: f64 },
    Mixture { components: Vec<KnownDistribution>, weights: Vec<f64> },
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::domain("weights must be non-empty, finite and non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

fn check_unit(v: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} {v} outside [0, 1]")))
    }
}

impl KnownDistribution {
    pub fn bernoulli(p: f64) -> Result<Self> {
        check_unit(p, "bernoulli probability")?;
        Ok(Self::Bernoulli { p })
    }

    pub fn beta(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::domain(format!("beta shapes must be positive, got ({a}, {b})")));
        }
        Ok(Self::Beta { a, b })
    }

    pub fn discrete(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::domain("support and weights differ in length"));
        }
        for &v in &support {
            check_unit(v, "support point")?;
        }
        check_weights(&weights)?;
        Ok(Self::Discrete { support, weights })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        check_unit(value, "point mass")?;
        Ok(Self::PointMass { value })
    }

    pub fn mixture(components: Vec<KnownDistribution>, weights: Vec<f64>) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(Error::domain("mixture components and weights differ in length"));
        }
        check_weights(&weights)?;
        Ok(Self::Mixture { components, weights })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x < 0.0 {
            return Ok(0.0);
        }
        if x >= 1.0 {
            return Ok(1.0);
        }
        Ok(match self {
            Self::Bernoulli { p } => 1.0 - p,
            Self::Beta { a, b } => reg_inc_beta(*a, *b, x)?,
            Self::Discrete { support, weights } => support
                .iter()
                .zip(weights)
                .filter(|(v, _)| **v <= x)
                .map(|(_, w)| w)
                .sum(),
            Self::PointMass { value } => (*value <= x) as u8 as f64,
            Self::Mixture { components, weights } => {
                let mut total = 0.0;
                for (c, w) in components.iter().zip(weights) {
                    total += w * c.cdf(x)?;
                }
                total
            }
        })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Bernoulli { p } => *p,
            Self::Beta { a, b } => a / (a + b),
            Self::Discrete { support, weights } => support.iter().zip(weights).map(|(v, w)| v * w).sum(),
            Self::PointMass { value } => *value,
            Self::Mixture { components, weights } => {
                components.iter().zip(weights).map(|(c, w)| w * c.mean()).sum()
            }
        }
    }

    fn second_moment(&self) -> f64 {
        match self {
            Self::Bernoulli { p } => *p,
            Self::Beta { a, b } => a * (a + 1.0) / ((a + b) * (a + b + 1.0)),
            Self::Discrete { support, weights } => support.iter().zip(weights).map(|(v, w)| v * v * w).sum(),
            Self::PointMass { value } => value * value,
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .map(|(c, w)| w * c.second_moment())
                .sum(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Bernoulli { p } => p * (1.0 - p),
            Self::Beta { a, b } => a * b / ((a + b).powi(2) * (a + b + 1.0)),
            Self::Discrete { support, weights } => {
                let m = self.mean();
                support.iter().zip(weights).map(|(v, w)| w * (v - m).powi(2)).sum()
            }
            Self::PointMass { .. } => 0.0,
            Self::Mixture { .. } => (self.second_moment() - self.mean().powi(2)).max(0.0),
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }

    /// Smallest `x` with `F(x) >= 1/2`, by bisection on the CDF.
    pub fn median(&self) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, 1.0);
        if self.cdf(0.0)? >= 0.5 {
            return Ok(0.0);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? >= 0.5 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// True when every outcome is 0 or 1.
    pub fn is_binary(&self) -> bool {
        match self {
            Self::Bernoulli { .. } => true,
            Self::Beta { .. } => false,
            Self::Discrete { support, weights } => support
                .iter()
                .zip(weights)
                .all(|(v, w)| *w == 0.0 || *v == 0.0 || *v == 1.0),
            Self::PointMass { value } => *value == 0.0 || *value == 1.0,
            Self::Mixture { components, weights } => components
                .iter()
                .zip(weights)
                .all(|(c, w)| *w == 0.0 || c.is_binary()),
        }
    }

    /// Atoms `(value, probability)` for finitely supported members.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Bernoulli { p } => Some(vec![(0.0, 1.0 - p), (1.0, *p)]),
            Self::Beta { .. } => None,
            Self::Discrete { support, weights } => Some(support.iter().copied().zip(weights.iter().copied()).collect()),
            Self::PointMass { value } => Some(vec![(*value, 1.0)]),
            Self::Mixture { components, weights } => {
                let mut out = Vec::new();
                for (c, w) in components.iter().zip(weights) {
                    out.extend(c.atoms()?.into_iter().map(|(v, p)| (v, p * w)));
                }
                Some(out)
            }
        }
    }

    /// `Pr(X = 1)` for binary members.
    pub fn success_probability(&self) -> Option<f64> {
        self.is_binary().then(|| 1.0 - self.cdf(0.5).unwrap_or(0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self {
            Self::Bernoulli { p } => Ok(if rng.random::<f64>() < *p { 1.0 } else { 0.0 }),
            Self::Beta { a, b } => beta_quantile(rng.random::<f64>(), *a, *b),
            Self::Discrete { support, weights } => Ok(support[pick(weights, rng.random())]),
            Self::PointMass { value } => Ok(*value),
            Self::Mixture { components, weights } => components[pick(weights, rng.random())].sample(rng),
        }
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for KnownDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            Self::Beta { a, b } => write!(f, "beta:{a},{b}"),
            Self::Discrete { support, weights } => write!(f, "discrete:{}@{}", join(support), join(weights)),
            Self::PointMass { value } => write!(f, "point:{value}"),
            Self::Mixture { components, weights } => {
                let parts: Vec<String> = components.iter().zip(weights).map(|(c, w)| format!("{w}*{c}")).collect();
                write!(f, "mixture:{}", parts.join("|"))
            }
        }
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("'{v}' is not a number")))
        })
        .collect()
}

impl FromStr for KnownDistribution {
    type Err = Error;

    /// Parses `bernoulli:P`, `beta:A,B`, `point:V`, `discrete:V,..@W,..` and
    /// `mixture:W*SPEC|W*SPEC` (components may not themselves be mixtures).
    fn from_str(s: &str) -> Result<Self> {
        let usage = |e: Error| match e {
            Error::Domain(m) => Error::Usage(m),
            other => other,
        };
        let (kind, args) = s
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("distribution spec '{s}' needs the form KIND:ARGS")))?;
        match kind {
            "bernoulli" => Self::bernoulli(single(args)?).map_err(usage),
            "point" => Self::point_mass(single(args)?).map_err(usage),
            "beta" => match parse_list(args)?.as_slice() {
                [a, b] => Self::beta(*a, *b).map_err(usage),
                _ => Err(Error::Usage("beta needs two shapes: beta:A,B".into())),
            },
            "discrete" => {
                let (sup, w) = args
                    .split_once('@')
                    .ok_or_else(|| Error::Usage("discrete needs discrete:V,..@W,..".into()))?;
                Self::discrete(parse_list(sup)?, parse_list(w)?).map_err(usage)
            }
            "mixture" => {
                let mut comps = Vec::new();
                let mut weights = Vec::new();
                for part in args.split('|') {
                    let (w, spec) = part
                        .split_once('*')
                        .ok_or_else(|| Error::Usage(format!("mixture component '{part}' needs W*SPEC")))?;
                    if spec.starts_with("mixture:") {
                        return Err(Error::Usage("nested mixtures are not supported".into()));
                    }
                    weights.push(single(w)?);
                    comps.push(spec.parse()?);
                }
                Self::mixture(comps, weights).map_err(usage)
            }
            _ => Err(Error::Usage(format!("unknown distribution kind '{kind}'"))),
        }
    }
}

fn single(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Usage(format!("'{s}' is not a number")))
}

/// Ground truth precomputed once per run.
struct Truth {
    p_one: Option<f64>,
    mean: f64,
    sd: f64,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    median: f64,
    cdf_at_median: f64,
}

impl Truth {
    fn of(dist: &KnownDistribution) -> Result<Self> {
        let grid = threshold_grid();
        let cdf = grid.iter().map(|&x| dist.cdf(x)).collect::<Result<Vec<_>>>()?;
        let median = dist.median()?;
        Ok(Self {
            p_one: dist.success_probability(),
            mean: dist.mean(),
            sd: dist.sd(),
            cdf_at_median: dist.cdf(median)?,
            grid,
            cdf,
            median,
        })
    }
}

/// Names of the checked guarantees, in report order.
pub const METRICS: [&str; 5] = ["m_bin", "m_gen", "cdf_band", "mu_band", "sigma_upper"];

/// Per-trial result: violation flag and gap (bound minus truth) per metric.
#[derive(Debug, Clone, Copy, Default)]
struct Outcome {
    m_bin: Option<(bool, f64)>,
    m_gen: (bool, f64),
    m_gen_median_gap: f64,
    cdf_band: (bool, f64),
    mu_band: (bool, f64),
    mu_width: f64,
    sigma: (bool, f64),
}

impl Outcome {
    fn flags(&self) -> impl Iterator<Item = (&'static str, bool)> {
        [
            ("m_bin", self.m_bin.map(|b| b.0)),
            ("m_gen", Some(self.m_gen.0)),
            ("cdf_band", Some(self.cdf_band.0)),
            ("mu_band", Some(self.mu_band.0)),
            ("sigma_upper", Some(self.sigma.0)),
        ]
        .into_iter()
        .filter_map(|(name, v)| v.map(|v| (name, v)))
    }
}

/// The per-trial violation test used by [`run_coverage`], applied to given samples.
pub struct TrialJudge {
    truth: Truth,
}

impl TrialJudge {
    pub fn new(dist: &KnownDistribution) -> Result<Self> {
        Ok(Self { truth: Truth::of(dist)? })
    }

    /// Violation flag per metric; `m_bin` only when both the distribution and
    /// the samples are binary.
    pub fn violations(
        &self,
        samples: &SampleSet,
        alpha: SignificanceLevel,
        partition: &Partition,
    ) -> Result<BTreeMap<&'static str, bool>> {
        Ok(evaluate_trial(samples, &self.truth, alpha, partition)?.flags().collect())
    }
}

fn evaluate_trial(samples: &SampleSet, truth: &Truth, alpha: SignificanceLevel, partition: &Partition) -> Result<Outcome> {
    let n = samples.len();
    let m_bin = match (truth.p_one, samples.binary_successes()) {
        (Some(p), Some(s)) => {
            let bound = clopper_pearson_upper(s, n as u64, alpha)?;
            Some((bound < p - VIOLATION_TOLERANCE, bound - p))
        }
        _ => None,
    };

    let one = CdfBand::new(samples, alpha, Sidedness::OneSided);
    let mut gen_violated = false;
    let mut gen_gap = 0.0;
    for (&x, &f) in truth.grid.iter().zip(&truth.cdf) {
        let bound = exceedance_bound(&one, x)?;
        let exceed = 1.0 - f;
        gen_violated |= bound < exceed - VIOLATION_TOLERANCE;
        gen_gap += bound - exceed;
    }
    let m_gen_median_gap = exceedance_bound(&one, truth.median)? - (1.0 - truth.cdf_at_median);

    let two = CdfBand::new(samples, alpha, Sidedness::TwoSided);
    let mut band_violated = false;
    let mut band_gap = 0.0;
    for (&x, &f) in truth.grid.iter().zip(&truth.cdf) {
        band_violated |= two.lower(x) > f + VIOLATION_TOLERANCE || two.upper(x) < f - VIOLATION_TOLERANCE;
        band_gap += two.upper(x) - f;
    }

    let exp = expectation_from_band(&two, alpha, partition);
    let mu_violated =
        exp.mu_lower > truth.mean + VIOLATION_TOLERANCE || exp.mu_upper < truth.mean - VIOLATION_TOLERANCE;
    let sigma = std_dev_from_band(&two, &exp);

    let g = truth.grid.len() as f64;
    Ok(Outcome {
        m_bin,
        m_gen: (gen_violated, gen_gap / g),
        m_gen_median_gap,
        cdf_band: (band_violated, band_gap / g),
        mu_band: (mu_violated, exp.mu_upper - truth.mean),
        mu_width: exp.width(),
        sigma: (sigma < truth.sd - VIOLATION_TOLERANCE, sigma - truth.sd),
    })
}

/// Violation count and mean gap for one guarantee.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub evaluated: u64,
    pub violations: u64,
    pub violation_fraction: f64,
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub schema: String,
    pub rng: String,
    pub distribution: String,
    pub seed: u64,
    pub trials: u64,
    pub n: usize,
    pub alpha: f64,
    pub partition_k: usize,
    pub truth_mean: f64,
    pub truth_sd: f64,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub mean_mu_width: f64,
    pub mean_m_gen_median_gap: f64,
    pub notices: Vec<String>,
}

impl TrialReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.get(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trial report serializes") + "\n"
    }

    /// `alpha + 3 sqrt(alpha (1 - alpha) / trials)`.
    pub fn violation_slack(&self) -> f64 {
        self.alpha + 3.0 * (self.alpha * (1.0 - self.alpha) / self.trials as f64).sqrt()
    }
}

/// Independent random stream for trial `trial`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn draw(dist: &KnownDistribution, n: usize, rng: &mut ChaCha20Rng) -> Result<SampleSet> {
    let values = (0..n).map(|_| dist.sample(rng)).collect::<Result<Vec<_>>>()?;
    SampleSet::new(values)
}

#[derive(Default)]
struct Accumulator {
    evaluated: u64,
    violations: u64,
    gap: f64,
}

impl Accumulator {
    fn push(&mut self, (violated, gap): (bool, f64)) {
        self.evaluated += 1;
        self.violations += violated as u64;
        self.gap += gap;
    }

    fn summary(&self) -> MetricSummary {
        let e = self.evaluated.max(1) as f64;
        MetricSummary {
            evaluated: self.evaluated,
            violations: self.violations,
            violation_fraction: self.violations as f64 / e,
            mean_gap: self.gap / e,
        }
    }
}

/// Run `trials` seeded trials of `n` draws and count bound violations.
pub fn run_coverage(
    dist: &KnownDistribution,
    n: usize,
    alpha: SignificanceLevel,
    partition: &Partition,
    trials: u64,
    seed: u64,
) -> Result<TrialReport> {
    if trials == 0 || n == 0 {
        return Err(Error::domain("coverage runs need trials >= 1 and n >= 1"));
    }
    let truth = Truth::of(dist)?;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            let samples = draw(dist, n, &mut rng)?;
            evaluate_trial(&samples, &truth, alpha, partition)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut acc: BTreeMap<&str, Accumulator> = METRICS.iter().map(|&m| (m, Accumulator::default())).collect();
    let mut width = 0.0;
    let mut median_gap = 0.0;
    for o in &outcomes {
        if let Some(b) = o.m_bin {
            acc.get_mut("m_bin").unwrap().push(b);
        }
        acc.get_mut("m_gen").unwrap().push(o.m_gen);
        acc.get_mut("cdf_band").unwrap().push(o.cdf_band);
        acc.get_mut("mu_band").unwrap().push(o.mu_band);
        acc.get_mut("sigma_upper").unwrap().push(o.sigma);
        width += o.mu_width;
        median_gap += o.m_gen_median_gap;
    }

    let mut notices = Vec::new();
    if truth.p_one.is_none() {
        notices.push(format!("m_bin skipped: {dist} is not a binary distribution"));
        acc.remove("m_bin");
    }

    Ok(TrialReport {
        schema: SCHEMA.to_string(),
        rng: RNG_ID.to_string(),
        distribution: dist.to_string(),
        seed,
        trials,
        n,
        alpha: alpha.value(),
        partition_k: partition.cells(),
        truth_mean: truth.mean,
        truth_sd: truth.sd,
        metrics: acc.into_iter().map(|(k, v)| (k.to_string(), v.summary())).collect(),
        mean_mu_width: width / trials as f64,
        mean_m_gen_median_gap: median_gap / trials as f64,
        notices,
    })
}

/// Exact violation probability per metric for a finitely supported distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactReport {
    pub distribution: String,
    pub n: usize,
    pub alpha: f64,
    pub compositions: u64,
    pub violation_probability: BTreeMap<String, f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn for_each_composition(n: usize, parts: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(remaining: usize, counts: &mut Vec<usize>, parts: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if counts.len() + 1 == parts {
            counts.push(remaining);
            f(counts)?;
            counts.pop();
            return Ok(());
        }
        for c in 0..=remaining {
            counts.push(c);
            rec(remaining - c, counts, parts, f)?;
            counts.pop();
        }
        Ok(())
    }
    rec(n, &mut Vec::with_capacity(parts), parts, f)
}

/// Violation probabilities computed by summing over every count vector of `n`
/// draws, weighted by its multinomial probability.
pub fn exact_violation_rates(
    dist: &KnownDistribution,
    n: usize,
    alpha: SignificanceLevel,
    partition: &Partition,
) -> Result<ExactReport> {
    let atoms = dist
        .atoms()
        .ok_or_else(|| Error::domain(format!("{dist} has no finite support to enumerate")))?;
    if n == 0 {
        return Err(Error::domain("exact enumeration needs n >= 1"));
    }
    let count = binomial(n + atoms.len() - 1, atoms.len() - 1);
    if count > MAX_COMPOSITIONS as f64 {
        return Err(Error::domain(format!("{count} compositions exceed the enumeration limit")));
    }
    let truth = Truth::of(dist)?;
    let mut prob: BTreeMap<&str, f64> = BTreeMap::new();
    let mut compositions = 0u64;
    for_each_composition(n, atoms.len(), &mut |counts| {
        let mut weight = 1.0;
        let mut left = n;
        let mut values = Vec::with_capacity(n);
        for (&c, &(v, p)) in counts.iter().zip(&atoms) {
            weight *= binomial(left, c) * p.powi(c as i32);
            left -= c;
            values.extend(std::iter::repeat_n(v, c));
        }
        compositions += 1;
        if weight == 0.0 {
            return Ok(());
        }
        let o = evaluate_trial(&SampleSet::new(values)?, &truth, alpha, partition)?;
        for (name, v) in o.flags() {
            *prob.entry(name).or_insert(0.0) += if v { weight } else { 0.0 };
        }
        Ok(())
    })?;
    if truth.p_one.is_none() {
        prob.remove("m_bin");
    }
    Ok(ExactReport {
        distribution: dist.to_string(),
        n,
        alpha: alpha.value(),
        compositions,
        violation_probability: prob.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    })
}

/// Mean gaps for one `(n, K)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub k: usize,
    pub m_gen_median_gap: f64,
    pub mu_width: f64,
    pub mu_upper_gap: f64,
    pub sigma_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub distribution: String,
    pub alpha: f64,
    pub seed: u64,
    pub trials: u64,
    /// Row-major over `n`, then `K`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, n: usize, k: usize) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.n == n && c.k == k)
    }

    /// Cells where a moment gap grows by more than `tolerance` along increasing
    /// `n` (fixed `K`) or increasing `K` (fixed `n`).
    pub fn monotonicity_breaks(&self, tolerance: f64) -> Vec<String> {
        let mut ns: Vec<usize> = self.cells.iter().map(|c| c.n).collect();
        let mut ks: Vec<usize> = self.cells.iter().map(|c| c.k).collect();
        ns.dedup();
        ks.sort_unstable();
        ks.dedup();
        let mut breaks = Vec::new();
        let gaps = |c: &SweepCell| [c.m_gen_median_gap, c.mu_width, c.mu_upper_gap, c.sigma_gap];
        for &k in &ks {
            for w in ns.windows(2) {
                let (a, b) = (self.cell(w[0], k).unwrap(), self.cell(w[1], k).unwrap());
                for (i, (x, y)) in gaps(a).iter().zip(gaps(b)).enumerate() {
                    if y > x + tolerance {
                        breaks.push(format!("gap {i} grows from n={} to n={} at K={k}", w[0], w[1]));
                    }
                }
            }
        }
        for &n in &ns {
            for w in ks.windows(2) {
                let (a, b) = (self.cell(n, w[0]).unwrap(), self.cell(n, w[1]).unwrap());
                for (i, (x, y)) in gaps(a).iter().zip(gaps(b)).enumerate().skip(1) {
                    if y > x + tolerance {
                        breaks.push(format!("gap {i} grows from K={} to K={} at n={n}", w[0], w[1]));
                    }
                }
            }
        }
        breaks
    }
}

/// Mean bound gaps over a grid of sample sizes and partition sizes.
///
/// Every cell reuses the same per-trial streams, so the samples at a larger
/// `n` extend those at a smaller one.
pub fn tightness_sweep(
    dist: &KnownDistribution,
    n_grid: &[usize],
    k_grid: &[usize],
    alpha: SignificanceLevel,
    seed: u64,
    trials: u64,
) -> Result<SweepTable> {
    if n_grid.is_empty() || k_grid.is_empty() {
        return Err(Error::domain("sweep grids must be non-empty"));
    }
    let mut cells = Vec::with_capacity(n_grid.len() * k_grid.len());
    for &n in n_grid {
        for &k in k_grid {
            let partition = Partition::uniform(k)?;
            let r = run_coverage(dist, n, alpha, &partition, trials, seed)?;
            cells.push(SweepCell {
                n,
                k,
                m_gen_median_gap: r.mean_m_gen_median_gap,
                mu_width: r.mean_mu_width,
                mu_upper_gap: r.metrics["mu_band"].mean_gap,
                sigma_gap: r.metrics["sigma_upper"].mean_gap,
            });
        }
    }
    Ok(SweepTable {
        distribution: dist.to_string(),
        alpha: alpha.value(),
        seed,
        trials,
        cells,
    })
}
