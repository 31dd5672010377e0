//! The evaluation pipeline: ingest records, score each output, compute every
//! applicable bound per query, and write reports and plot-ready tables.
//!
//! Input is JSON Lines, one record per generation. Each record carries a
//! `query_id` and exactly one payload:
//!
//! ```text
//! {"query_id": "q1", "score": 0.25}
//! {"query_id": "q2", "generation": "...", "reference": "..."}
//! {"query_id": "q3", "generation": "...", "keywords": ["...", "..."]}
//! ```
//!
//! Reports are pretty-printed JSON tagged with [`SCHEMA`]. Queries are sorted
//! by `query_id` and nothing time-dependent is written, so identical inputs and
//! seed give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    clopper_pearson_upper, dkw_epsilon, exceedance_bound, expectation_from_band, std_dev_from_band, CdfBand,
    Partition, SampleSet, Sidedness, SignificanceLevel, DEFAULT_PARTITION_K,
};
use crate::coverage::threshold_grid;
use crate::scores::{ed_score, keyword_leak, rouge_l, self_bleu_diversity, EdConfig, TokenSequence, TOKENIZER};
use crate::{Error, Result, SCHEMA};

/// Number of histogram bins over `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 50;
/// Smallest subsample size in the convergence series.
pub const MIN_SUBSAMPLE: usize = 16;

/// One line of input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

/// Which payload a record carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadForm {
    Score,
    Reference,
    Keywords,
}

impl PayloadForm {
    fn describe(self) -> &'static str {
        match self {
            PayloadForm::Score => "score",
            PayloadForm::Reference => "generation+reference",
            PayloadForm::Keywords => "generation+keywords",
        }
    }
}

impl EvaluationRecord {
    pub fn score(query_id: impl Into<String>, score: f64) -> Self {
        Self {
            query_id: query_id.into(),
            score: Some(score),
            generation: None,
            reference: None,
            keywords: None,
        }
    }

    pub fn with_reference(query_id: impl Into<String>, generation: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            score: None,
            generation: Some(generation.into()),
            reference: Some(reference.into()),
            keywords: None,
        }
    }

    pub fn with_keywords(query_id: impl Into<String>, generation: impl Into<String>, keywords: Vec<String>) -> Self {
        Self {
            query_id: query_id.into(),
            score: None,
            generation: Some(generation.into()),
            reference: None,
            keywords: Some(keywords),
        }
    }

    /// Payload form, or a description of why the record is malformed.
    pub fn form(&self) -> std::result::Result<PayloadForm, String> {
        match (&self.score, &self.generation, &self.reference, &self.keywords) {
            (Some(s), None, None, None) => {
                if (0.0..=1.0).contains(s) {
                    Ok(PayloadForm::Score)
                } else {
                    Err(format!("score {s} outside [0, 1]"))
                }
            }
            (None, Some(_), Some(_), None) => Ok(PayloadForm::Reference),
            (None, Some(_), None, Some(k)) => {
                if k.is_empty() {
                    Err("keyword list is empty".into())
                } else {
                    Ok(PayloadForm::Keywords)
                }
            }
            _ => Err("record needs exactly one of: score | generation+reference | generation+keywords".into()),
        }
    }
}

/// A record with the 1-based input line it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LineRecord {
    pub line: usize,
    pub record: EvaluationRecord,
}

/// Parse JSON Lines input; blank lines are skipped.
pub fn parse_records(text: &str) -> Result<Vec<LineRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: EvaluationRecord =
            serde_json::from_str(raw).map_err(|e| Error::ingestion(line, format!("invalid record: {e}")))?;
        record.form().map_err(|m| Error::ingestion(line, m))?;
        out.push(LineRecord { line, record });
    }
    if out.is_empty() {
        return Err(Error::ingestion(1, "input contains no records"));
    }
    Ok(out)
}

pub fn write_records(records: &[EvaluationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Leakage measure `h` applied to each record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    /// Precomputed scores, used as-is.
    Score,
    RougeL,
    Keyword,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Score => "score",
            Measure::RougeL => "rouge-l",
            Measure::Keyword => "keyword",
        }
    }

    fn expects(self) -> PayloadForm {
        match self {
            Measure::Score => PayloadForm::Score,
            Measure::RougeL => PayloadForm::Reference,
            Measure::Keyword => PayloadForm::Keywords,
        }
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score" => Ok(Measure::Score),
            "rouge-l" => Ok(Measure::RougeL),
            "keyword" => Ok(Measure::Keyword),
            _ => Err(Error::Usage(format!("unknown measure '{s}' (expected score, rouge-l or keyword)"))),
        }
    }
}

/// How the moment bounds partition `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionChoice {
    Uniform(usize),
    /// Knots at every distinct sample value.
    Adapted,
}

impl PartitionChoice {
    fn build(self, samples: &SampleSet) -> Result<Partition> {
        match self {
            PartitionChoice::Uniform(k) => Partition::uniform(k),
            PartitionChoice::Adapted => Ok(Partition::sample_adapted(samples)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub alpha: SignificanceLevel,
    pub partition: PartitionChoice,
    pub ed: EdConfig,
    pub seed: u64,
    /// Threshold for the dataset-level aggregate fractions.
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: SignificanceLevel::default(),
            partition: PartitionChoice::Uniform(DEFAULT_PARTITION_K),
            ed: EdConfig::default(),
            seed: 0,
            threshold: 0.1,
        }
    }
}

/// Confidence metadata attached to every bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guarantee {
    pub method: String,
    pub alpha: f64,
    pub n: usize,
    /// DKW half-width; `None` for the Clopper-Pearson bound.
    pub epsilon: Option<f64>,
    pub sidedness: Sidedness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub value: f64,
    pub guarantee: Guarantee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceGrid {
    pub thresholds: Vec<f64>,
    pub bounds: Vec<f64>,
    pub guarantee: Guarantee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEntry {
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub partition_k: usize,
    pub guarantee: Guarantee,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub query_id: String,
    pub n: usize,
    pub s_mean: f64,
    pub s_sd: f64,
    pub ed_score: f64,
    pub rho: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_bin: Option<BoundValue>,
    pub m_gen: ExceedanceGrid,
    pub expectation: ExpectationEntry,
    pub sigma_upper: BoundValue,
    /// `1 - self-BLEU` over the generations, for text payloads with n >= 2.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diversity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub threshold: f64,
    /// Fraction of queries whose field is strictly above `threshold`.
    pub fraction_above: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub measure: Measure,
    pub tokenizer: String,
    pub config: EvalConfig,
    pub queries: Vec<QueryReport>,
    pub aggregate: Aggregate,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn score_record(lr: &LineRecord, measure: Measure) -> Result<f64> {
    let r = &lr.record;
    let form = r.form().map_err(|m| Error::ingestion(lr.line, m))?;
    if form != measure.expects() {
        return Err(Error::ingestion(
            lr.line,
            format!(
                "record carries a {} payload but measure {} needs {}",
                form.describe(),
                measure.as_str(),
                measure.expects().describe()
            ),
        ));
    }
    Ok(match measure {
        Measure::Score => r.score.unwrap(),
        Measure::RougeL => rouge_l(
            &TokenSequence::tokenize(r.generation.as_deref().unwrap()),
            &TokenSequence::tokenize(r.reference.as_deref().unwrap()),
        ),
        Measure::Keyword => {
            keyword_leak(r.generation.as_deref().unwrap(), r.keywords.as_deref().unwrap())
                .map_err(|e| Error::ingestion(lr.line, e.to_string()))? as f64
        }
    })
}

fn check_homogeneous(records: &[LineRecord]) -> Result<()> {
    let Some(first) = records.first() else {
        return Err(Error::domain("a query needs at least one record"));
    };
    let form = first.record.form().map_err(|m| Error::ingestion(first.line, m))?;
    for lr in &records[1..] {
        let f = lr.record.form().map_err(|m| Error::ingestion(lr.line, m))?;
        if f != form {
            return Err(Error::ingestion(
                lr.line,
                format!(
                    "query '{}' mixes {} and {} payloads",
                    lr.record.query_id,
                    form.describe(),
                    f.describe()
                ),
            ));
        }
    }
    Ok(())
}

/// Bounds and summary statistics for an already scored query.
pub fn evaluate_samples(query_id: &str, samples: &SampleSet, config: &EvalConfig) -> Result<QueryReport> {
    let n = samples.len();
    let alpha = config.alpha;
    let guarantee = |method: &str, epsilon: Option<f64>, sidedness| Guarantee {
        method: method.to_string(),
        alpha: alpha.value(),
        n,
        epsilon,
        sidedness,
    };

    let m_bin = match samples.binary_successes() {
        Some(s) => Some(BoundValue {
            value: clopper_pearson_upper(s, n as u64, alpha)?,
            guarantee: guarantee("clopper-pearson", None, Sidedness::OneSided),
        }),
        None => None,
    };

    let one = CdfBand::new(samples, alpha, Sidedness::OneSided);
    let thresholds = threshold_grid();
    let bounds = thresholds
        .iter()
        .map(|&x| exceedance_bound(&one, x))
        .collect::<Result<Vec<_>>>()?;

    let partition = config.partition.build(samples)?;
    let two = CdfBand::new(samples, alpha, Sidedness::TwoSided);
    let exp = expectation_from_band(&two, alpha, &partition);
    let sigma = std_dev_from_band(&two, &exp);

    Ok(QueryReport {
        query_id: query_id.to_string(),
        n,
        s_mean: samples.mean(),
        s_sd: samples.population_sd(),
        ed_score: ed_score(samples, config.ed),
        rho: config.ed.rho(),
        m_bin,
        m_gen: ExceedanceGrid {
            thresholds,
            bounds,
            guarantee: guarantee("dkw-exceedance", Some(one.epsilon()), Sidedness::OneSided),
        },
        expectation: ExpectationEntry {
            mu_lower: exp.mu_lower,
            mu_upper: exp.mu_upper,
            partition_k: partition.cells(),
            guarantee: guarantee("dkw-riemann-expectation", Some(two.epsilon()), Sidedness::TwoSided),
        },
        sigma_upper: BoundValue {
            value: sigma,
            guarantee: guarantee("dkw-partition-variance", Some(two.epsilon()), Sidedness::TwoSided),
        },
        diversity: None,
    })
}

/// Score the records of one query and compute its metrics.
///
/// Returns the report entry together with the per-record scores.
pub fn evaluate_query(
    query_id: &str,
    records: &[LineRecord],
    measure: Measure,
    config: &EvalConfig,
) -> Result<(QueryReport, SampleSet)> {
    check_homogeneous(records)?;
    let scores = records
        .iter()
        .map(|lr| score_record(lr, measure))
        .collect::<Result<Vec<_>>>()?;
    let samples = SampleSet::new(scores).map_err(|e| Error::ingestion(records[0].line, e.to_string()))?;
    let mut report = evaluate_samples(query_id, &samples, config)?;
    if measure != Measure::Score && records.len() >= 2 {
        let gens: Vec<TokenSequence> = records
            .iter()
            .map(|lr| TokenSequence::tokenize(lr.record.generation.as_deref().unwrap_or("")))
            .collect();
        report.diversity = Some(self_bleu_diversity(&gens)?);
    }
    Ok((report, samples))
}

/// Fields that [`aggregate_threshold_fraction`] can threshold.
pub const AGGREGATE_FIELDS: [&str; 6] = ["m_bin", "mu_upper", "mu_lower", "sigma_upper", "ed_score", "s_mean"];

fn field_value(q: &QueryReport, field: &str) -> Result<Option<f64>> {
    Ok(match field {
        "m_bin" => q.m_bin.as_ref().map(|b| b.value),
        "mu_upper" => Some(q.expectation.mu_upper),
        "mu_lower" => Some(q.expectation.mu_lower),
        "sigma_upper" => Some(q.sigma_upper.value),
        "ed_score" => Some(q.ed_score),
        "s_mean" => Some(q.s_mean),
        _ => {
            return Err(Error::Usage(format!(
                "unknown report field '{field}' (expected one of {})",
                AGGREGATE_FIELDS.join(", ")
            )))
        }
    })
}

/// Fraction of queries whose `field` is strictly greater than `threshold`.
///
/// Queries without the field (e.g. `m_bin` on continuous scores) are left out
/// of the denominator.
pub fn aggregate_threshold_fraction(reports: &[QueryReport], field: &str, threshold: f64) -> Result<f64> {
    if reports.is_empty() {
        return Err(Error::Usage("aggregation needs at least one query".into()));
    }
    let mut total = 0usize;
    let mut above = 0usize;
    for q in reports {
        if let Some(v) = field_value(q, field)? {
            total += 1;
            above += (v > threshold) as usize;
        }
    }
    if total == 0 {
        return Err(Error::Usage(format!("no query reports field '{field}'")));
    }
    Ok(above as f64 / total as f64)
}

/// Evaluate every query in `records`.
///
/// Returns the report and each query's scores keyed by `query_id`.
pub fn evaluate_records(
    records: &[LineRecord],
    measure: Measure,
    config: &EvalConfig,
) -> Result<(MetricReport, BTreeMap<String, SampleSet>)> {
    let mut groups: BTreeMap<&str, Vec<LineRecord>> = BTreeMap::new();
    for lr in records {
        groups.entry(lr.record.query_id.as_str()).or_default().push(lr.clone());
    }
    let mut queries = Vec::with_capacity(groups.len());
    let mut samples = BTreeMap::new();
    for (qid, group) in groups {
        let (report, s) = evaluate_query(qid, &group, measure, config)?;
        queries.push(report);
        samples.insert(qid.to_string(), s);
    }
    let mut fraction_above = BTreeMap::new();
    for field in AGGREGATE_FIELDS {
        if let Ok(f) = aggregate_threshold_fraction(&queries, field, config.threshold) {
            fraction_above.insert(field.to_string(), f);
        }
    }
    Ok((
        MetricReport {
            schema: SCHEMA.to_string(),
            measure,
            tokenizer: TOKENIZER.to_string(),
            config: *config,
            queries,
            aggregate: Aggregate {
                threshold: config.threshold,
                fraction_above,
            },
        },
        samples,
    ))
}

/// Counts per bin over `[0, 1]`; 1.0 falls in the last bin.
pub fn histogram(samples: &SampleSet, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in samples.values() {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Filesystem-safe directory name for a query id.
pub fn sanitize_id(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        format!("q_{s}")
    } else {
        s
    }
}

/// Subsample sizes `16, 32, ...` below `n`, then `n`.
pub fn subsample_sizes(n: usize) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut s = MIN_SUBSAMPLE;
    while s < n {
        sizes.push(s);
        s *= 2;
    }
    sizes.push(n);
    sizes
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Plot tables for one query: `histogram.csv`, `cdf.csv` and `convergence.csv`
/// under `dir`.
pub fn emit_plot_data(query: &QueryReport, samples: &SampleSet, config: &EvalConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = samples.len();
    let alpha = config.alpha;

    let mut hist = String::from("bin_lower,bin_upper,count,fraction\n");
    for (i, c) in histogram(samples, HISTOGRAM_BINS).iter().enumerate() {
        let lo = i as f64 / HISTOGRAM_BINS as f64;
        let hi = (i + 1) as f64 / HISTOGRAM_BINS as f64;
        let _ = writeln!(hist, "{lo},{hi},{c},{}", *c as f64 / n as f64);
    }

    let partition = config.partition.build(samples)?;
    let mut xs: Vec<f64> = partition.knots().iter().chain(samples.sorted()).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let two = CdfBand::new(samples, alpha, Sidedness::TwoSided);
    let one = CdfBand::new(samples, alpha, Sidedness::OneSided);
    let mut cdf = String::from("x,ecdf,lower,upper,exceedance_bound\n");
    for x in xs {
        let _ = writeln!(
            cdf,
            "{x},{},{},{},{}",
            two.base().eval(x),
            two.lower(x),
            two.upper(x),
            exceedance_bound(&one, x)?
        );
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha20Rng::seed_from_u64(config.seed));
    let mut conv = String::from(
        "size,epsilon_one_sided,epsilon_two_sided,s_mean,s_sd,ed_score,mu_lower,mu_upper,sigma_upper,m_bin\n",
    );
    for size in subsample_sizes(n) {
        let sub = SampleSet::new(order[..size].iter().map(|&i| samples.values()[i]).collect())?;
        let r = evaluate_samples(&query.query_id, &sub, config)?;
        let _ = writeln!(
            conv,
            "{size},{},{},{},{},{},{},{},{},{}",
            dkw_epsilon(size, alpha, Sidedness::OneSided),
            dkw_epsilon(size, alpha, Sidedness::TwoSided),
            r.s_mean,
            r.s_sd,
            r.ed_score,
            r.expectation.mu_lower,
            r.expectation.mu_upper,
            r.sigma_upper.value,
            opt(r.m_bin.map(|b| b.value)),
        );
    }

    let files = [("histogram.csv", hist), ("cdf.csv", cdf), ("convergence.csv", conv)];
    let mut paths = Vec::new();
    for (name, content) in files {
        let path = dir.join(name);
        write_file(&path, &content)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Write `report.json` and, when `plots` is set, per-query plot tables under
/// `out/plots/<query_id>/`.
pub fn write_outputs(
    report: &MetricReport,
    samples: &BTreeMap<String, SampleSet>,
    out: &Path,
    plots: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report_path = out.join("report.json");
    write_file(&report_path, &report.to_json())?;
    let mut written = vec![report_path];
    if plots {
        for q in &report.queries {
            let dir = out.join("plots").join(sanitize_id(&q.query_id));
            written.extend(emit_plot_data(q, &samples[&q.query_id], &report.config, &dir)?);
        }
    }
    Ok(written)
}
