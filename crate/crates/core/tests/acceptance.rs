//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Run with `cargo test --test acceptance -- --nocapture` to see the
//! table.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use probe_bounds::bounds::{
    clopper_pearson_upper, dkw_epsilon, exceedance_bound, expectation_bounds, expectation_from_band,
    sample_size_for, std_dev_from_band, std_dev_upper, CdfBand, Partition, SampleSet, Sidedness,
    SignificanceLevel,
};
use probe_bounds::coverage::{
    exact_violation_rates, run_coverage, threshold_grid, trial_rng, KnownDistribution, TrialJudge,
};
use probe_bounds::decoding::{entropy_gradient, sample_token, token_entropy, TokenDistribution};
use probe_bounds::report::{evaluate_records, parse_records, write_records, EvalConfig, Measure};
use probe_bounds::scores::{ed_from_moments, lcs_len, rouge_l, EdConfig, TokenSequence};

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn alpha(a: f64) -> SignificanceLevel {
    SignificanceLevel::new(a).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// 1
const CP_CLOSED_FORM_TOL: f64 = 1e-9;

fn clopper_pearson_closed_forms() -> Outcome {
    let mut worst_literal = 0.0f64;
    let mut worst_shape = 0.0f64;
    let mut full_ok = true;
    for n in [10u64, 100, 1024] {
        for a in [0.01, 0.05] {
            let got = clopper_pearson_upper(0, n, alpha(a)).unwrap();
            worst_literal = worst_literal.max((got - (1.0 - a.powf(1.0 / (n + 1) as f64))).abs());
            worst_shape = worst_shape.max((got - (1.0 - a.powf(1.0 / n as f64))).abs());
            full_ok &= clopper_pearson_upper(n, n, alpha(a)).unwrap() == 1.0;
        }
    }
    check(
        worst_literal <= CP_CLOSED_FORM_TOL && full_ok,
        format!(
            "max |bound - (1 - a^(1/(n+1)))| = {worst_literal:.3e}; max |bound - (1 - a^(1/n))| = {worst_shape:.3e}; s=n gives 1: {full_ok}"
        ),
    )
}

// 2
const QUANTILE_TOL: f64 = 1e-9;

fn quantile_inversion_fidelity() -> Outcome {
    use statrs::function::beta::beta_reg;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n: u64 = rng.random_range(1..=5000);
        let s: u64 = rng.random_range(0..n);
        let a: f64 = rng.random_range(0.001..=0.5);
        let bound = clopper_pearson_upper(s, n, alpha(a)).unwrap();
        let back = beta_reg((s + 1) as f64, (n - s) as f64, bound);
        worst = worst.max((back - (1.0 - a)).abs());
    }
    check(worst <= QUANTILE_TOL, format!("max |I(bound) - (1 - alpha)| = {worst:.3e} over 1000 triples"))
}

// 3
const BINARY_MAX_VIOLATION: f64 = 0.013;

fn binary_coverage() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for p in [0.01, 0.05, 0.3] {
        let d = KnownDistribution::bernoulli(p).unwrap();
        let r = run_coverage(&d, 200, alpha(0.01), &Partition::uniform(100).unwrap(), 10_000, 3).unwrap();
        let v = r.metric("m_bin").unwrap().violation_fraction;
        ok &= v <= BINARY_MAX_VIOLATION;
        parts.push(format!("p={p}: {v:.4}"));
    }
    check(ok, format!("violation fractions {}", parts.join(", ")))
}

// 4
const BAND_MAX_VIOLATION: f64 = 0.013;

fn cdf_band_coverage() -> Outcome {
    let d = KnownDistribution::beta(2.0, 5.0).unwrap();
    let r = run_coverage(&d, 500, alpha(0.01), &Partition::uniform(100).unwrap(), 10_000, 4).unwrap();
    let band = r.metric("cdf_band").unwrap().violation_fraction;
    let gen = r.metric("m_gen").unwrap().violation_fraction;
    check(
        band <= BAND_MAX_VIOLATION,
        format!("two-sided band violation {band:.4}; one-sided exceedance violation {gen:.4}"),
    )
}

// 5
const SIGMA_FLOOR: f64 = 0.1597;
const WIDTH_SLACK: f64 = 0.001;

fn moment_bound_coverage() -> Outcome {
    let d = KnownDistribution::beta(2.0, 5.0).unwrap();
    let (n, k, trials) = (100_000usize, 1000usize, 100u64);
    let a = alpha(0.01);
    let partition = Partition::uniform(k).unwrap();
    let mean = 2.0 / 7.0;
    let (mut mu_hits, mut sigma_hits, mut width) = (0u64, 0u64, 0.0);
    for t in 0..trials {
        let mut rng = trial_rng(5, t);
        let values = (0..n).map(|_| d.sample(&mut rng).unwrap()).collect();
        let s = SampleSet::new(values).unwrap();
        let band = expectation_bounds(&s, a, &partition);
        let sigma = std_dev_upper(&s, a, &partition, &band).unwrap();
        mu_hits += (band.mu_lower <= mean && mean <= band.mu_upper) as u64;
        sigma_hits += (sigma >= SIGMA_FLOOR) as u64;
        width += band.width();
    }
    let mean_width = width / trials as f64;
    let limit = 2.0 * dkw_epsilon(n, a, Sidedness::TwoSided) + 1.0 / k as f64 + WIDTH_SLACK;
    check(
        mu_hits >= 99 && sigma_hits >= 99 && mean_width <= limit,
        format!("mu covers {mu_hits}/100, sigma >= {SIGMA_FLOOR} in {sigma_hits}/100, mean width {mean_width:.5} <= {limit:.5}"),
    )
}

// 6
const EXACT_MATCH_TOL: f64 = 1e-9;
const SIMULATION_TRIALS: u64 = 20_000;
const SIMULATION_MAX_Z: f64 = 4.0;

type Rates = BTreeMap<String, f64>;

/// Violation probabilities over all `|support|^n` ordered draws: first from an
/// independent restatement of each guarantee, then from the simulator's own
/// per-trial test.
fn brute_force_rates(d: &KnownDistribution, n: usize, a: SignificanceLevel, partition: &Partition) -> (Rates, Rates) {
    let judge = TrialJudge::new(d).unwrap();
    let mut replay: Rates = BTreeMap::new();
    let atoms = d.atoms().unwrap();
    let grid = threshold_grid();
    let truth_cdf: Vec<f64> = grid.iter().map(|&x| d.cdf(x).unwrap()).collect();
    let (mean, sd, p_one) = (d.mean(), d.sd(), d.success_probability());
    let tol = 1e-12;
    let mut rates: Rates = BTreeMap::new();
    let total = atoms.len().pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let mut weight = 1.0;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let (v, p) = atoms[c % atoms.len()];
            c /= atoms.len();
            weight *= p;
            values.push(v);
        }
        let s = SampleSet::new(values).unwrap();
        let mut flags = Vec::new();
        if let Some(p) = p_one {
            let succ = s.values().iter().filter(|&&v| v == 1.0).count() as u64;
            let binary = s.values().iter().all(|&v| v == 0.0 || v == 1.0);
            if binary {
                flags.push(("m_bin", clopper_pearson_upper(succ, n as u64, a).unwrap() < p - tol));
            }
        }
        let one = CdfBand::new(&s, a, Sidedness::OneSided);
        let gen = grid
            .iter()
            .zip(&truth_cdf)
            .any(|(&x, &f)| exceedance_bound(&one, x).unwrap() < 1.0 - f - tol);
        flags.push(("m_gen", gen));
        let two = CdfBand::new(&s, a, Sidedness::TwoSided);
        let band = grid
            .iter()
            .zip(&truth_cdf)
            .any(|(&x, &f)| two.lower(x) > f + tol || two.upper(x) < f - tol);
        flags.push(("cdf_band", band));
        let exp = expectation_from_band(&two, a, partition);
        flags.push(("mu_band", exp.mu_lower > mean + tol || exp.mu_upper < mean - tol));
        flags.push(("sigma_upper", std_dev_from_band(&two, &exp) < sd - tol));
        for (name, v) in flags {
            *rates.entry(name.to_string()).or_insert(0.0) += if v { weight } else { 0.0 };
        }
        for (name, v) in judge.violations(&s, a, partition).unwrap() {
            *replay.entry(name.to_string()).or_insert(0.0) += if v { weight } else { 0.0 };
        }
    }
    (rates, replay)
}

fn exhaustive_small_instances() -> Outcome {
    let a = alpha(0.01);
    let partition = Partition::uniform(100).unwrap();
    let weightings = [
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        [0.7, 0.2, 0.1],
        [0.05, 0.05, 0.9],
        [0.5, 0.0, 0.5],
    ];
    let (mut oracle_gap, mut replay_gap, mut worst_exact, mut worst_z) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut mc_zero_ok = true;
    let mut cases = 0;
    for w in weightings {
        let d = KnownDistribution::discrete(vec![0.0, 0.5, 1.0], w.to_vec()).unwrap();
        for n in 1..=6 {
            let exact = exact_violation_rates(&d, n, a, &partition).unwrap();
            let (oracle, replay) = brute_force_rates(&d, n, a, &partition);
            let sim = run_coverage(&d, n, a, &partition, SIMULATION_TRIALS, 6).unwrap();
            for (name, &p) in &exact.violation_probability {
                let gap = |r: &Rates| r.get(name).map_or(f64::INFINITY, |q| (p - q).abs());
                oracle_gap = oracle_gap.max(gap(&oracle));
                replay_gap = replay_gap.max(gap(&replay));
                if let Some(m) = sim.metric(name) {
                    let f = m.violation_fraction;
                    if p > 0.0 {
                        worst_z = worst_z.max((p - f).abs() / (p * (1.0 - p) / SIMULATION_TRIALS as f64).sqrt());
                    } else {
                        mc_zero_ok &= f == 0.0;
                    }
                }
                worst_exact = worst_exact.max(p);
            }
            cases += 1;
        }
    }
    check(
        oracle_gap <= EXACT_MATCH_TOL
            && replay_gap <= EXACT_MATCH_TOL
            && worst_exact <= a.value()
            && mc_zero_ok
            && worst_z <= SIMULATION_MAX_Z,
        format!(
            "{cases} cases; exact vs restated oracle {oracle_gap:.1e}; vs simulator test on every draw {replay_gap:.1e}; max exact rate {worst_exact:.3e}; seeded simulation max |z| {worst_z:.2} at {SIMULATION_TRIALS} trials"
        ),
    )
}

// 7
fn cents(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

fn table_arithmetic() -> Outcome {
    let cfg = EdConfig::default();
    let exact = [("GD", 0.32, 0.05, 0.42), ("GA", 0.31, 0.05, 0.41), ("Ours", 0.20, 0.00, 0.20)];
    let rounded = [("RMU", 0.60, 0.10, 0.81), ("NPO", 0.21, 0.06, 0.34)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m, s, printed) in exact {
        let ed = ed_from_moments(m, s, cfg);
        ok &= cents(ed) == cents(printed);
        parts.push(format!("{name} {ed:.2}"));
    }
    for (name, m, s, printed) in rounded {
        let ed = ed_from_moments(m, s, cfg);
        ok &= (cents(ed) - cents(printed)).abs() <= 1;
        parts.push(format!("{name} {ed:.2} vs {printed}"));
    }
    check(ok, parts.join(", "))
}

// 8
const FD_STEP: f64 = 1e-5;
const GRADIENT_TOL: f64 = 1e-6;

fn entropy_gradient_fd() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let entropy = |z: &[f64]| token_entropy(&TokenDistribution::from_logits(z).unwrap());
    let mut worst = 0.0f64;
    for v in [2usize, 10, 100] {
        for _ in 0..100 {
            let z: Vec<f64> = (0..v).map(|_| rng.random_range(-5.0..=5.0)).collect();
            let g = entropy_gradient(&z).unwrap();
            for j in 0..v {
                let mut up = z.clone();
                let mut down = z.clone();
                up[j] += FD_STEP;
                down[j] -= FD_STEP;
                let fd = (entropy(&up) - entropy(&down)) / (2.0 * FD_STEP);
                worst = worst.max((fd - g[j]).abs());
            }
        }
    }
    check(worst <= GRADIENT_TOL, format!("max |analytic - central difference| = {worst:.3e}"))
}

// 9
const DRAWS: usize = 100_000;
const ARGMAX_FLOOR: f64 = 0.999;

fn frequencies_within(probs: &[f64], expected: &[f64], top_p: f64, seed: u64) -> (bool, f64) {
    let dist = TokenDistribution::from_probs(probs.to_vec()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..DRAWS {
        counts[sample_token(&dist, 1.0, top_p, &mut rng)] += 1;
    }
    let mut worst = 0.0f64;
    let mut ok = true;
    for (c, &q) in counts.iter().zip(expected) {
        let f = *c as f64 / DRAWS as f64;
        let sigma = (q * (1.0 - q) / DRAWS as f64).sqrt();
        if q == 0.0 {
            ok &= *c == 0;
        } else {
            worst = worst.max((f - q).abs() / sigma);
        }
    }
    (ok && worst <= 3.0, worst)
}

fn sampling_correctness() -> Outcome {
    let (nucleus_ok, z1) = frequencies_within(&[0.5, 0.3, 0.2], &[0.625, 0.375, 0.0], 0.7, 91);
    let full = [0.1, 0.4, 0.25, 0.15, 0.1];
    let (full_ok, z2) = frequencies_within(&full, &full, 1.0, 92);
    let dist = TokenDistribution::from_probs(vec![0.1, 0.2, 0.4, 0.3]).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(93);
    let hits = (0..DRAWS).filter(|_| sample_token(&dist, 1e-4, 1.0, &mut rng) == 2).count();
    let share = hits as f64 / DRAWS as f64;
    check(
        nucleus_ok && full_ok && share >= ARGMAX_FLOOR,
        format!("nucleus max |z| {z1:.2}, full max |z| {z2:.2}, argmax share at tau=1e-4 {share:.5}"),
    )
}

// 10
fn naive_lcs(a: &[u8], b: &[u8]) -> usize {
    match (a.split_last(), b.split_last()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                naive_lcs(ra, rb) + 1
            } else {
                naive_lcs(ra, b).max(naive_lcs(a, rb))
            }
        }
        _ => 0,
    }
}

fn all_words(max_len: usize) -> Vec<Vec<u8>> {
    let mut words = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &frontier {
            for s in 0..3u8 {
                let mut x: Vec<u8> = w.clone();
                x.push(s);
                next.push(x);
            }
        }
        words.extend(next.iter().cloned());
        frontier = next;
    }
    words
}

fn tokens(w: &[u8]) -> TokenSequence {
    TokenSequence::from_tokens(w.iter().map(|s| ["a", "b", "c"][*s as usize]))
}

fn lcs_oracle() -> Outcome {
    let words = all_words(6);
    let mut mismatches = 0usize;
    let mut pairs = 0usize;
    for a in &words {
        for b in &words {
            pairs += 1;
            mismatches += (lcs_len(a, b) != naive_lcs(a, b)) as usize;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let mut property_failures = 0usize;
    for _ in 0..1000 {
        let a = &words[rng.random_range(1..words.len())];
        let b = &words[rng.random_range(0..words.len())];
        let (ta, tb) = (tokens(a), tokens(b));
        let f1 = 2.0 * naive_lcs(a, b) as f64 / (a.len() + b.len()) as f64;
        property_failures += (rouge_l(&ta, &tb) != rouge_l(&tb, &ta)) as usize;
        property_failures += (rouge_l(&ta, &ta) != 1.0) as usize;
        property_failures += ((rouge_l(&ta, &tb) - f1).abs() > 1e-12) as usize;
    }
    check(
        mismatches == 0 && property_failures == 0,
        format!("{pairs} pairs, {mismatches} LCS mismatches; {property_failures} symmetry/identity failures on 1000 random pairs"),
    )
}

// 11
fn sample_size_consistency() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    for _ in 0..100 {
        let eps: f64 = rng.random_range(0.001..=0.5);
        let a = alpha(rng.random_range(0.001..=0.5));
        let side = if rng.random_bool(0.5) { Sidedness::OneSided } else { Sidedness::TwoSided };
        let n = sample_size_for(eps, a, side).unwrap() as usize;
        let fits = dkw_epsilon(n, a, side) <= eps;
        let minimal = n == 1 || dkw_epsilon(n - 1, a, side) > eps;
        if !(fits && minimal) {
            failures.push(format!("eps={eps} alpha={} {side:?} n={n}", a.value()));
        }
    }
    check(failures.is_empty(), format!("{} failures of 100 {}", failures.len(), failures.join("; ")))
}

// 12
fn cli_input() -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let mut lines = String::new();
    for q in ["q-b", "q-a", "q c"] {
        for _ in 0..40 {
            let s: f64 = (rng.random_range(0..=20) as f64) / 20.0;
            lines.push_str(&format!("{{\"query_id\":\"{q}\",\"score\":{s}}}\n"));
        }
    }
    for _ in 0..30 {
        lines.push_str(&format!("{{\"query_id\":\"bin\",\"score\":{}}}\n", rng.random_range(0..=1)));
    }
    lines
}

fn run_cli(input: &Path, out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_probe-bounds"))
        .args(["evaluate", "--input"])
        .arg(input)
        .args(["--seed", "7", "--plots", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&status.stderr).into_owned())
    }
}

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.jsonl");
    std::fs::write(&input, cli_input()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_cli(&input, &a)?;
    run_cli(&input, &b)?;
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    let identical = ta == tb && ta.contains_key("report.json");

    let records = parse_records(&cli_input()).unwrap();
    let cfg = EvalConfig { seed: 7, ..EvalConfig::default() };
    let (first, _) = evaluate_records(&records, Measure::Score, &cfg).unwrap();
    let reparsed = parse_records(&write_records(&records.iter().map(|r| r.record.clone()).collect::<Vec<_>>())).unwrap();
    let (second, _) = evaluate_records(&reparsed, Measure::Score, &cfg).unwrap();
    let round_trip = first.to_json() == second.to_json();

    let rewritten = tmp.path().join("rewritten.jsonl");
    std::fs::write(&rewritten, write_records(&reparsed.iter().map(|r| r.record.clone()).collect::<Vec<_>>())).unwrap();
    let c = tmp.path().join("c");
    run_cli(&rewritten, &c)?;
    let cli_round_trip = tree_bytes(&c) == ta;
    check(
        identical && round_trip && cli_round_trip,
        format!(
            "{} files byte-identical across runs: {identical}; library round-trip: {round_trip}; CLI round-trip: {cli_round_trip}",
            ta.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 12] = [
        ("clopper-pearson closed forms", 1, clopper_pearson_closed_forms),
        ("quantile inversion fidelity", 10, quantile_inversion_fidelity),
        ("binary coverage", 60, binary_coverage),
        ("cdf band coverage", 120, cdf_band_coverage),
        ("moment bound coverage", 120, moment_bound_coverage),
        ("exhaustive small instances", 60, exhaustive_small_instances),
        ("ed table arithmetic", 1, table_arithmetic),
        ("entropy gradient", 5, entropy_gradient_fd),
        ("sampling correctness", 30, sampling_correctness),
        ("rouge-l / lcs oracle", 30, lcs_oracle),
        ("sample size consistency", 1, sample_size_consistency),
        ("cli determinism and round trip", 10, cli_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let in_budget = elapsed <= Duration::from_secs(*budget);
        let (ok, detail) = match outcome {
            Ok(d) => (in_budget, d),
            Err(d) => (false, d),
        };
        let label = if ok { "PASS" } else { "FAIL" };
        println!(
            "{label} {:>2} {name}: {detail} [{:.2}s of {budget}s]",
            i + 1,
            elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
