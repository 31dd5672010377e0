use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use probe_bounds::bounds::{sample_size_for, Partition, Sidedness, SignificanceLevel, DEFAULT_PARTITION_K};
use probe_bounds::coverage::{run_coverage, KnownDistribution};
use probe_bounds::decoding::{
    effective_temperature, sequence_confidence, sequence_entropy_loss, DecodingPolicy, SequenceDistribution,
};
use probe_bounds::report::{evaluate_records, parse_records, write_outputs, EvalConfig, Measure, PartitionChoice};
use probe_bounds::scores::EdConfig;
use probe_bounds::{Error, Result};

/// High-probability leakage bounds for sampled model outputs.
#[derive(Parser)]
#[command(name = "probe-bounds", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Score,
    RougeL,
    Keyword,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Score => Measure::Score,
            MeasureArg::RougeL => Measure::RougeL,
            MeasureArg::Keyword => Measure::Keyword,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Score a JSONL file and write bounds per query.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        /// Leakage measure applied to each record.
        #[arg(long = "h", value_enum, default_value = "score")]
        measure: MeasureArg,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_PARTITION_K, conflicts_with = "adapted_partition")]
        partition_k: usize,
        /// Put partition knots at the distinct sample values.
        #[arg(long)]
        adapted_partition: bool,
        #[arg(long, default_value_t = 2.0)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Threshold for the dataset-level fractions.
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write histogram, CDF band and convergence tables.
        #[arg(long)]
        plots: bool,
    },
    /// Check bound coverage against a known score distribution.
    Simulate {
        /// e.g. `bernoulli:0.05`, `beta:2,5`, `discrete:0,0.5,1@0.2,0.3,0.5`.
        #[arg(long)]
        dist: KnownDistribution,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_PARTITION_K)]
        partition_k: usize,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Smallest n whose DKW half-width is at most epsilon.
    SampleSize {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        sided: u8,
    },
    /// Entropy loss, confidence and decoding temperature for a seqdist file.
    Confidence {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        threshold: f64,
        #[arg(long, default_value_t = 1.0)]
        base_temperature: f64,
        #[arg(long, default_value_t = 0.9)]
        top_p: f64,
    },
}

#[derive(Serialize)]
struct ConfidenceOutput {
    steps: usize,
    vocab_size: usize,
    entropy_loss: f64,
    confidence: f64,
    effective_temperature: f64,
    policy: DecodingPolicy,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, content).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate {
            input,
            measure,
            alpha,
            partition_k,
            adapted_partition,
            rho,
            seed,
            threshold,
            out,
            plots,
        } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Error::Usage(format!("threshold must lie in [0, 1], got {threshold}")));
            }
            let partition = if adapted_partition {
                PartitionChoice::Adapted
            } else {
                Partition::uniform(partition_k)?;
                PartitionChoice::Uniform(partition_k)
            };
            let config = EvalConfig {
                alpha: SignificanceLevel::new(alpha)?,
                partition,
                ed: EdConfig::new(rho)?,
                seed,
                threshold,
            };
            let records = parse_records(&read(&input)?)?;
            let (report, samples) = evaluate_records(&records, measure.into(), &config)?;
            for path in write_outputs(&report, &samples, &out, plots)? {
                println!("{}", path.display());
            }
        }
        Command::Simulate {
            dist,
            n,
            trials,
            alpha,
            seed,
            partition_k,
            out,
        } => {
            let alpha = SignificanceLevel::new(alpha)?;
            let partition = Partition::uniform(partition_k)?;
            let report = run_coverage(&dist, n, alpha, &partition, trials, seed)?;
            match out {
                Some(path) => write(&path, &report.to_json())?,
                None => print!("{}", report.to_json()),
            }
        }
        Command::SampleSize { epsilon, alpha, sided } => {
            let sidedness = if sided == 1 { Sidedness::OneSided } else { Sidedness::TwoSided };
            println!("{}", sample_size_for(epsilon, SignificanceLevel::new(alpha)?, sidedness)?);
        }
        Command::Confidence {
            input,
            threshold,
            base_temperature,
            top_p,
        } => {
            let seq = SequenceDistribution::parse(&read(&input)?)?;
            let policy = DecodingPolicy::new(base_temperature, threshold, top_p)?;
            let confidence = sequence_confidence(&seq);
            let output = ConfidenceOutput {
                steps: seq.len(),
                vocab_size: seq.vocab_size(),
                entropy_loss: sequence_entropy_loss(&seq),
                confidence,
                effective_temperature: effective_temperature(confidence, &policy),
                policy,
            };
            println!("{}", serde_json::to_string_pretty(&output).expect("output serializes"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
