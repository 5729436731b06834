//! `eenn`: plan early-exit placements and thresholds from the command line.

use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use eenn_core::decision::{EfficiencyMetric, ThresholdGrid, Weights};
use eenn_core::hardware::Platform;
use eenn_core::planner::{run_search, PlanError, PlanOptions, PlanReport, DEFAULT_CORRECTION};
use eenn_core::profiles::{load_records, CalibrationSource, RecordSet};
use eenn_core::simulate::{compare, simulate_cascade};
use eenn_core::synth::{generate_synthetic_profiles, GeneratorSpec};
use eenn_core::Backbone;

const EXIT_INVALID: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "eenn", version, about = "Early-exit augmentation planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Validation,
    Training,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Macs,
    Latency,
    Energy,
}

#[derive(Subcommand)]
enum Command {
    /// Search exit placements and thresholds and write a plan report.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hardware: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Efficiency and accuracy weights.
        #[arg(long, default_value = "0.9,0.1")]
        weights: String,
        /// Quantity the efficiency weight applies to.
        #[arg(long, value_enum, default_value = "macs")]
        metric: Metric,
        #[arg(long, default_value_t = 0.4)]
        grid_min: f64,
        #[arg(long, default_value_t = 1.0)]
        grid_max: f64,
        #[arg(long, default_value_t = 13)]
        grid_points: usize,
        /// Threshold shrink factor, applied with `--source training`.
        #[arg(long, default_value_t = DEFAULT_CORRECTION)]
        correction: f64,
        #[arg(long, value_enum, default_value = "validation")]
        source: Source,
        /// Points per exit for a second, finer threshold pass.
        #[arg(long)]
        refine: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        /// Maximum total exit-branch MACs as a share of the backbone.
        #[arg(long, default_value_t = eenn_core::exits::DEFAULT_EXIT_BUDGET)]
        max_exit_fraction: f64,
        /// Minimum standalone accuracy for an exit to be considered.
        #[arg(long)]
        viability_floor: Option<f64>,
        /// Processor the backbone-alone reference runs on (default: last).
        #[arg(long)]
        baseline_processor: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a comparison table instead of the JSON report on stdout.
        #[arg(long)]
        summary: bool,
    },
    /// Generate synthetic calibration records.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed in the spec.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay records through a saved plan and compare with its prediction.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_INVALID, error }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_records(path: &Path) -> anyhow::Result<RecordSet> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    load_records(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => io::stdout().write_all(bytes).context("writing stdout"),
    }
}

fn parse_weights(text: &str) -> anyhow::Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [e, a] = parts.as_slice() else {
        bail!("weights must be two comma-separated numbers, got {text:?}");
    };
    Ok((e.parse().context("efficiency weight")?, a.parse().context("accuracy weight")?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Plan {
            model,
            hardware,
            records,
            weights,
            metric,
            grid_min,
            grid_max,
            grid_points,
            correction,
            source,
            refine,
            seed,
            workers,
            max_exit_fraction,
            viability_floor,
            baseline_processor,
            out,
            summary,
        } => {
            let backbone = Backbone::from_json(&read(&model)?).with_context(|| format!("model {}", model.display()))?;
            let plat =
                Platform::from_json(&read(&hardware)?).with_context(|| format!("hardware {}", hardware.display()))?;
            let records = read_records(&records)?;
            let (we, wa) = parse_weights(&weights)?;
            let metric = match metric {
                Metric::Macs => EfficiencyMetric::Macs,
                Metric::Latency => EfficiencyMetric::Latency,
                Metric::Energy => EfficiencyMetric::Energy,
            };
            let opts = PlanOptions {
                weights: Weights::new(we, wa).map_err(anyhow::Error::from)?.with_metric(metric),
                grid: ThresholdGrid::linspace(grid_min, grid_max, grid_points).map_err(anyhow::Error::from)?,
                correction,
                source: match source {
                    Source::Validation => CalibrationSource::Validation,
                    Source::Training => CalibrationSource::TrainingWithCorrection,
                },
                refine,
                seed,
                workers,
                max_exit_fraction,
                viability_floor,
                baseline_processor,
            };
            let report = match run_search(&backbone, &plat, &records, &opts) {
                Ok(r) => r,
                Err(PlanError::Infeasible(why)) => {
                    let detail = serde_json::to_string_pretty(&why).map_err(anyhow::Error::from)?;
                    return Err(Failure {
                        code: EXIT_INFEASIBLE,
                        error: anyhow!("{}\n{detail}", PlanError::Infeasible(why.clone())),
                    });
                }
                Err(e) => return Err(anyhow::Error::from(e).into()),
            };
            let mut json = serde_json::to_vec_pretty(&report).map_err(anyhow::Error::from)?;
            json.push(b'\n');
            if summary {
                if let Some(p) = &out {
                    emit(Some(p), &json)?;
                }
                emit(None, report.summary().as_bytes())?;
            } else {
                emit(out.as_deref(), &json)?;
            }
            Ok(())
        }
        Command::Synth { spec, seed, out } => {
            let spec = GeneratorSpec::from_json(&read(&spec)?).map_err(anyhow::Error::from)?;
            let records = generate_synthetic_profiles(&spec, seed.unwrap_or(spec.seed)).map_err(anyhow::Error::from)?;
            let mut csv = Vec::new();
            records.write_csv(&mut csv).map_err(anyhow::Error::from)?;
            emit(out.as_deref(), &csv)?;
            Ok(())
        }
        Command::Simulate { plan, records, out } => {
            let report: PlanReport = serde_json::from_str(&read(&plan)?).context("parsing plan report")?;
            let records = read_records(&records)?;
            let c = &report.chosen;
            let exits: Vec<&str> = c.exit_blocks.iter().map(String::as_str).collect();
            let simulated =
                simulate_cascade(&exits, &c.thresholds, &records, &c.stages).map_err(anyhow::Error::from)?;
            let divergence = compare(&c.predicted, &simulated);
            let doc = serde_json::json!({
                "architecture": c.architecture,
                "thresholds": c.thresholds,
                "simulated": simulated,
                "divergence": divergence,
            });
            let mut json = serde_json::to_vec_pretty(&doc).map_err(anyhow::Error::from)?;
            json.push(b'\n');
            emit(out.as_deref(), &json)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
