//! `penalized-bench`: runs the experiments and exposes the calculators and
//! diagnostics from the command line.
//!
//! Exit codes: 0 on success, 2 for usage and schema errors, 3 when a sampler
//! diverges, 1 for anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use penalized_sampler::diagnostics::{tv_histogram, violation_stats, w2_1d, BatchMetadata, SampleBatch};
use penalized_sampler::experiment::{run_experiment, ExperimentConfig, RunOptions};
use penalized_sampler::geometry::{BodySpec, ConvexBody};
use penalized_sampler::theory::{
    penalized_constants, schedule_for, Algorithm, ConstantsInput, Multipliers, ScheduleInput,
};
use penalized_sampler::Error;

#[derive(Parser, Debug)]
#[command(name = "penalized-bench", version, about = "Penalized Langevin / HMC benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; overrides the config and the PENALIZED_SAMPLER_SEED variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum number of concurrent runs.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a config file.
    Sample {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a built-in experiment, optionally overridden by a config file.
    Experiment {
        /// dirichlet[-pld|-phmc], linreg-synthetic[-psgld|-psghmc],
        /// linreg-csv[-psgld|-psghmc]
        tag: String,
        /// Regression CSV for the linreg-csv presets.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of runs.
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Constant and schedule calculators.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Distance and constraint diagnostics on sample files.
    Diag {
        #[command(subcommand)]
        command: DiagCommand,
    },
}

#[derive(Subcommand, Debug)]
enum TheoryCommand {
    /// Print the penalized constants as JSON.
    Constants {
        #[arg(long = "L")]
        l: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.0)]
        grad_f0_norm: f64,
        #[arg(long, default_value_t = 0.0)]
        f0: f64,
        #[arg(long, default_value_t = 4.0)]
        ell: f64,
        #[arg(long, default_value_t = 1.0)]
        m_s: f64,
        #[arg(long, default_value_t = 0.25)]
        b_s: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
    },
    /// Print the step-size schedule and iteration budget as JSON.
    Schedule {
        #[arg(long)]
        alg: String,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 1)]
        d: usize,
        #[arg(long = "L", default_value_t = 1.0)]
        l: f64,
        #[arg(long, default_value_t = 1.0)]
        mu: f64,
        #[arg(long, default_value_t = 4.0)]
        ell: f64,
        #[arg(long)]
        lambda_star: Option<f64>,
        #[arg(long)]
        mu_star: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        k_mult: f64,
        #[arg(long, default_value_t = 1.0)]
        eta_mult: f64,
        #[arg(long, default_value_t = 1.0)]
        batch_mult: f64,
    },
}

#[derive(Subcommand, Debug)]
enum DiagCommand {
    /// W2 between one coordinate of two sample files.
    W2 {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        coord: usize,
    },
    /// Histogram total variation between one coordinate of two sample files.
    Tv {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0)]
        coord: usize,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Fraction outside a body and distance statistics, as JSON.
    Violations {
        #[arg(long)]
        file: PathBuf,
        /// Body as JSON, e.g. '{"type":"lp_ball","dim":2,"p":1,"radius":1}'.
        #[arg(long)]
        body: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Divergence { .. } => 3,
                Error::Schema(_) | Error::Json(_) => 2,
                Error::InvalidArgument(_) => {
                    eprintln!("\n{}", Cli::command().render_usage());
                    2
                }
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn options(run: &RunArgs) -> RunOptions {
    RunOptions {
        jobs: run.jobs,
        out_dir: run.out.clone(),
        seed: run.seed,
    }
}

fn report(summary: &penalized_sampler::experiment::Summary, out: &Path) {
    println!(
        "{} {} runs={} samples/run={} wall={:.2}s -> {}",
        summary.experiment,
        summary.algorithm,
        summary.n_runs,
        summary.n_samples,
        summary.wall_time_seconds,
        out.display()
    );
}

fn out_dir(run: &RunArgs, cfg: &ExperimentConfig) -> PathBuf {
    run.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Sample { run } => {
            let path = run
                .config
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("sample requires --config".into()))?;
            let cfg = ExperimentConfig::load(path)?;
            let summary = run_experiment(&cfg, &options(&run))?;
            report(&summary, &out_dir(&run, &cfg));
        }
        Command::Experiment { tag, data, runs, run } => {
            let mut cfg = match &run.config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(path)?;
                    if !tag.starts_with(cfg.experiment.tag()) {
                        return Err(Error::InvalidArgument(format!(
                            "config describes a {} experiment, not {tag}",
                            cfg.experiment.tag()
                        )));
                    }
                    cfg
                }
                None => ExperimentConfig::preset(&tag)?,
            };
            if let Some(d) = data {
                match &mut cfg.experiment {
                    penalized_sampler::experiment::ExperimentSpec::LinregCsv { path, .. } => *path = d,
                    _ => return Err(Error::InvalidArgument("--data only applies to linreg-csv".into())),
                }
            }
            if let Some(n) = runs {
                cfg.n_runs = n;
            }
            let summary = run_experiment(&cfg, &options(&run))?;
            report(&summary, &out_dir(&run, &cfg));
        }
        Command::Theory { command } => match command {
            TheoryCommand::Constants {
                l,
                delta,
                gamma,
                grad_f0_norm,
                f0,
                ell,
                m_s,
                b_s,
                d,
            } => {
                let c = penalized_constants(&ConstantsInput {
                    l,
                    grad_f0_norm,
                    f0,
                    ell,
                    m_s,
                    b_s,
                    delta,
                    gamma,
                    d,
                })?;
                println!("{}", serde_json::to_string_pretty(&c)?);
            }
            TheoryCommand::Schedule {
                alg,
                eps,
                d,
                l,
                mu,
                ell,
                lambda_star,
                mu_star,
                k_mult,
                eta_mult,
                batch_mult,
            } => {
                let plan = schedule_for(&ScheduleInput {
                    algorithm: Algorithm::parse(&alg)?,
                    epsilon: eps,
                    d,
                    l,
                    mu,
                    ell,
                    lambda_star,
                    mu_star,
                    multipliers: Multipliers {
                        k: k_mult,
                        eta: eta_mult,
                        batch: batch_mult,
                    },
                })?;
                println!("{}", serde_json::to_string_pretty(&plan)?);
            }
        },
        Command::Diag { command } => match command {
            DiagCommand::W2 { a, b, coord } => {
                println!("{:.17e}", w2_1d(&read_column(&a, coord)?, &read_column(&b, coord)?)?);
            }
            DiagCommand::Tv { a, b, coord, bins } => {
                let v = tv_histogram(&read_column(&a, coord)?, &read_column(&b, coord)?, bins, None)?;
                println!("{v:.17e}");
            }
            DiagCommand::Violations { file, body } => {
                let spec: BodySpec = serde_json::from_str(&body).map_err(|e| Error::Schema(format!("body: {e}")))?;
                let body = ConvexBody::try_from(spec)?;
                let rows = read_points(&file)?;
                let batch = SampleBatch::from_rows(
                    &rows,
                    BatchMetadata {
                        algorithm: "file".into(),
                        seed: 0,
                        chain: 0,
                    },
                )?;
                println!("{}", serde_json::to_string_pretty(&violation_stats(&body, &batch)?)?);
            }
        },
    }
    Ok(())
}

/// Position columns of a sample file: `x0, x1, ...` when present, otherwise
/// every column.
fn position_columns(headers: &csv::StringRecord) -> Vec<usize> {
    let named: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.strip_prefix('x').is_some_and(|r| r.parse::<usize>().is_ok()))
        .map(|(i, _)| i)
        .collect();
    if named.is_empty() {
        (0..headers.len()).collect()
    } else {
        named
    }
}

fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .clone();
    let cols = position_columns(&headers);
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let row = cols
            .iter()
            .map(|&c| {
                let tok = rec.get(c).unwrap_or("");
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: {tok:?}"),
                })
            })
            .collect::<Result<Vec<f64>, Error>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_column(path: &Path, coord: usize) -> Result<Vec<f64>, Error> {
    let rows = read_points(path)?;
    rows.into_iter()
        .map(|r| {
            r.get(coord)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no coordinate {coord}", path.display())))
        })
        .collect()
}
