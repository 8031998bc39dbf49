use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fixpoint::ssm::Lgssm;
use fixpoint::{Gaussian, Rep};
use fixpoint_harness::bvp::{run_bvp_sweep, NoiseMode, Spacing, DEFAULT_SWEEP};
use fixpoint_harness::em::{run_track_em, DEFAULT_ITERS};
use fixpoint_harness::random::gen_random_model;
use fixpoint_harness::report::{emit_report, render};
use fixpoint_harness::selftest::{run_selftest, TOLERANCE};
use fixpoint_harness::timing::{run_bench, run_method, BenchConfig};
use fixpoint_harness::{ExperimentReport, Method, Precision, ReportFormat};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "fixpoint", version, about = "Fixed-point smoothing experiments")]
struct Cli {
    /// Floating-point precision; overrides FIXPOINT_PRECISION.
    #[arg(long, global = true)]
    precision: Option<Precision>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RepArg {
    Dense,
    Factor,
    Both,
}

impl RepArg {
    fn reps(self) -> Vec<Rep> {
        match self {
            RepArg::Dense => vec![Rep::Dense],
            RepArg::Factor => vec![Rep::Factor],
            RepArg::Both => vec![Rep::Dense, Rep::Factor],
        }
    }
}

#[derive(clap::Args)]
struct Output {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv, json or md; guessed from the output extension, else csv.
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Runtime and memory of the three smoothers on random models.
    Bench {
        /// Observation dimensions; the state has twice as many.
        #[arg(long, value_delimiter = ',', default_values_t = [2, 5, 10, 20, 50, 100])]
        d: Vec<usize>,
        #[arg(long = "K", default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
        methods: Vec<Method>,
        #[arg(long, value_enum, default_value_t = RepArg::Factor)]
        rep: RepArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip timing and report the memory model only.
        #[arg(long)]
        memory_only: bool,
        #[command(flatten)]
        output: Output,
    },
    /// Boundary value problem robustness sweep.
    Bvp {
        #[arg(long = "K-sweep", value_delimiter = ',', default_values_t = DEFAULT_SWEEP)]
        sweep: Vec<usize>,
        #[arg(long, value_enum, default_value_t = RepArg::Both)]
        rep: RepArg,
        /// as-printed or standard
        #[arg(long, default_value = "as-printed")]
        noise: NoiseMode,
        /// printed (Δt = 1/K) or grid (Δt = 2/K)
        #[arg(long, default_value = "printed")]
        spacing: Spacing,
        #[command(flatten)]
        output: Output,
    },
    /// EM for the initial mean of a car tracking model.
    TrackEm {
        #[arg(long, default_value_t = DEFAULT_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: Output,
    },
    /// Checks all smoothing routes against the brute-force posterior.
    Selftest {
        #[arg(long, default_value_t = 20)]
        cases: u64,
    },
    /// Writes a random model and sampled data as JSON.
    Generate {
        #[arg(long)]
        d: usize,
        #[arg(long = "K")]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Computes p(x0 | y) for a model file.
    Smooth {
        /// JSON with `model` and `observations`, as written by `generate`.
        input: PathBuf,
        #[arg(long, default_value = "fps")]
        method: Method,
        #[arg(long, value_enum, default_value_t = RepArg::Factor)]
        rep: RepArg,
    },
}

#[derive(Serialize, Deserialize)]
struct Problem {
    model: Lgssm<f64>,
    #[serde(with = "fixpoint::ssm::vectors")]
    observations: Vec<DVector<f64>>,
}

fn write_output(report: &ExperimentReport, output: &Output) -> Result<()> {
    let format = output
        .format
        .or_else(|| output.out.as_deref().and_then(ReportFormat::from_path))
        .unwrap_or_default();
    match &output.out {
        Some(path) => emit_report(report, format, path),
        None => {
            print!("{}", render(report, format)?);
            Ok(())
        }
    }
}

fn write_text(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let precision = match cli.precision {
        Some(p) => p,
        None => Precision::from_env().map_err(anyhow::Error::msg)?,
    };
    match cli.command {
        Command::Bench {
            d,
            steps,
            repeats,
            methods,
            rep,
            seed,
            memory_only,
            output,
        } => {
            if d.contains(&0) || steps == 0 {
                bail!("d and K must be at least 1");
            }
            let mut configs = Vec::new();
            for &r in &rep.reps() {
                for &m in &methods {
                    for &dim in &d {
                        configs.push(BenchConfig {
                            d: dim,
                            steps,
                            seed,
                            precision,
                            rep: r,
                            method: m,
                            repeats,
                        });
                    }
                }
            }
            let mut report = ExperimentReport::new();
            report.rows = run_bench(&configs, !memory_only)?;
            report.metadata.insert(
                "bench.data".into(),
                "observations sampled from the generated model; entries scaled by 1/K".into(),
            );
            report
                .metadata
                .insert("bench.memory".into(), "closed-form float count × 4 bytes".into());
            write_output(&report, &output)?;
        }
        Command::Bvp {
            sweep,
            rep,
            noise,
            spacing,
            output,
        } => {
            if let Some(k) = sweep.iter().find(|&&k| k < 2) {
                bail!("K must be at least 2, got {k}");
            }
            let mut report = ExperimentReport::new();
            report.rows = run_bvp_sweep(&sweep, &rep.reps(), noise, spacing, precision)?;
            report.metadata.insert("bvp.noise".into(), noise.to_string());
            report.metadata.insert(
                "bvp.reference".into(),
                "factor-form state-augmented filter".into(),
            );
            write_output(&report, &output)?;
        }
        Command::TrackEm { iters, seed, output } => {
            if precision != Precision::F64 {
                eprintln!("track-em runs in f64 only");
            }
            write_output(&run_track_em(iters, seed)?, &output)?;
        }
        Command::Selftest { cases } => {
            let checks = run_selftest(cases)?;
            let mut failed = 0;
            for c in &checks {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                failed += usize::from(!c.passed());
                println!(
                    "{status} seed={} D={} d={} K={} mean_err={:.2e} cov_err={:.2e}",
                    c.seed, c.state_dim, c.obs_dim, c.steps, c.mean_error, c.cov_error
                );
            }
            println!(
                "{} of {} cases within {TOLERANCE:e}",
                checks.len() - failed,
                checks.len()
            );
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Generate { d, steps, seed, out } => {
            let (model, observations) = gen_random_model::<f64>(d, steps, seed)?;
            let text = serde_json::to_string_pretty(&Problem { model, observations })?;
            write_text(&text, out.as_deref())?;
        }
        Command::Smooth { input, method, rep } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let problem: Problem =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
            let results: Vec<Gaussian<f64>> = rep
                .reps()
                .into_iter()
                .map(|r| run_method(method, &problem.model, &problem.observations, r))
                .collect::<fixpoint::Result<_>>()?;
            let text = if results.len() == 1 {
                serde_json::to_string_pretty(&results[0])?
            } else {
                serde_json::to_string_pretty(&results)?
            };
            write_text(&text, None)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
