use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use elicit::analysis::{bounds_row, recommend};
use elicit::bench::{run_experiment, Experiment, ExperimentSpec};
use elicit::io::{parse_caps, read_json, read_scenarios, write_json, DatasetFile, Truth};
use elicit::plot::{read_summary, render_svg, Metric};
use elicit::{AppError, Result};
use elicit_core::bounds::Lambda;
use elicit_core::design::{full_rank_design, multi_round_step, random_queries, DesignState, Round, DEFAULT_SCALE};
use elicit_core::grid::BreakpointGrid;
use elicit_core::lottery::Lottery;
use elicit_core::mle::{solve_mle, MleProblem, MleSolution};
use elicit_core::simulate::{simulate, stream_rng, ExponentialUtility, GridSpec, SimulatedDM, GRID_STREAM, QUERY_STREAM};
use elicit_core::utility::{Shape, StructureLevel};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "elicit", version, about = "Utility elicitation from noisy pairwise lottery choices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Full,
    Nolip,
    Mono,
    None,
}

impl From<StructureArg> for Shape {
    fn from(s: StructureArg) -> Shape {
        match s {
            StructureArg::Full => Shape::Full,
            StructureArg::Nolip => Shape::NoLipschitz,
            StructureArg::Mono => Shape::MonotoneOnly,
            StructureArg::None => Shape::Unstructured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignMode {
    Random,
    Fullrank,
    Multiround,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentArg {
    Fig2,
    Fig3,
    Table2,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate answers of a decision maker with the benchmark utility.
    Simulate {
        #[arg(long)]
        seed: u64,
        #[arg(long = "K")]
        k: usize,
        #[arg(long = "N")]
        n: usize,
        #[arg(long, default_value_t = 10.0)]
        sigma_star: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the true utility and scale here.
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Maximum-likelihood estimate of the utility and the error scale.
    Elicit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        structure: StructureArg,
        #[arg(long = "L", default_value_t = 10.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 100.0)]
        cbar: f64,
        /// Pin sigma instead of estimating it (benchmarking only).
        #[arg(long)]
        fixed_sigma: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-sample error bounds and realised errors as a CSV row.
    Bounds {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// `auto` or a non-negative ridge value.
        #[arg(long, default_value = "auto")]
        lambda: String,
        /// Omit the CSV header, for appending rows of a sweep.
        #[arg(long)]
        no_header: bool,
    },
    /// Generate query pairs.
    Design {
        #[arg(long, value_enum)]
        mode: DesignMode,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        #[arg(long = "N", default_value_t = 10)]
        n: usize,
        #[arg(long = "K", default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000.0)]
        upper: f64,
        #[arg(long, default_value_t = 100.0)]
        quantum: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Portfolio maximising expected utility of an estimate, with PaR/PRaR.
    Portfolio {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long)]
        budget: f64,
        /// One cap per risky asset (fractions of the budget), or one for all.
        #[arg(long, default_value = "1")]
        caps: String,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation experiment and write CSV summaries.
    Bench {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long, default_value_t = 30)]
        seeds: usize,
        /// Comma-separated K schedule overriding the default.
        #[arg(long)]
        ks: Option<String>,
        #[arg(long = "N")]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot a summary.csv as SVG.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long, default_value = "l2")]
        metric: String,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value = "sessions")]
        data_dir: PathBuf,
    },
}

#[derive(Serialize)]
struct DesignOutput {
    mode: &'static str,
    grid: BreakpointGrid,
    queries: Vec<QueryOut>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    rounds: Vec<Round>,
}

#[derive(Serialize)]
struct QueryOut {
    w: Lottery,
    y: Lottery,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { seed, k, n, sigma_star, out, truth_out } => {
            let dm = SimulatedDM::new(ExponentialUtility::BENCHMARK, sigma_star)?;
            let (grid, records) = simulate(&dm, &GridSpec::benchmark(n), k, seed)?;
            write_json(&out, &DatasetFile { grid, records, seed: Some(seed), sigma_star: Some(sigma_star) })?;
            if let Some(path) = truth_out {
                write_json(&path, &Truth::benchmark(sigma_star))?;
            }
        }
        Command::Elicit { data, structure, lipschitz, cbar, fixed_sigma, out } => {
            let data: DatasetFile = read_json(&data)?;
            let level = StructureLevel::new(structure.into(), lipschitz, cbar)?;
            let mut problem = MleProblem::new(data.grid, &data.records, level)?;
            if let Some(s) = fixed_sigma {
                problem = problem.with_fixed_sigma(s)?;
            }
            let sol = solve_mle(&problem)?;
            eprintln!("status {:?}, gamma* {:.6}, loglik {:.6}", sol.status, sol.gamma_star, sol.loglik);
            write_json(&out, &sol)?;
        }
        Command::Bounds { solution, truth, delta, lambda, no_header } => {
            let sol: MleSolution = read_json(&solution)?;
            let truth: Truth = read_json(&truth)?;
            let lambda = match lambda.as_str() {
                "auto" => Lambda::Auto,
                v => Lambda::Value(v.parse().map_err(|_| AppError::Invalid(format!("lambda `{v}` is not a number")))?),
            };
            let row = bounds_row(&sol, &truth, delta, lambda)?;
            let mut w = csv::WriterBuilder::new().has_headers(!no_header).from_writer(std::io::stdout());
            w.serialize(row)?;
            w.flush()?;
        }
        Command::Design { mode, rounds, n, k, seed, upper, quantum, out } => {
            let step = quantum;
            let mut rng = stream_rng(seed, QUERY_STREAM);
            let output = match mode {
                DesignMode::Multiround => {
                    let mut state = DesignState::new(upper, quantum, DEFAULT_SCALE)?;
                    let mut done = Vec::with_capacity(rounds);
                    for _ in 0..rounds {
                        match multi_round_step(&mut state) {
                            Ok(r) => done.push(r),
                            Err(elicit_core::Error::DesignComplete) => break,
                            Err(e) => return Err(e.into()),
                        }
                    }
                    let queries = done.iter().flat_map(|r| r.queries.iter().map(|q| QueryOut { w: q.w.clone(), y: q.y.clone() })).collect();
                    DesignOutput { mode: "multiround", grid: state.grid().clone(), queries, rounds: done }
                }
                DesignMode::Random | DesignMode::Fullrank => {
                    let grid = GridSpec { n, upper, step }.sample(&mut stream_rng(seed, GRID_STREAM))?;
                    let (name, qs) = match mode {
                        DesignMode::Random => ("random", random_queries(&grid, k, &mut rng)?),
                        _ => ("fullrank", full_rank_design(&grid, k, &mut rng)?),
                    };
                    let queries = qs.into_iter().map(|q| QueryOut { w: q.w, y: q.y }).collect();
                    DesignOutput { mode: name, grid, queries, rounds: Vec::new() }
                }
            };
            write_json(&out, &output)?;
        }
        Command::Portfolio { solution, scenarios, budget, caps, delta, out } => {
            let sol: MleSolution = read_json(&solution)?;
            let scenarios = read_scenarios(&scenarios)?;
            let caps = parse_caps(&caps, scenarios[0].len() - 1)?;
            let rec = recommend(&sol, scenarios, budget, caps, delta)?;
            match out {
                Some(path) => write_json(&path, &rec)?,
                None => {
                    let mut stdout = std::io::stdout().lock();
                    serde_json::to_writer_pretty(&mut stdout, &rec)?;
                    writeln!(stdout)?;
                }
            }
        }
        Command::Bench { experiment, seeds, ks, n, out } => {
            let experiment = match experiment {
                ExperimentArg::Fig2 => Experiment::SigmaVariable,
                ExperimentArg::Fig3 => Experiment::StructureLevels,
                ExperimentArg::Table2 => Experiment::RankEffect,
            };
            let mut spec = ExperimentSpec::defaults(experiment, seeds);
            if let Some(ks) = ks {
                spec.ks = ks
                    .split(',')
                    .map(|k| k.trim().parse().map_err(|_| AppError::Invalid(format!("K `{k}` is not a count"))))
                    .collect::<Result<_>>()?;
            }
            if let Some(n) = n {
                spec.n = n;
            }
            let result = run_experiment(&spec)?;
            result.write(&out)?;
            for r in &result.summary {
                eprintln!("{:>16} K={:<5} l2={:.4} linf={:.4} failures={}", r.arm, r.k, r.mean_l2, r.mean_linf, r.failures);
            }
        }
        Command::Plot { summary, metric, title, out } => {
            let rows = read_summary(&summary)?;
            let svg = render_svg(&rows, Metric::parse(&metric)?, &title)?;
            std::fs::write(&out, svg)?;
        }
        Command::Serve { addr, data_dir } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(elicit::service::serve(&addr, &data_dir))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
