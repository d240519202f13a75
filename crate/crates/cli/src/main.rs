use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dslda::datagen::{synthetic_model, ExperimentConfig};
use dslda::experiment::{
    bench, real_experiment, simulate, tune_sweep, write_records_csv, ParamTable, RealConfig, SweepMode, SweepPlan,
    SyntheticGrid,
};
use dslda::ingest::{default_c_grid, default_t_grid, load_site, Schema};
use dslda::linalg::{DenseMatrix, DenseVector};
use dslda::solver::{solve_dantzig_with, DantzigProblem, SolveStatus, SolverOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "dslda", version, about = "Distributed sparse linear discriminant analysis")]
struct Cli {
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the machine count on synthetic data and write one CSV row per (method, m, rep)
    Simulate(SimulateArgs),
    /// Per-machine wall time of the distributed and centralized fits
    Bench(BenchArgs),
    /// Misclassification on per-site real data with cross-validated constants
    Real(RealArgs),
    /// Solve min |beta|_1 s.t. |A beta - b|_inf <= lambda and print JSON
    Solve(SolveArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    #[value(name = "fixed_N")]
    FixedTotal,
    #[value(name = "fixed_n")]
    FixedPerMachine,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 200)]
    d: usize,
    /// Total sample size
    #[arg(long = "N", default_value_t = 10_000)]
    n_total: usize,
    /// Machine counts, comma separated
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20,50")]
    m: Vec<usize>,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    /// Class-1 share of every shard
    #[arg(long, default_value_t = 0.5)]
    r: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// C in lambda = C * sqrt(log d / n)
    #[arg(long = "lambda-c", default_value_t = 1.0)]
    lambda_c: f64,
    /// t_c in t = t_c * sqrt(log d / N)
    #[arg(long = "t-c", default_value_t = 3.0)]
    t_c: f64,
    /// Output CSV (stdout if absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ModelArgs {
    fn config(&self, reps: usize) -> ExperimentConfig {
        ExperimentConfig {
            d: self.d,
            n_total: self.n_total,
            m: self.m.first().copied().unwrap_or(1),
            r: self.r,
            rho: self.rho,
            seed: self.seed,
            lambda_c: self.lambda_c,
            t_c: self.t_c,
            reps,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Per-machine sample size in fixed_n mode
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, value_enum, default_value = "fixed_N")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Test rows per class for the misclassification column
    #[arg(long, default_value_t = 500)]
    test_per_class: usize,
    /// Pick C and t_c per (method, m) by grid search on separate draws
    #[arg(long)]
    tune: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct RealArgs {
    /// One CSV per site, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    data: Vec<PathBuf>,
    /// JSON column schema
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Full report as JSON
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Square symmetric matrix, one row per line, comma or whitespace separated
    #[arg(long)]
    matrix: PathBuf,
    /// Right-hand side, comma or whitespace separated
    #[arg(long)]
    vector: PathBuf,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    max_iterations: Option<usize>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<dslda::Error>().map(dslda::Error::root) {
            Some(dslda::Error::Infeasible { .. }) => EXIT_INFEASIBLE,
            Some(
                dslda::Error::Io { .. }
                | dslda::Error::Csv(_)
                | dslda::Error::Json(_)
                | dslda::Error::Parse { .. }
                | dslda::Error::SchemaMismatch(_),
            ) => EXIT_IO,
            _ if error.downcast_ref::<io::Error>().is_some() => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure { code, error }
    }
}

impl From<dslda::Error> for Failure {
    fn from(e: dslda::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CmdResult = Result<u8, Failure>;

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| dslda::Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn cmd_simulate(a: &SimulateArgs) -> CmdResult {
    let base = a.model.config(a.reps);
    let model = synthetic_model(base.d, base.rho)?;
    let mode = match a.mode {
        Mode::FixedTotal => SweepMode::FixedTotal,
        Mode::FixedPerMachine => SweepMode::FixedPerMachine(a.n),
    };
    let params = if a.tune {
        let table = tune_sweep(&model, &base, &a.model.m, mode, &SyntheticGrid::default())?;
        for ((method, m), p) in &table.entries {
            eprintln!("tuned {method} m={m}: C={} t_c={}", p.lambda_c, p.t_c);
        }
        table
    } else {
        ParamTable::uniform(base.lambda_c, base.t_c)
    };
    let plan = SweepPlan {
        base,
        m_list: a.model.m.clone(),
        mode,
        params,
        test_per_class: a.test_per_class,
    };
    let records = simulate(&model, &plan);
    let failed = records.iter().filter(|r| r.status != "ok").count();
    write_records_csv(&records, output(a.model.out.as_deref())?)?;
    if failed > 0 {
        eprintln!("{failed} of {} runs failed; see the status column", records.len());
    }
    Ok(0)
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let base = a.model.config(1);
    let model = synthetic_model(base.d, base.rho)?;
    let rows = bench(&model, &base, &a.model.m)?;
    let mut w = output(a.model.out.as_deref())?;
    let mut write = || -> io::Result<()> {
        writeln!(w, "m,time_ms")?;
        for r in &rows {
            writeln!(w, "{},{:.3}", r.m, r.time_ms)?;
            eprintln!("m={}: centralized {:.3} ms", r.m, r.centralized_ms);
        }
        w.flush()
    };
    write().context("writing benchmark table")?;
    Ok(0)
}

fn cmd_real(a: &RealArgs) -> CmdResult {
    let schema = Schema::from_json_file(&a.schema)?;
    let sites = a
        .data
        .iter()
        .enumerate()
        .map(|(i, p)| load_site(p, &schema, i))
        .collect::<dslda::Result<Vec<_>>>()?;
    let cfg = RealConfig {
        train_fraction: a.train_fraction,
        folds: a.folds,
        reps: a.reps,
        seed: a.seed,
        c_grid: default_c_grid(),
        t_grid: default_t_grid(),
    };
    let report = real_experiment(&sites, &cfg)?;
    println!("method,mean,sd");
    for m in &report.methods {
        println!("{},{:.4},{:.4}", m.method, m.mean, m.sd);
    }
    if let Some(p) = &a.out {
        let w = output(Some(p))?;
        serde_json::to_writer_pretty(w, &report).context("writing report")?;
    }
    Ok(0)
}

fn parse_numbers(path: &Path) -> anyhow::Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| dslda::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>().map_err(|e| dslda::Error::Parse {
                    row: i + 1,
                    column: path.display().to_string(),
                    message: format!("{s:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn cmd_solve(a: &SolveArgs) -> CmdResult {
    let matrix = DenseMatrix::from_rows(&parse_numbers(&a.matrix)?)?;
    let vector = DenseVector::new(parse_numbers(&a.vector)?.concat())?;
    let problem = DantzigProblem::new(matrix, vector, a.lambda)?;
    let solution = solve_dantzig_with(
        &problem,
        SolverOptions {
            max_iterations: a.max_iterations,
        },
    )?;
    println!("{}", serde_json::to_string_pretty(&solution).context("serializing solution")?);
    Ok(match solution.status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => {
            eprintln!("infeasible: no beta satisfies the constraint");
            EXIT_INFEASIBLE
        }
        SolveStatus::IterationLimit => {
            eprintln!("iteration limit reached");
            EXIT_USAGE
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let result = pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Real(a) => cmd_real(a),
        Command::Solve(a) => cmd_solve(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
