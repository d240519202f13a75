//! Experiment drivers: synthetic sweeps over the machine count, oracle
//! tuning of the constants, timing benchmark and the real-data protocol.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_shards, generate_test_set, ExperimentConfig, TrueModel};
use crate::error::{Error, Result};
use crate::ingest::{
    informative_columns, kfold_tune_method, select_columns, split_train_test, SiteTable, TestSplit, TuningResult,
};
use crate::linalg::DenseMatrix;
use crate::metrics::{evaluate, misclassification_rate, EvalReport, TestSet};
use crate::pipeline::{centralized_fit, lambda_for, naive_fit, DistributedRound, Fit, Method, ThresholdRule};
use crate::worker::{summarize_shard, DataShard, ShardSummary};

/// How the per-machine size follows from `m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepMode {
    /// Total `N` fixed, `n = N / m`.
    FixedTotal,
    /// Per-machine `n` fixed, `N = n·m`.
    FixedPerMachine(usize),
}

/// The configuration actually run for machine count `m`.
pub fn config_for(base: &ExperimentConfig, m: usize, mode: SweepMode) -> ExperimentConfig {
    let n_total = match mode {
        SweepMode::FixedTotal => base.n_total,
        SweepMode::FixedPerMachine(n) => n * m,
    };
    ExperimentConfig {
        m,
        n_total,
        ..base.clone()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the data draw for `(m, rep)` under a base seed.
pub fn derive_seed(base: u64, m: usize, rep: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ m as u64) ^ rep as u64)
}

/// Base seed of the tuning draws, disjoint from the evaluation draws.
fn tuning_base(base: u64) -> u64 {
    splitmix64(base ^ 0x7475_6E65)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub lambda_c: f64,
    pub t_c: f64,
}

/// Constants per `(method, m)`, falling back to a default pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    pub default: MethodParams,
    pub entries: BTreeMap<(Method, usize), MethodParams>,
}

impl ParamTable {
    pub fn uniform(lambda_c: f64, t_c: f64) -> Self {
        ParamTable {
            default: MethodParams { lambda_c, t_c },
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, method: Method, m: usize) -> MethodParams {
        self.entries.get(&(method, m)).copied().unwrap_or(self.default)
    }

    pub fn set(&mut self, method: Method, m: usize, p: MethodParams) {
        self.entries.insert((method, m), p);
    }
}

/// Wall time per phase in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub summarize: f64,
    pub solve_beta: f64,
    pub solve_clime: f64,
    pub debias: f64,
    pub aggregate: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// One data draw with everything the three methods share.
pub struct Cell {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub shards: Vec<DataShard>,
    pub summaries: Vec<ShardSummary>,
    pub summarize_times: Vec<Duration>,
    pub pooled: ShardSummary,
    pub pooled_summarize_time: Duration,
    pub test_x: DenseMatrix,
    pub test_y: DenseMatrix,
}

impl Cell {
    pub fn prepare(model: &TrueModel, cfg: &ExperimentConfig, seed: u64, test_per_class: usize) -> Result<Self> {
        let cfg = ExperimentConfig { seed, ..cfg.clone() };
        let shards = generate_shards(model, &cfg)?;
        let timed: Vec<(ShardSummary, Duration)> = shards
            .par_iter()
            .map(|s| {
                let start = Instant::now();
                summarize_shard(s).map(|sum| (sum, start.elapsed()))
            })
            .collect::<Result<_>>()?;
        let (summaries, summarize_times) = timed.into_iter().unzip();
        let pooled_data = DataShard::pool(&shards)?;
        let start = Instant::now();
        let pooled = summarize_shard(&pooled_data)?;
        let pooled_summarize_time = start.elapsed();
        let (test_x, test_y) = generate_test_set(model, test_per_class, seed);
        Ok(Cell {
            cfg,
            seed,
            shards,
            summaries,
            summarize_times,
            pooled,
            pooled_summarize_time,
            test_x,
            test_y,
        })
    }

    fn test(&self) -> Option<TestSet<'_>> {
        (self.test_x.rows() + self.test_y.rows() > 0).then_some(TestSet {
            x: &self.test_x,
            y: &self.test_y,
        })
    }
}

/// Result of one method on one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub fit: Fit,
    pub report: EvalReport,
    pub lambda: f64,
    pub threshold: Option<f64>,
    pub times: PhaseTimes,
}

/// Distributed estimate for every `t_c` from one round of workers.
pub fn distributed_runs(
    model: &TrueModel,
    cell: &Cell,
    round: &DistributedRound,
    t_grid: &[f64],
) -> Result<Vec<MethodRun>> {
    let slowest = (0..round.outputs.len())
        .max_by_key(|&i| cell.summarize_times[i] + round.outputs[i].timings.total())
        .ok_or(Error::EmptyMessageSet)?;
    let w = &round.outputs[slowest].timings;
    t_grid
        .iter()
        .map(|&t_c| {
            let (est, agg_time) = round.aggregate(ThresholdRule::Plain, t_c)?;
            let fit = Fit {
                beta: est.beta_bar,
                mu_mid: est.mu_mid,
            };
            let report = evaluate(&fit.beta, &model.beta_star, &fit.mu_mid, cell.test())?;
            Ok(MethodRun {
                fit,
                report,
                lambda: lambda_for(round.lambda_c, cell.cfg.d, cell.cfg.n()),
                threshold: Some(est.threshold),
                times: PhaseTimes {
                    summarize: ms(cell.summarize_times[slowest]),
                    solve_beta: ms(w.solve_beta),
                    solve_clime: ms(w.solve_clime),
                    debias: ms(w.debias),
                    aggregate: ms(agg_time),
                },
            })
        })
        .collect()
}

/// Runs one method with one parameter pair on a prepared cell.
pub fn run_method(model: &TrueModel, cell: &Cell, method: Method, p: MethodParams) -> Result<MethodRun> {
    match method {
        Method::Distributed => {
            let round = DistributedRound::run(&cell.summaries, p.lambda_c)?;
            Ok(distributed_runs(model, cell, &round, &[p.t_c])?.remove(0))
        }
        Method::Naive => {
            let start = Instant::now();
            let fit = naive_fit(&cell.summaries, p.lambda_c)?;
            let elapsed = start.elapsed();
            let report = evaluate(&fit.beta, &model.beta_star, &fit.mu_mid, cell.test())?;
            let slowest = cell.summarize_times.iter().max().copied().unwrap_or_default();
            Ok(MethodRun {
                fit,
                report,
                lambda: lambda_for(p.lambda_c, cell.cfg.d, cell.cfg.n()),
                threshold: None,
                times: PhaseTimes {
                    summarize: ms(slowest),
                    solve_beta: ms(elapsed),
                    ..Default::default()
                },
            })
        }
        Method::Centralized => {
            let start = Instant::now();
            let fit = centralized_fit(&cell.pooled, p.lambda_c)?;
            let elapsed = start.elapsed();
            let report = evaluate(&fit.beta, &model.beta_star, &fit.mu_mid, cell.test())?;
            Ok(MethodRun {
                fit,
                report,
                lambda: lambda_for(p.lambda_c, cell.cfg.d, cell.cfg.n_total),
                threshold: None,
                times: PhaseTimes {
                    summarize: ms(cell.pooled_summarize_time),
                    solve_beta: ms(elapsed),
                    ..Default::default()
                },
            })
        }
    }
}

/// One CSV row. Field order is the output column order; timing columns
/// come last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub m: usize,
    #[serde(rename = "N")]
    pub n_total: usize,
    pub d: usize,
    pub rep: usize,
    pub err_l1: Option<f64>,
    pub err_l2: Option<f64>,
    pub err_linf: Option<f64>,
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub sign_consistent: Option<bool>,
    pub misclass_rate: Option<f64>,
    pub n: usize,
    pub r: f64,
    pub rho: f64,
    pub seed: u64,
    pub lambda_c: f64,
    pub t_c: Option<f64>,
    pub lambda: Option<f64>,
    pub threshold: Option<f64>,
    pub status: String,
    pub time_summarize_ms: Option<f64>,
    pub time_solve_beta_ms: Option<f64>,
    pub time_solve_clime_ms: Option<f64>,
    pub time_debias_ms: Option<f64>,
    pub time_aggregate_ms: Option<f64>,
}

/// Number of trailing timing columns in the CSV.
pub const TIMING_COLUMNS: usize = 5;

impl RunRecord {
    fn new(method: Method, cfg: &ExperimentConfig, rep: usize, seed: u64, p: MethodParams, run: Result<MethodRun>) -> Self {
        let mut rec = RunRecord {
            method,
            m: cfg.m,
            n_total: cfg.n_total,
            d: cfg.d,
            rep,
            err_l1: None,
            err_l2: None,
            err_linf: None,
            f1: None,
            precision: None,
            recall: None,
            sign_consistent: None,
            misclass_rate: None,
            n: cfg.n(),
            r: cfg.r,
            rho: cfg.rho,
            seed,
            lambda_c: p.lambda_c,
            t_c: method.uses_threshold().then_some(p.t_c),
            lambda: None,
            threshold: None,
            status: "ok".into(),
            time_summarize_ms: None,
            time_solve_beta_ms: None,
            time_solve_clime_ms: None,
            time_debias_ms: None,
            time_aggregate_ms: None,
        };
        match run {
            Ok(run) => {
                let e = run.report;
                rec.err_l1 = Some(e.err_l1);
                rec.err_l2 = Some(e.err_l2);
                rec.err_linf = Some(e.err_linf);
                rec.f1 = Some(e.f1);
                rec.precision = Some(e.precision);
                rec.recall = Some(e.recall);
                rec.sign_consistent = Some(e.sign_consistent);
                rec.misclass_rate = e.misclass_rate;
                rec.lambda = Some(run.lambda);
                rec.threshold = run.threshold;
                rec.time_summarize_ms = Some(run.times.summarize);
                rec.time_solve_beta_ms = Some(run.times.solve_beta);
                rec.time_solve_clime_ms = Some(run.times.solve_clime);
                rec.time_debias_ms = Some(run.times.debias);
                rec.time_aggregate_ms = Some(run.times.aggregate);
            }
            Err(e) => rec.status = format!("error: {e}"),
        }
        rec
    }
}

/// Everything a sweep needs besides the model.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub base: ExperimentConfig,
    pub m_list: Vec<usize>,
    pub mode: SweepMode,
    pub params: ParamTable,
    /// Rows per class of the held-out set used for misclassification.
    pub test_per_class: usize,
}

/// Reruns a single record's cell and method from its recorded seed.
pub fn reproduce(model: &TrueModel, plan: &SweepPlan, method: Method, m: usize, seed: u64) -> Result<MethodRun> {
    let cfg = config_for(&plan.base, m, plan.mode);
    let cell = Cell::prepare(model, &cfg, seed, plan.test_per_class)?;
    run_method(model, &cell, method, plan.params.get(method, m))
}

/// For each `m` and rep: fresh data, all three methods, one record each.
/// A failed cell is recorded with an error status and the sweep goes on.
pub fn simulate(model: &TrueModel, plan: &SweepPlan) -> Vec<RunRecord> {
    let mut out = Vec::new();
    for &m in &plan.m_list {
        let cfg = config_for(&plan.base, m, plan.mode);
        for rep in 0..plan.base.reps {
            let seed = derive_seed(plan.base.seed, m, rep);
            let cell = Cell::prepare(model, &cfg, seed, plan.test_per_class);
            for method in Method::ALL {
                let p = plan.params.get(method, m);
                let run = match &cell {
                    Ok(cell) => run_method(model, cell, method, p),
                    Err(e) => Err(Error::Numerical(format!("data preparation failed: {e}"))),
                };
                out.push(RunRecord::new(method, &cfg, rep, seed, p, run));
            }
        }
    }
    out
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    for r in records {
        writer.serialize(r)?;
    }
    writer.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// CSV text with the trailing timing columns removed from every record.
pub fn strip_timing_columns(csv_text: &str) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(csv_text.as_bytes());
    let mut writer = csv::Writer::from_writer(Vec::new());
    for record in reader.records() {
        let record = record?;
        let keep = record.len().saturating_sub(TIMING_COLUMNS);
        writer.write_record(record.iter().take(keep))?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Grids for oracle tuning on synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGrid {
    pub c_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    /// Number of independent tuning draws per `m`.
    pub draws: usize,
}

impl Default for SyntheticGrid {
    fn default() -> Self {
        SyntheticGrid {
            c_grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0],
            t_grid: (0..=32).map(|i| i as f64 * 0.25).collect(),
            draws: 5,
        }
    }
}

/// Mean ℓ2 error of every method at every grid cell on fresh tuning draws,
/// keyed by method, `[c][t]` (non-thresholded methods repeat along `t`).
pub fn synthetic_error_grid(
    model: &TrueModel,
    cfg: &ExperimentConfig,
    grid: &SyntheticGrid,
) -> Result<BTreeMap<Method, Vec<Vec<f64>>>> {
    let (nc, nt) = (grid.c_grid.len(), grid.t_grid.len());
    let mut acc: BTreeMap<Method, Vec<Vec<f64>>> = Method::ALL.into_iter().map(|m| (m, vec![vec![0.0; nt]; nc])).collect();
    for draw in 0..grid.draws {
        let seed = derive_seed(tuning_base(cfg.seed), cfg.m, draw);
        let cell = Cell::prepare(model, cfg, seed, 0)?;
        for (i, &c) in grid.c_grid.iter().enumerate() {
            let round = DistributedRound::run(&cell.summaries, c)?;
            let runs = distributed_runs(model, &cell, &round, &grid.t_grid)?;
            for (j, run) in runs.iter().enumerate() {
                acc.get_mut(&Method::Distributed).unwrap()[i][j] += run.report.err_l2;
            }
            for method in [Method::Naive, Method::Centralized] {
                let run = run_method(model, &cell, method, MethodParams { lambda_c: c, t_c: 0.0 })?;
                for v in acc.get_mut(&method).unwrap()[i].iter_mut() {
                    *v += run.report.err_l2;
                }
            }
        }
    }
    for g in acc.values_mut() {
        for row in g.iter_mut() {
            for v in row.iter_mut() {
                *v /= grid.draws as f64;
            }
        }
    }
    Ok(acc)
}

/// Picks, per method, the grid cell with the smallest mean ℓ2 error
/// (ties to the smaller C index, then the smaller t index).
pub fn tune_synthetic(model: &TrueModel, cfg: &ExperimentConfig, grid: &SyntheticGrid) -> Result<BTreeMap<Method, MethodParams>> {
    let errors = synthetic_error_grid(model, cfg, grid)?;
    Ok(errors
        .into_iter()
        .map(|(method, g)| {
            let mut best = (0, 0);
            for (i, row) in g.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if v < g[best.0][best.1] {
                        best = (i, j);
                    }
                }
            }
            let t_c = if method.uses_threshold() { grid.t_grid[best.1] } else { 0.0 };
            (
                method,
                MethodParams {
                    lambda_c: grid.c_grid[best.0],
                    t_c,
                },
            )
        })
        .collect())
}

/// Tunes every `(method, m)` of a sweep.
pub fn tune_sweep(
    model: &TrueModel,
    base: &ExperimentConfig,
    m_list: &[usize],
    mode: SweepMode,
    grid: &SyntheticGrid,
) -> Result<ParamTable> {
    let mut table = ParamTable::uniform(base.lambda_c, base.t_c);
    for &m in m_list {
        let cfg = config_for(base, m, mode);
        for (method, p) in tune_synthetic(model, &cfg, grid)? {
            table.set(method, m, p);
        }
    }
    Ok(table)
}

/// Per-machine wall time for one `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub m: usize,
    /// Slowest worker (summarize + fit + CLIME + debias) plus aggregation.
    pub time_ms: f64,
    pub max_worker_ms: f64,
    pub aggregate_ms: f64,
    /// Summarize + fit on the pooled data.
    pub centralized_ms: f64,
}

/// Times the distributed and centralized fits for each `m`.
///
/// Workers run one after another, each timed on its own, and the
/// distributed time is the slowest worker plus the master: this stands
/// in for `m` machines running in parallel on one host.
pub fn bench(model: &TrueModel, base: &ExperimentConfig, m_list: &[usize]) -> Result<Vec<BenchRow>> {
    m_list
        .iter()
        .map(|&m| {
            let cfg = config_for(base, m, SweepMode::FixedTotal);
            let shards = generate_shards(model, &cfg)?;
            let mut summaries = Vec::with_capacity(m);
            let mut summarize_times = Vec::with_capacity(m);
            for s in &shards {
                let start = Instant::now();
                summaries.push(summarize_shard(s)?);
                summarize_times.push(start.elapsed());
            }
            let round = DistributedRound::run_sequential(&summaries, cfg.lambda_c)?;
            let max_worker = round
                .outputs
                .iter()
                .zip(&summarize_times)
                .map(|(o, s)| *s + o.timings.total())
                .max()
                .unwrap_or_default();
            let (_, agg) = round.aggregate(ThresholdRule::Plain, cfg.t_c)?;

            let pooled = DataShard::pool(&shards)?;
            drop(shards);
            let start = Instant::now();
            let summary = summarize_shard(&pooled)?;
            centralized_fit(&summary, cfg.lambda_c)?;
            let centralized = start.elapsed();

            Ok(BenchRow {
                m,
                time_ms: ms(max_worker + agg),
                max_worker_ms: ms(max_worker),
                aggregate_ms: ms(agg),
                centralized_ms: ms(centralized),
            })
        })
        .collect()
}

/// Settings of the real-data protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct RealConfig {
    pub train_fraction: f64,
    pub folds: usize,
    pub reps: usize,
    pub seed: u64,
    pub c_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: f64,
    pub sd: f64,
    pub rates: Vec<f64>,
    pub tuning: Vec<TuningResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealReport {
    pub sites: usize,
    pub reps: usize,
    pub methods: Vec<MethodSummary>,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn restrict_shard(s: &DataShard, cols: &[usize]) -> Result<DataShard> {
    DataShard::new(select_columns(s.x(), cols), select_columns(s.y(), cols))
}

fn fit_method(train: &[DataShard], method: Method, t: &TuningResult) -> Result<Fit> {
    let summaries = train.iter().map(summarize_shard).collect::<Result<Vec<_>>>()?;
    match method {
        Method::Distributed => {
            let (est, _) = DistributedRound::run(&summaries, t.lambda_c)?.aggregate(ThresholdRule::MedianScaled, t.t_c)?;
            Ok(Fit {
                beta: est.beta_bar,
                mu_mid: est.mu_mid,
            })
        }
        Method::Naive => naive_fit(&summaries, t.lambda_c),
        Method::Centralized => centralized_fit(&summarize_shard(&DataShard::pool(train)?)?, t.lambda_c),
    }
}

/// Split, tune by k-fold CV, refit on all training rows and score on the
/// pooled held-out rows; repeated over `reps` random splits.
pub fn real_experiment(sites: &[SiteTable], cfg: &RealConfig) -> Result<RealReport> {
    if sites.is_empty() {
        return Err(Error::EmptyMessageSet);
    }
    let mut rates: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut tunings: BTreeMap<Method, Vec<TuningResult>> = BTreeMap::new();
    for rep in 0..cfg.reps {
        let split_seed = derive_seed(cfg.seed, sites.len(), rep);
        let mut train = Vec::with_capacity(sites.len());
        let mut test: Vec<TestSplit> = Vec::with_capacity(sites.len());
        for s in sites {
            let (tr, te) = split_train_test(s, cfg.train_fraction, split_seed)?;
            train.push(tr);
            test.push(te);
        }
        let cols = informative_columns(&train)?;
        let train = train.iter().map(|s| restrict_shard(s, &cols)).collect::<Result<Vec<_>>>()?;
        let stack = |pick: fn(&TestSplit) -> &DenseMatrix| -> Result<DenseMatrix> {
            let mut data = Vec::new();
            let mut rows = 0;
            for t in &test {
                let m = select_columns(pick(t), &cols);
                rows += m.rows();
                data.extend_from_slice(m.as_slice());
            }
            DenseMatrix::new(rows, cols.len(), data)
        };
        let test_x = stack(|t| &t.x)?;
        let test_y = stack(|t| &t.y)?;
        let cv_seed = splitmix64(split_seed);
        for method in Method::ALL {
            let t_grid: &[f64] = if method.uses_threshold() { &cfg.t_grid } else { &cfg.t_grid[..1] };
            let tuned = kfold_tune_method(&train, method, &cfg.c_grid, t_grid, cfg.folds, cv_seed)?;
            let fit = fit_method(&train, method, &tuned)?;
            let rate = misclassification_rate(&test_x, &test_y, &fit.beta, &fit.mu_mid)?;
            rates.entry(method).or_default().push(rate);
            tunings.entry(method).or_default().push(tuned);
        }
    }
    let methods = Method::ALL
        .into_iter()
        .map(|method| {
            let r = rates.remove(&method).unwrap_or_default();
            let (mean, sd) = mean_sd(&r);
            MethodSummary {
                method,
                mean,
                sd,
                rates: r,
                tuning: tunings.remove(&method).unwrap_or_default(),
            }
        })
        .collect();
    Ok(RealReport {
        sites: sites.len(),
        reps: cfg.reps,
        methods,
    })
}
