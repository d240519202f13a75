//! Worker side of the one-round protocol: shard statistics, local sparse
//! discriminant direction, CLIME precision estimate and debiasing.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::solver::{solve_clime, solve_dantzig, DantzigProblem};

/// One machine's samples, split by class.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    x: DenseMatrix,
    y: DenseMatrix,
}

impl DataShard {
    /// `x` holds class-1 rows and `y` class-2 rows.
    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(Error::DimensionMismatch {
                expected: x.cols(),
                got: y.cols(),
            });
        }
        if x.rows() < 2 || y.rows() < 2 {
            return Err(Error::DegenerateShard {
                n1: x.rows(),
                n2: y.rows(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn n1(&self) -> usize {
        self.x.rows()
    }

    pub fn n2(&self) -> usize {
        self.y.rows()
    }

    pub fn n(&self) -> usize {
        self.n1() + self.n2()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Stacks several shards into one (the centralized view of the data).
    pub fn pool(shards: &[DataShard]) -> Result<DataShard> {
        let first = shards.first().ok_or(Error::EmptyMessageSet)?;
        let d = first.dim();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in shards {
            if s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.dim(),
                });
            }
            xs.extend_from_slice(s.x.as_slice());
            ys.extend_from_slice(s.y.as_slice());
        }
        let n1 = xs.len() / d.max(1);
        let n2 = ys.len() / d.max(1);
        Ok(DataShard {
            x: DenseMatrix::from_vec_unchecked(n1, d, xs),
            y: DenseMatrix::from_vec_unchecked(n2, d, ys),
        })
    }
}

/// Per-shard sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSummary {
    pub mu1: DenseVector,
    pub mu2: DenseVector,
    /// `mu1 − mu2`
    pub mud: DenseVector,
    /// Pooled within-class covariance with divisor `n1 + n2`.
    pub sigma: DenseMatrix,
    pub n1: usize,
    pub n2: usize,
}

impl ShardSummary {
    pub fn n(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn dim(&self) -> usize {
        self.mud.dim()
    }
}

/// What a worker sends to the master: three `d`-vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMessage {
    pub worker_id: usize,
    pub beta_tilde: DenseVector,
    pub mu1: DenseVector,
    pub mu2: DenseVector,
}

fn column_means(m: &DenseMatrix) -> Vec<f64> {
    let mut mean = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (acc, v) in mean.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    let n = m.rows() as f64;
    mean.iter_mut().for_each(|v| *v /= n);
    mean
}

/// Adds the centered scatter of `m` about `mean` into the upper triangle of `acc`.
fn accumulate_scatter(acc: &mut [f64], m: &DenseMatrix, mean: &[f64]) {
    let d = mean.len();
    let mut centered = vec![0.0; d];
    for i in 0..m.rows() {
        for ((c, v), mu) in centered.iter_mut().zip(m.row(i)).zip(mean) {
            *c = v - mu;
        }
        for j in 0..d {
            let cj = centered[j];
            if cj == 0.0 {
                continue;
            }
            let dst = &mut acc[j * d + j..(j + 1) * d];
            for (a, ck) in dst.iter_mut().zip(&centered[j..]) {
                *a += cj * ck;
            }
        }
    }
}

/// Class means and pooled within-class covariance of a shard.
pub fn summarize_shard(shard: &DataShard) -> Result<ShardSummary> {
    let (n1, n2) = (shard.n1(), shard.n2());
    if n1 < 2 || n2 < 2 {
        return Err(Error::DegenerateShard { n1, n2 });
    }
    let d = shard.dim();
    let mu1 = column_means(&shard.x);
    let mu2 = column_means(&shard.y);
    let mut scatter = vec![0.0; d * d];
    accumulate_scatter(&mut scatter, &shard.x, &mu1);
    accumulate_scatter(&mut scatter, &shard.y, &mu2);
    let n = (n1 + n2) as f64;
    for j in 0..d {
        for k in j..d {
            let v = scatter[j * d + k] / n;
            scatter[j * d + k] = v;
            scatter[k * d + j] = v;
        }
    }
    let mud = mu1.iter().zip(&mu2).map(|(a, b)| a - b).collect();
    Ok(ShardSummary {
        mu1: DenseVector::from_vec_unchecked(mu1),
        mu2: DenseVector::from_vec_unchecked(mu2),
        mud: DenseVector::from_vec_unchecked(mud),
        sigma: DenseMatrix::from_vec_unchecked(d, d, scatter),
        n1,
        n2,
    })
}

/// Local Dantzig-type estimate `argmin ‖β‖₁ s.t. ‖Σ̂β − μ̂_d‖∞ ≤ λ`.
pub fn local_sparse_lda(summary: &ShardSummary, lambda: f64) -> Result<DenseVector> {
    let p = DantzigProblem::new(summary.sigma.clone(), summary.mud.clone(), lambda)?;
    Ok(solve_dantzig(&p)?.beta)
}

/// `β̃ = β̂ − Θ̂ᵀ(Σ̂β̂ − μ̂_d)`.
pub fn debias(summary: &ShardSummary, beta_hat: &DenseVector, theta_hat: &DenseMatrix) -> Result<DenseVector> {
    let residual = summary.sigma.mat_vec(beta_hat)?.sub(&summary.mud)?;
    let correction = theta_hat.transpose_mat_vec(&residual)?;
    if correction.dim() != beta_hat.dim() {
        return Err(Error::DimensionMismatch {
            expected: beta_hat.dim(),
            got: correction.dim(),
        });
    }
    beta_hat.sub(&correction)
}

/// Wall time spent in each worker phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WorkerTimings {
    pub summarize: Duration,
    pub solve_beta: Duration,
    pub solve_clime: Duration,
    pub debias: Duration,
}

impl WorkerTimings {
    pub fn total(&self) -> Duration {
        self.summarize + self.solve_beta + self.solve_clime + self.debias
    }
}

/// Everything a worker computes, including the biased local estimate the
/// naive-averaging baseline needs.
#[derive(Debug, Clone)]
pub struct WorkerOutput {
    pub message: WorkerMessage,
    pub beta_hat: DenseVector,
    pub timings: WorkerTimings,
}

/// Full worker pipeline with per-phase timings.
pub fn run_worker_detailed(
    shard: &DataShard,
    lambda: f64,
    lambda_prime: f64,
    worker_id: usize,
) -> Result<WorkerOutput> {
    let start = Instant::now();
    let summary = summarize_shard(shard).map_err(|e| Error::Worker {
        worker_id,
        source: Box::new(e),
    })?;
    let summarize = start.elapsed();
    let mut out = run_worker_from_summary(&summary, lambda, lambda_prime, worker_id)?;
    out.timings.summarize = summarize;
    Ok(out)
}

/// Worker pipeline starting from an already computed summary, so the
/// summary can be reused across tuning constants. `timings.summarize` is 0.
pub fn run_worker_from_summary(
    summary: &ShardSummary,
    lambda: f64,
    lambda_prime: f64,
    worker_id: usize,
) -> Result<WorkerOutput> {
    let annotate = |e: Error| Error::Worker {
        worker_id,
        source: Box::new(e),
    };
    let mut timings = WorkerTimings::default();

    let start = Instant::now();
    let beta_hat = local_sparse_lda(summary, lambda).map_err(annotate)?;
    timings.solve_beta = start.elapsed();

    let start = Instant::now();
    let theta_hat = solve_clime(&summary.sigma, lambda_prime).map_err(annotate)?;
    timings.solve_clime = start.elapsed();

    let start = Instant::now();
    let beta_tilde = debias(summary, &beta_hat, &theta_hat).map_err(annotate)?;
    timings.debias = start.elapsed();

    Ok(WorkerOutput {
        message: WorkerMessage {
            worker_id,
            beta_tilde,
            mu1: summary.mu1.clone(),
            mu2: summary.mu2.clone(),
        },
        beta_hat,
        timings,
    })
}

/// Shard → message: summarize, fit, CLIME, debias.
pub fn run_worker(shard: &DataShard, lambda: f64, lambda_prime: f64, worker_id: usize) -> Result<WorkerMessage> {
    run_worker_detailed(shard, lambda, lambda_prime, worker_id).map(|o| o.message)
}
