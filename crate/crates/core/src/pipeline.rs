//! The three estimators as one-call fits over per-site summaries, with the
//! `λ = C·√(log d / n)` and threshold parameterizations shared by the
//! synthetic sweeps and real-data tuning.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{aggregate, naive_average, AggregateEstimate};
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::worker::{local_sparse_lda, run_worker_from_summary, ShardSummary, WorkerOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Distributed,
    Naive,
    Centralized,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Distributed, Method::Naive, Method::Centralized];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Distributed => "distributed",
            Method::Naive => "naive",
            Method::Centralized => "centralized",
        }
    }

    /// Only the distributed estimator is thresholded.
    pub fn uses_threshold(self) -> bool {
        self == Method::Distributed
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?}")))
    }
}

/// `C·√(log d / n)`.
pub fn lambda_for(c: f64, d: usize, n: usize) -> f64 {
    c * ((d as f64).ln() / n as f64).sqrt()
}

/// How the threshold constant `t_c` becomes the threshold `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `t = t_c·√(log d / N)`.
    Plain,
    /// `t = t_c·√(log d / N)·median(|v_j| : v_j ≠ 0)` over the averaged vector.
    MedianScaled,
}

impl ThresholdRule {
    pub fn threshold(self, t_c: f64, d: usize, n_total: usize, beta_avg: &DenseVector) -> f64 {
        let base = lambda_for(t_c, d, n_total);
        match self {
            ThresholdRule::Plain => base,
            ThresholdRule::MedianScaled => base * median_abs_nonzero(beta_avg),
        }
    }
}

/// Median of `|v_j|` over nonzero entries; 0 for the zero vector.
pub fn median_abs_nonzero(v: &DenseVector) -> f64 {
    let mut a: Vec<f64> = v.iter().filter(|x| *x != 0.0).map(f64::abs).collect();
    if a.is_empty() {
        return 0.0;
    }
    a.sort_by(f64::total_cmp);
    let k = a.len();
    if k % 2 == 1 {
        a[k / 2]
    } else {
        0.5 * (a[k / 2 - 1] + a[k / 2])
    }
}

/// A fitted discriminant: direction plus the class-mean midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub beta: DenseVector,
    pub mu_mid: DenseVector,
}

/// Workers' outputs at one `C`, reusable for every threshold.
#[derive(Debug, Clone)]
pub struct DistributedRound {
    pub lambda_c: f64,
    pub n_total: usize,
    pub outputs: Vec<WorkerOutput>,
}

impl DistributedRound {
    /// Every site uses its own `n_l` in `λ_l`, and `λ′ = λ_l`.
    pub fn run(summaries: &[ShardSummary], lambda_c: f64) -> Result<Self> {
        let outputs = summaries
            .par_iter()
            .enumerate()
            .map(|(id, s)| {
                let lambda = lambda_for(lambda_c, s.dim(), s.n());
                run_worker_from_summary(s, lambda, lambda, id)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistributedRound {
            lambda_c,
            n_total: summaries.iter().map(ShardSummary::n).sum(),
            outputs,
        })
    }

    /// Like [`DistributedRound::run`], one worker at a time so each
    /// worker's wall time is measured without contention from the others.
    pub fn run_sequential(summaries: &[ShardSummary], lambda_c: f64) -> Result<Self> {
        let outputs = summaries
            .iter()
            .enumerate()
            .map(|(id, s)| {
                let lambda = lambda_for(lambda_c, s.dim(), s.n());
                run_worker_from_summary(s, lambda, lambda, id)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DistributedRound {
            lambda_c,
            n_total: summaries.iter().map(ShardSummary::n).sum(),
            outputs,
        })
    }

    /// Averages and thresholds; returns the estimate and the master's time.
    pub fn aggregate(&self, rule: ThresholdRule, t_c: f64) -> Result<(AggregateEstimate, Duration)> {
        let start = Instant::now();
        let messages: Vec<_> = self.outputs.iter().map(|o| o.message.clone()).collect();
        let first = messages.first().ok_or(Error::EmptyMessageSet)?;
        let d = first.beta_tilde.dim();
        let avg = aggregate(&messages, 0.0)?;
        let t = rule.threshold(t_c, d, self.n_total, &avg.beta_avg);
        let est = aggregate(&messages, t)?;
        Ok((est, start.elapsed()))
    }
}

/// Local estimates only (no CLIME), averaged.
pub fn naive_fit(summaries: &[ShardSummary], lambda_c: f64) -> Result<Fit> {
    let betas = summaries
        .par_iter()
        .enumerate()
        .map(|(id, s)| {
            local_sparse_lda(s, lambda_for(lambda_c, s.dim(), s.n())).map_err(|e| Error::Worker {
                worker_id: id,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Fit {
        beta: naive_average(&betas)?,
        mu_mid: mean_midpoint(summaries)?,
    })
}

/// Fit on the pooled summary with `λ = C·√(log d / N)`.
pub fn centralized_fit(pooled: &ShardSummary, lambda_c: f64) -> Result<Fit> {
    let beta = local_sparse_lda(pooled, lambda_for(lambda_c, pooled.dim(), pooled.n()))?;
    Ok(Fit {
        beta,
        mu_mid: pooled.mu1.add(&pooled.mu2)?.scale(0.5),
    })
}

fn mean_midpoint(summaries: &[ShardSummary]) -> Result<DenseVector> {
    let first = summaries.first().ok_or(Error::EmptyMessageSet)?;
    let m = summaries.len() as f64;
    let mut mu1 = vec![0.0; first.dim()];
    let mut mu2 = vec![0.0; first.dim()];
    for s in summaries {
        for (a, x) in mu1.iter_mut().zip(s.mu1.iter()) {
            *a += x;
        }
        for (a, x) in mu2.iter_mut().zip(s.mu2.iter()) {
            *a += x;
        }
    }
    let mu1 = DenseVector::from_vec_unchecked(mu1.into_iter().map(|a| a / m).collect());
    let mu2 = DenseVector::from_vec_unchecked(mu2.into_iter().map(|a| a / m).collect());
    Ok(mu1.add(&mu2)?.scale(0.5))
}
