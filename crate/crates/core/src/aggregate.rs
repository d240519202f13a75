//! Master side: average the debiased vectors and hard-threshold, plus the
//! two reference estimators (naive averaging and centralized fitting).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::worker::{local_sparse_lda, summarize_shard, DataShard, WorkerMessage};

/// `HT(v, t)_j = v_j` if `|v_j| > t`, else 0.
pub fn hard_threshold(v: &DenseVector, t: f64) -> DenseVector {
    DenseVector::from_vec_unchecked(
        v.iter()
            .map(|x| if x.abs() > t { x } else { 0.0 })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEstimate {
    pub m: usize,
    pub threshold: f64,
    pub beta_bar: DenseVector,
    pub beta_avg: DenseVector,
    pub mu_mid: DenseVector,
}

/// Sums vectors in the given order and divides by their count.
fn ordered_mean<'a>(vectors: impl Iterator<Item = &'a DenseVector>, d: usize) -> Result<DenseVector> {
    let mut acc = vec![0.0; d];
    let mut count = 0usize;
    for v in vectors {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: v.dim(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMessageSet);
    }
    let m = count as f64;
    Ok(DenseVector::from_vec_unchecked(acc.into_iter().map(|a| a / m).collect()))
}

/// Averages the debiased vectors and hard-thresholds at `t`.
///
/// Messages are summed in ascending `worker_id` order whatever order they
/// arrive in, so the result is bit-identical under permutation.
pub fn aggregate(messages: &[WorkerMessage], t: f64) -> Result<AggregateEstimate> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {t}")));
    }
    let first = messages.first().ok_or(Error::EmptyMessageSet)?;
    let d = first.beta_tilde.dim();
    let mut ordered: Vec<&WorkerMessage> = messages.iter().collect();
    ordered.sort_by_key(|m| m.worker_id);
    if let Some(w) = ordered.windows(2).find(|w| w[0].worker_id == w[1].worker_id) {
        return Err(Error::InvalidParameter(format!(
            "duplicate worker id {}",
            w[0].worker_id
        )));
    }

    let beta_avg = ordered_mean(ordered.iter().map(|m| &m.beta_tilde), d)?;
    let mu1 = ordered_mean(ordered.iter().map(|m| &m.mu1), d)?;
    let mu2 = ordered_mean(ordered.iter().map(|m| &m.mu2), d)?;
    let mu_mid = mu1.add(&mu2)?.scale(0.5);
    Ok(AggregateEstimate {
        m: messages.len(),
        threshold: t,
        beta_bar: hard_threshold(&beta_avg, t),
        beta_avg,
        mu_mid,
    })
}

/// Plain mean of the biased local estimates (no debiasing, no threshold).
pub fn naive_average(local_betas: &[DenseVector]) -> Result<DenseVector> {
    let first = local_betas.first().ok_or(Error::EmptyMessageSet)?;
    ordered_mean(local_betas.iter(), first.dim())
}

/// Estimate fitted on all shards pooled onto one machine.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedEstimate {
    pub beta: DenseVector,
    pub mu_mid: DenseVector,
}

pub fn centralized(shards: &[DataShard], lambda: f64) -> Result<CentralizedEstimate> {
    let pooled = DataShard::pool(shards)?;
    let summary = summarize_shard(&pooled)?;
    let beta = local_sparse_lda(&summary, lambda)?;
    let mu_mid = summary.mu1.add(&summary.mu2)?.scale(0.5);
    Ok(CentralizedEstimate { beta, mu_mid })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    fn msg(id: usize, beta: &[f64]) -> WorkerMessage {
        WorkerMessage {
            worker_id: id,
            beta_tilde: v(beta),
            mu1: v(&vec![id as f64; beta.len()]),
            mu2: DenseVector::zeros(beta.len()),
        }
    }

    #[test]
    fn hard_threshold_examples() {
        assert_eq!(hard_threshold(&v(&[1.2, -0.3, 0.5]), 0.5), v(&[1.2, 0.0, 0.0]));
        let x = v(&[0.0, -2.0, 1e-300]);
        assert_eq!(hard_threshold(&x, 0.0), x);
        assert_eq!(hard_threshold(&x, 2.0), DenseVector::zeros(3));
    }

    #[test]
    fn aggregate_examples() {
        let single = msg(0, &[0.3, -0.7]);
        let est = aggregate(std::slice::from_ref(&single), 0.0).unwrap();
        assert_eq!(est.beta_bar, single.beta_tilde);
        assert_eq!(est.m, 1);

        let est = aggregate(&[msg(0, &[1.0, 0.0]), msg(1, &[0.0, 1.0])], 0.6).unwrap();
        assert_eq!(est.beta_avg, v(&[0.5, 0.5]));
        assert_eq!(est.beta_bar, DenseVector::zeros(2));
        assert_eq!(est.mu_mid, v(&[0.25, 0.25]));
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[], 0.1), Err(Error::EmptyMessageSet)));
        assert!(matches!(
            aggregate(&[msg(0, &[1.0]), msg(1, &[1.0, 2.0])], 0.1),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(aggregate(&[msg(0, &[1.0]), msg(0, &[2.0])], 0.1).is_err());
    }

    #[test]
    fn naive_average_examples() {
        assert_eq!(naive_average(&[v(&[1.0, 2.0])]).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(naive_average(&[v(&[1.0, 0.0]), v(&[0.0, 1.0])]).unwrap(), v(&[0.5, 0.5]));
        assert!(matches!(naive_average(&[]), Err(Error::EmptyMessageSet)));
    }

    #[test]
    fn aggregate_serializes() {
        let est = aggregate(&[msg(0, &[1.0, 0.0])], 0.0).unwrap();
        let json = serde_json::to_value(&est).unwrap();
        assert_eq!(json["m"], 1);
        assert_eq!(json["beta_bar"], serde_json::json!([1.0, 0.0]));
    }

    fn message_set() -> impl Strategy<Value = Vec<WorkerMessage>> {
        (1usize..6, 1usize..8).prop_flat_map(|(d, m)| {
            proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, d), m).prop_map(|betas| {
                betas
                    .iter()
                    .enumerate()
                    .map(|(i, b)| msg(i, b))
                    .collect::<Vec<_>>()
            })
        })
    }

    proptest! {
        #[test]
        fn support_matches_threshold_rule(msgs in message_set(), t in 0.0f64..500.0) {
            let est = aggregate(&msgs, t).unwrap();
            for j in 0..est.beta_avg.dim() {
                let avg = est.beta_avg.get(j);
                if avg.abs() > t {
                    prop_assert_eq!(est.beta_bar.get(j), avg);
                } else {
                    prop_assert_eq!(est.beta_bar.get(j), 0.0);
                }
            }
        }

        #[test]
        fn permutation_invariant(msgs in message_set(), seed in any::<u64>(), t in 0.0f64..100.0) {
            let mut shuffled = msgs.clone();
            // deterministic Fisher-Yates driven by the seed
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                shuffled.swap(i, j);
            }
            prop_assert_eq!(aggregate(&msgs, t).unwrap(), aggregate(&shuffled, t).unwrap());
        }

        #[test]
        fn sparsity_non_increasing_in_t(msgs in message_set(), t1 in 0.0f64..100.0, dt in 0.0f64..100.0) {
            let a = aggregate(&msgs, t1).unwrap().beta_bar.count_nonzero(0.0);
            let b = aggregate(&msgs, t1 + dt).unwrap().beta_bar.count_nonzero(0.0);
            prop_assert!(b <= a);
        }

        #[test]
        fn single_message_zero_threshold_is_identity(b in proptest::collection::vec(-1e3f64..1e3, 1..10)) {
            let m = msg(7, &b);
            let est = aggregate(std::slice::from_ref(&m), 0.0).unwrap();
            prop_assert_eq!(est.beta_bar, m.beta_tilde);
        }
    }
}
