//! Estimation error, support recovery and classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector, Norms};

/// Magnitude at or below which a coefficient counts as zero.
pub const ZERO_TOL: f64 = 1e-10;

fn check_dims(a: &DenseVector, b: &DenseVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            got: a.dim(),
        });
    }
    Ok(())
}

/// Norms of `beta_hat − beta_star`.
pub fn error_norms(beta_hat: &DenseVector, beta_star: &DenseVector) -> Result<Norms> {
    check_dims(beta_hat, beta_star)?;
    Ok(beta_hat.sub(beta_star)?.norms())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportScores {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Support-recovery F1. An empty estimated support scores zero precision
/// (so F1 = 0) unless the true support is empty too, which scores 1.
pub fn f1_support(beta_hat: &DenseVector, beta_star: &DenseVector, tol: f64) -> Result<SupportScores> {
    check_dims(beta_hat, beta_star)?;
    let mut est = 0usize;
    let mut truth = 0usize;
    let mut both = 0usize;
    for (h, s) in beta_hat.iter().zip(beta_star.iter()) {
        let in_est = h.abs() > tol;
        let in_true = s.abs() > tol;
        est += in_est as usize;
        truth += in_true as usize;
        both += (in_est && in_true) as usize;
    }
    if est == 0 && truth == 0 {
        return Ok(SupportScores {
            f1: 1.0,
            precision: 1.0,
            recall: 1.0,
        });
    }
    let precision = if est == 0 { 0.0 } else { both as f64 / est as f64 };
    let recall = if truth == 0 { 0.0 } else { both as f64 / truth as f64 };
    let f1 = if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(SupportScores {
        f1,
        precision,
        recall,
    })
}

fn sign_of(x: f64) -> i8 {
    if x.abs() <= ZERO_TOL {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// True iff every coordinate has the same sign (with a zero band of
/// [`ZERO_TOL`]).
pub fn sign_consistent(beta_hat: &DenseVector, beta_star: &DenseVector) -> Result<bool> {
    check_dims(beta_hat, beta_star)?;
    Ok(beta_hat
        .iter()
        .zip(beta_star.iter())
        .all(|(h, s)| sign_of(h) == sign_of(s)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    One,
    Two,
}

fn score(z: &[f64], beta: &DenseVector, mu_mid: &DenseVector) -> f64 {
    z.iter()
        .zip(mu_mid.iter())
        .zip(beta.iter())
        .map(|((z, m), b)| (z - m) * b)
        .sum()
}

/// Plug-in Fisher rule: class 1 iff `(z − μ)ᵀβ > 0`.
pub fn classify(z: &DenseVector, beta: &DenseVector, mu_mid: &DenseVector) -> Result<Class> {
    check_dims(z, beta)?;
    check_dims(mu_mid, beta)?;
    Ok(if score(z.as_slice(), beta, mu_mid) > 0.0 {
        Class::One
    } else {
        Class::Two
    })
}

/// Fraction of misclassified rows; `test_x` rows are class 1, `test_y` rows class 2.
pub fn misclassification_rate(
    test_x: &DenseMatrix,
    test_y: &DenseMatrix,
    beta: &DenseVector,
    mu_mid: &DenseVector,
) -> Result<f64> {
    let total = test_x.rows() + test_y.rows();
    if total == 0 {
        return Err(Error::EmptyTestSet);
    }
    check_dims(mu_mid, beta)?;
    for m in [test_x, test_y] {
        if m.rows() > 0 && m.cols() != beta.dim() {
            return Err(Error::DimensionMismatch {
                expected: beta.dim(),
                got: m.cols(),
            });
        }
    }
    let wrong_x = (0..test_x.rows())
        .filter(|&i| score(test_x.row(i), beta, mu_mid) <= 0.0)
        .count();
    let wrong_y = (0..test_y.rows())
        .filter(|&i| score(test_y.row(i), beta, mu_mid) > 0.0)
        .count();
    Ok((wrong_x + wrong_y) as f64 / total as f64)
}

/// All metrics for one estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub err_l1: f64,
    pub err_l2: f64,
    pub err_linf: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub sign_consistent: bool,
    pub misclass_rate: Option<f64>,
}

/// Held-out data for the misclassification column.
#[derive(Debug, Clone, Copy)]
pub struct TestSet<'a> {
    pub x: &'a DenseMatrix,
    pub y: &'a DenseMatrix,
}

pub fn evaluate(
    beta_hat: &DenseVector,
    beta_star: &DenseVector,
    mu_mid: &DenseVector,
    test: Option<TestSet<'_>>,
) -> Result<EvalReport> {
    let err = error_norms(beta_hat, beta_star)?;
    let support = f1_support(beta_hat, beta_star, ZERO_TOL)?;
    let misclass_rate = test
        .map(|t| misclassification_rate(t.x, t.y, beta_hat, mu_mid))
        .transpose()?;
    Ok(EvalReport {
        err_l1: err.l1,
        err_l2: err.l2,
        err_linf: err.linf,
        f1: support.f1,
        precision: support.precision,
        recall: support.recall,
        sign_consistent: sign_consistent(beta_hat, beta_star)?,
        misclass_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn error_norm_examples() {
        let b = v(&[1.0, -2.0, 0.5]);
        let e = error_norms(&b, &b).unwrap();
        assert_eq!((e.l1, e.l2, e.linf), (0.0, 0.0, 0.0));
        let e = error_norms(&v(&[3.0, -4.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!((e.l1, e.l2, e.linf), (7.0, 5.0, 4.0));
        let e2 = error_norms(&v(&[6.0, -8.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!((e2.l1, e2.l2, e2.linf), (14.0, 10.0, 8.0));
        assert!(error_norms(&v(&[1.0]), &b).is_err());
    }

    #[test]
    fn f1_examples() {
        let truth = v(&[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(f1_support(&truth.scale(3.0), &truth, ZERO_TOL).unwrap().f1, 1.0);

        let est = v(&[0.0, 2.0, 0.0, 0.0]);
        let est_b = v(&[1.0, 1.0, 0.0, 0.0]);
        let truth_b = v(&[0.0, 1.0, 1.0, 0.0]);
        let s = f1_support(&est_b, &truth_b, ZERO_TOL).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.5, 0.5, 0.5));

        let s = f1_support(&DenseVector::zeros(4), &truth, ZERO_TOL).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = f1_support(&DenseVector::zeros(4), &DenseVector::zeros(4), ZERO_TOL).unwrap();
        assert_eq!(s.f1, 1.0);

        let s = f1_support(&est, &truth, ZERO_TOL).unwrap();
        assert_eq!((s.precision, s.recall), (1.0, 0.5));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sign_examples() {
        let b = v(&[1.0, -0.5, 0.0]);
        assert!(sign_consistent(&b.scale(2.0), &b).unwrap());
        assert!(!sign_consistent(&v(&[1.0, 0.5, 0.0]), &b).unwrap());
        assert!(sign_consistent(&DenseVector::zeros(3), &DenseVector::zeros(3)).unwrap());
        assert!(sign_consistent(&v(&[1.0, -0.5, 1e-11]), &b).unwrap());
    }

    #[test]
    fn classify_examples() {
        let mu = v(&[0.5, -1.0]);
        let beta = v(&[1.0, 2.0]);
        assert_eq!(classify(&mu, &beta, &mu).unwrap(), Class::Two);
        assert_eq!(classify(&v(&[3.0]), &v(&[-1.0]), &v(&[0.0])).unwrap(), Class::Two);

        let model = crate::datagen::paper_model(30).unwrap();
        let mid = model.mu1.add(&model.mu2).unwrap().scale(0.5);
        assert_eq!(classify(&model.mu1, &model.beta_star, &mid).unwrap(), Class::One);
        assert_eq!(classify(&model.mu2, &model.beta_star, &mid).unwrap(), Class::Two);
    }

    #[test]
    fn misclassification_examples() {
        let x = DenseMatrix::from_rows(&[vec![1.0], vec![2.0], vec![-1.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![-2.0], vec![0.5]]).unwrap();
        let mu = v(&[0.0]);
        assert!((misclassification_rate(&x, &y, &v(&[1.0]), &mu).unwrap() - 0.4).abs() < 1e-15);
        assert!((misclassification_rate(&x, &y, &v(&[-1.0]), &mu).unwrap() - 0.6).abs() < 1e-15);
        // beta = 0 sends everything to class 2
        assert!((misclassification_rate(&x, &y, &v(&[0.0]), &mu).unwrap() - 0.6).abs() < 1e-15);
        let empty = DenseMatrix::zeros(0, 1);
        assert!(matches!(
            misclassification_rate(&empty, &empty, &v(&[1.0]), &mu),
            Err(Error::EmptyTestSet)
        ));
    }

    #[test]
    fn well_separated_model_is_nearly_error_free() {
        use crate::datagen::{generate_test_set, TrueModel};
        let d = 10;
        let mu1 = DenseVector::new(vec![10.0 / (d as f64).sqrt(); d]).unwrap();
        let model = TrueModel::new(DenseMatrix::identity(d), mu1, DenseVector::zeros(d)).unwrap();
        let (x, y) = generate_test_set(&model, 2000, 11);
        let mid = model.mu1.add(&model.mu2).unwrap().scale(0.5);
        let rate = misclassification_rate(&x, &y, &model.beta_star, &mid).unwrap();
        assert!(rate < 0.05, "rate {rate}");
        let flipped = misclassification_rate(&x, &y, &model.beta_star.scale(-1.0), &mid).unwrap();
        assert!((flipped - (1.0 - rate)).abs() < 1e-12);
    }

    #[test]
    fn report_json_fields() {
        let r = evaluate(&v(&[1.0, 0.0]), &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), None).unwrap();
        assert_eq!(r.f1, 1.0);
        assert!(r.sign_consistent);
        assert_eq!(r.misclass_rate, None);
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..20).prop_flat_map(|d| {
            let entry = prop_oneof![Just(0.0), -5.0f64..5.0];
            (
                proptest::collection::vec(entry.clone(), d),
                proptest::collection::vec(entry, d),
            )
        })
    }

    proptest! {
        #[test]
        fn f1_in_unit_interval((a, b) in pair()) {
            let (a, b) = (v(&a), v(&b));
            let s = f1_support(&a, &b, ZERO_TOL).unwrap();
            prop_assert!((0.0..=1.0).contains(&s.f1));
            let same_support = a.iter().zip(b.iter()).all(|(x, y)| (x.abs() > ZERO_TOL) == (y.abs() > ZERO_TOL));
            prop_assert_eq!(s.f1 == 1.0, same_support);
        }

        #[test]
        fn classify_scale_invariant((z, beta) in pair(), c in 1e-3f64..1e3) {
            let (z, beta) = (v(&z), v(&beta));
            let mu = DenseVector::zeros(z.dim());
            prop_assert_eq!(
                classify(&z, &beta.scale(c), &mu).unwrap(),
                classify(&z, &beta, &mu).unwrap()
            );
        }

        #[test]
        fn error_norm_ordering((a, b) in pair()) {
            let e = error_norms(&v(&a), &v(&b)).unwrap();
            prop_assert!(e.linf <= e.l2 * (1.0 + 1e-12));
            prop_assert!(e.l2 <= e.l1 * (1.0 + 1e-12));
        }
    }
}
