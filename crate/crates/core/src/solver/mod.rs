//! Dantzig-type ℓ1 programs: `min ‖β‖₁ s.t. ‖Aβ − b‖∞ ≤ λ`.
//!
//! The same program yields the local discriminant direction (with
//! `b = μ̂₁ − μ̂₂`) and every CLIME column (with `b = e_j`).

mod simplex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use simplex::{LpOutcome, RangeL1Simplex};

/// Relative asymmetry accepted for the design matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Feasibility slack guaranteed for an `Optimal` solution.
pub const FEASIBILITY_SLACK: f64 = 1e-7;

/// A validated ℓ1 program.
#[derive(Debug, Clone)]
pub struct DantzigProblem {
    a: DenseMatrix,
    b: DenseVector,
    lambda: f64,
}

impl DantzigProblem {
    pub fn new(a: DenseMatrix, b: DenseVector, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        a.check_symmetric(SYMMETRY_TOL)?;
        if a.cols() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.cols(),
                got: b.dim(),
            });
        }
        Ok(Self { a, b, lambda })
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseVector {
        &self.b
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DantzigSolution {
    pub beta: DenseVector,
    /// ‖β‖₁
    pub objective: f64,
    /// ‖Aβ − b‖∞
    pub residual_inf: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolverOptions {
    /// Pivot cap; `None` means `100·(2d + 1)`.
    pub max_iterations: Option<usize>,
}

impl SolverOptions {
    fn cap(&self, d: usize) -> usize {
        self.max_iterations.unwrap_or(100 * (2 * d + 1))
    }
}

fn solution_from(p: &DantzigProblem, beta: Vec<f64>, iterations: usize, status: SolveStatus) -> DantzigSolution {
    let beta = DenseVector::from_vec_unchecked(beta);
    let residual_inf = p
        .a
        .mat_vec(&beta)
        .and_then(|ab| ab.sub(&p.b))
        .map(|r| r.max_abs())
        .unwrap_or(f64::INFINITY);
    DantzigSolution {
        objective: beta.norms().l1,
        beta,
        residual_inf,
        iterations,
        status,
    }
}

/// Runs the simplex and reports the outcome in the solution's `status`
/// rather than as an error.
pub fn solve_dantzig_with(p: &DantzigProblem, opts: SolverOptions) -> Result<DantzigSolution> {
    let lp = RangeL1Simplex::new(&p.a, p.b.as_slice(), p.lambda, opts.cap(p.dim()));
    Ok(match lp.solve()? {
        LpOutcome::Optimal { beta, iterations } => {
            solution_from(p, beta, iterations, SolveStatus::Optimal)
        }
        LpOutcome::IterationLimit { beta, iterations } => {
            solution_from(p, beta, iterations, SolveStatus::IterationLimit)
        }
        LpOutcome::Infeasible { iterations, .. } => solution_from(
            p,
            vec![0.0; p.dim()],
            iterations,
            SolveStatus::Infeasible,
        ),
    })
}

/// Solves the program with default options; non-optimal outcomes are errors.
pub fn solve_dantzig(p: &DantzigProblem) -> Result<DantzigSolution> {
    let lp = RangeL1Simplex::new(&p.a, p.b.as_slice(), p.lambda, SolverOptions::default().cap(p.dim()));
    match lp.solve()? {
        LpOutcome::Optimal { beta, iterations } => {
            Ok(solution_from(p, beta, iterations, SolveStatus::Optimal))
        }
        LpOutcome::Infeasible { residual, .. } => Err(Error::Infeasible { residual }),
        LpOutcome::IterationLimit { iterations, .. } => Err(Error::IterationLimit { iterations }),
    }
}

/// One CLIME column: `argmin ‖θ‖₁ s.t. ‖Σθ − e_j‖∞ ≤ λ′`.
pub fn solve_clime_column(sigma: &DenseMatrix, j: usize, lambda_prime: f64) -> Result<DenseVector> {
    let d = sigma.cols();
    if j >= d {
        return Err(Error::InvalidParameter(format!(
            "column index {j} out of range for dimension {d}"
        )));
    }
    let p = DantzigProblem::new(sigma.clone(), DenseVector::unit(d, j), lambda_prime)?;
    solve_dantzig(&p).map(|s| s.beta)
}

/// CLIME precision estimate; column `j` of the result is `θ̂_j`.
///
/// Columns are solved in parallel on the ambient rayon pool. Each column is
/// an independent pure computation, so the result does not depend on the
/// pool size.
pub fn solve_clime(sigma: &DenseMatrix, lambda_prime: f64) -> Result<DenseMatrix> {
    sigma.check_symmetric(SYMMETRY_TOL)?;
    if !lambda_prime.is_finite() || lambda_prime < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda' must be finite and non-negative, got {lambda_prime}"
        )));
    }
    let d = sigma.cols();
    let columns: Vec<Result<DenseVector>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let target = DenseVector::unit(d, j);
            let lp = RangeL1Simplex::new(sigma, target.as_slice(), lambda_prime, SolverOptions::default().cap(d));
            match lp.solve() {
                Ok(LpOutcome::Optimal { beta, .. }) => Ok(DenseVector::from_vec_unchecked(beta)),
                Ok(LpOutcome::Infeasible { residual, .. }) => Err(Error::Infeasible { residual }),
                Ok(LpOutcome::IterationLimit { iterations, .. }) => {
                    Err(Error::IterationLimit { iterations })
                }
                Err(e) => Err(e),
            }
            .map_err(|e| Error::ClimeColumn {
                column: j,
                source: Box::new(e),
            })
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    DenseMatrix::from_columns(&columns)
}
