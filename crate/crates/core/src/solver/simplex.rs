//! Dense two-phase simplex for the range-constrained ℓ1 program
//!
//! ```text
//!     minimize   Σ_k (u_k + v_k)
//!     subject to −λ ≤ A(u − v) − b ≤ λ,   u, v ≥ 0.
//! ```
//!
//! Each range row is carried as one equality `A(u − v) − r = b` with a
//! bounded residual variable `r_i ∈ [−λ, λ]`, so the tableau has one row per
//! constraint instead of two. The tableau stores only the `u` and `r`
//! columns: the `v` column is always the negated `u` column and an artificial
//! column is a signed copy of its row's `r` column.
//!
//! Variables are ordered `u_0..u_d, v_0..v_d, r_0..r_p, a_0..a_p`. Entering
//! variables are priced by largest reduced cost; after a run of degenerate
//! pivots pricing switches to Bland's lowest-index rule until the objective
//! moves again, which rules out cycling. The leaving variable is always the
//! lowest-index one among tied ratios.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Pivot elements and reduced costs at or below this magnitude are zero.
pub(crate) const ZERO_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;
const FEASIBILITY_TOL: f64 = 1e-9;
/// Degenerate pivots in a row before pricing falls back to Bland's rule.
const DEGENERATE_SWITCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// An artificial that left the basis during phase one.
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

/// Outcome of a range-constrained ℓ1 solve.
#[derive(Debug, Clone)]
pub(crate) enum LpOutcome {
    Optimal { beta: Vec<f64>, iterations: usize },
    Infeasible { residual: f64, iterations: usize },
    IterationLimit { beta: Vec<f64>, iterations: usize },
}

enum Step {
    Optimal,
    Continue,
}

pub(crate) struct RangeL1Simplex<'a> {
    b: &'a [f64],
    lambda: f64,
    /// structural columns (d)
    n: usize,
    /// constraint rows (p)
    p: usize,
    /// stored tableau width, n + p
    width: usize,
    tab: Vec<f64>,
    /// `c_Bᵀ T` for every stored column
    z: Vec<f64>,
    basis: Vec<usize>,
    xb: Vec<f64>,
    state: Vec<VarState>,
    /// sign of each row's artificial column
    art_sign: Vec<f64>,
    phase: Phase,
    iterations: usize,
    max_iterations: usize,
    col: Vec<f64>,
    /// consecutive pivots that did not move the objective
    degenerate_run: usize,
    bland: bool,
}

impl<'a> RangeL1Simplex<'a> {
    pub(crate) fn new(a: &DenseMatrix, b: &'a [f64], lambda: f64, max_iterations: usize) -> Self {
        let n = a.cols();
        let p = a.rows();
        let width = n + p;
        let nvars = 2 * n + 2 * p;
        let mut tab = vec![0.0; p * width];
        let mut basis = vec![0; p];
        let mut xb = vec![0.0; p];
        let mut state = vec![VarState::AtLower; nvars];
        let mut art_sign = vec![1.0; p];

        for i in 0..p {
            let bi = b[i];
            // Row scale s_i = (B⁻¹)_ii for the initial diagonal basis.
            let s = if bi.abs() <= lambda {
                basis[i] = 2 * n + i;
                state[2 * n + i] = VarState::Basic;
                xb[i] = -bi;
                state[2 * n + p + i] = VarState::Dropped;
                -1.0
            } else {
                let sigma = bi.signum();
                art_sign[i] = sigma;
                state[2 * n + i] = if bi > 0.0 {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
                basis[i] = 2 * n + p + i;
                state[2 * n + p + i] = VarState::Basic;
                xb[i] = bi.abs() - lambda;
                sigma
            };
            let row = &mut tab[i * width..(i + 1) * width];
            for (t, &aik) in row[..n].iter_mut().zip(a.row(i)) {
                *t = s * aik;
            }
            row[n + i] = -s;
        }

        let mut lp = Self {
            b,
            lambda,
            n,
            p,
            width,
            tab,
            z: vec![0.0; width],
            basis,
            xb,
            state,
            art_sign,
            phase: Phase::One,
            iterations: 0,
            max_iterations,
            col: vec![0.0; p],
            degenerate_run: 0,
            bland: false,
        };
        lp.recompute_z();
        lp
    }

    pub(crate) fn solve(mut self) -> Result<LpOutcome> {
        if self.has_basic_artificial() {
            self.phase = Phase::One;
            self.recompute_z();
            if let Some(limit) = self.run_phase()? {
                return Ok(limit);
            }
            self.refresh_basic_values();
            let residual: f64 = (0..self.p)
                .filter(|&i| self.is_artificial(self.basis[i]))
                .map(|i| self.xb[i].max(0.0))
                .sum();
            let scale = 1.0 + self.b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if residual > FEASIBILITY_TOL * scale {
                return Ok(LpOutcome::Infeasible {
                    residual,
                    iterations: self.iterations,
                });
            }
        }
        self.phase = Phase::Two;
        self.recompute_z();
        if let Some(limit) = self.run_phase()? {
            return Ok(limit);
        }
        self.refresh_basic_values();
        Ok(LpOutcome::Optimal {
            beta: self.beta(),
            iterations: self.iterations,
        })
    }

    fn run_phase(&mut self) -> Result<Option<LpOutcome>> {
        loop {
            if self.iterations >= self.max_iterations {
                self.refresh_basic_values();
                return Ok(Some(LpOutcome::IterationLimit {
                    beta: self.beta(),
                    iterations: self.iterations,
                }));
            }
            match self.iterate()? {
                Step::Optimal => return Ok(None),
                Step::Continue => self.iterations += 1,
            }
        }
    }

    fn is_artificial(&self, var: usize) -> bool {
        var >= 2 * self.n + self.p
    }

    fn has_basic_artificial(&self) -> bool {
        self.basis.iter().any(|&v| self.is_artificial(v))
    }

    /// Stored tableau column and sign for a variable.
    fn column_of(&self, var: usize) -> (usize, f64) {
        let (n, p) = (self.n, self.p);
        if var < n {
            (var, 1.0)
        } else if var < 2 * n {
            (var - n, -1.0)
        } else if var < 2 * n + p {
            (n + var - 2 * n, 1.0)
        } else {
            let i = var - 2 * n - p;
            (n + i, -self.art_sign[i])
        }
    }

    fn cost(&self, var: usize) -> f64 {
        match self.phase {
            Phase::One => {
                if self.is_artificial(var) {
                    1.0
                } else {
                    0.0
                }
            }
            Phase::Two => {
                if var < 2 * self.n {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn bounds(&self, var: usize) -> (f64, f64) {
        if var < 2 * self.n {
            (0.0, f64::INFINITY)
        } else if var < 2 * self.n + self.p {
            (-self.lambda, self.lambda)
        } else {
            match self.phase {
                Phase::One => (0.0, f64::INFINITY),
                Phase::Two => (0.0, 0.0),
            }
        }
    }

    fn nonbasic_value(&self, var: usize) -> f64 {
        let (lo, hi) = self.bounds(var);
        match self.state[var] {
            VarState::AtUpper => hi,
            VarState::AtLower => lo,
            _ => 0.0,
        }
    }

    fn reduced_cost(&self, var: usize) -> f64 {
        let (c, sign) = self.column_of(var);
        self.cost(var) - sign * self.z[c]
    }

    fn recompute_z(&mut self) {
        self.z.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.p {
            let c = self.cost(self.basis[i]);
            if c != 0.0 {
                let row = &self.tab[i * self.width..(i + 1) * self.width];
                for (z, t) in self.z.iter_mut().zip(row) {
                    *z += c * t;
                }
            }
        }
    }

    /// Recomputes `x_B = B⁻¹(b − N x_N)` from the explicit inverse held in
    /// the `r` columns (`B⁻¹ = −T_r`).
    fn refresh_basic_values(&mut self) {
        let (n, p) = (self.n, self.p);
        let rhs: Vec<f64> = (0..p)
            .map(|i| {
                let r = 2 * n + i;
                match self.state[r] {
                    VarState::AtLower | VarState::AtUpper => self.b[i] + self.nonbasic_value(r),
                    _ => self.b[i],
                }
            })
            .collect();
        for i in 0..p {
            let row = &self.tab[i * self.width + n..(i + 1) * self.width];
            self.xb[i] = -row.iter().zip(&rhs).map(|(t, r)| t * r).sum::<f64>();
        }
    }

    /// Pricing. Largest reduced-cost violation by default; lowest index
    /// (Bland) while the solve is stalled on degenerate pivots.
    fn choose_entering(&self) -> Option<(usize, f64)> {
        let fixed_residual = self.lambda == 0.0;
        let mut best: Option<(usize, f64, f64)> = None;
        for var in 0..(2 * self.n + self.p) {
            let st = self.state[var];
            if st == VarState::Basic {
                continue;
            }
            if fixed_residual && var >= 2 * self.n {
                continue;
            }
            let dj = self.reduced_cost(var);
            let (dir, gain) = match st {
                VarState::AtLower if dj < -ZERO_TOL => (1.0, -dj),
                VarState::AtUpper if dj > ZERO_TOL => (-1.0, dj),
                _ => continue,
            };
            if self.bland {
                return Some((var, dir));
            }
            if best.map_or(true, |(_, _, g)| gain > g) {
                best = Some((var, dir, gain));
            }
        }
        best.map(|(var, dir, _)| (var, dir))
    }

    fn iterate(&mut self) -> Result<Step> {
        let Some((q, dir)) = self.choose_entering() else {
            return Ok(Step::Optimal);
        };
        let (qc, qsign) = self.column_of(q);
        for i in 0..self.p {
            self.col[i] = qsign * self.tab[i * self.width + qc];
        }

        // Ratio test; ties go to the lowest variable index (Bland).
        let mut best: Option<(f64, usize, bool)> = None; // (step, row, hits_upper)
        for i in 0..self.p {
            let alpha = dir * self.col[i];
            if alpha.abs() <= ZERO_TOL {
                continue;
            }
            let var = self.basis[i];
            let (lo, hi) = self.bounds(var);
            let (limit, hits_upper) = if alpha > 0.0 {
                ((self.xb[i] - lo) / alpha, false)
            } else if hi.is_finite() {
                ((hi - self.xb[i]) / -alpha, true)
            } else {
                continue;
            };
            let limit = limit.max(0.0);
            let better = match best {
                None => true,
                Some((step, row, _)) => {
                    limit < step - TIE_TOL
                        || (limit <= step + TIE_TOL && var < self.basis[row])
                }
            };
            if better {
                best = Some((limit, i, hits_upper));
            }
        }

        let (lo_q, hi_q) = self.bounds(q);
        let flip = hi_q - lo_q;
        let pivot_row = match best {
            Some((s, _, _)) if flip.is_finite() && flip <= s => None,
            Some((s, row, hits_upper)) => Some((s, row, hits_upper)),
            None if flip.is_finite() => None,
            None => {
                return Err(Error::Numerical(format!(
                    "unbounded direction for variable {q}"
                )))
            }
        };
        let step = pivot_row.map_or(flip, |(s, _, _)| s);
        if step > TIE_TOL {
            self.degenerate_run = 0;
            self.bland = false;
        } else {
            self.degenerate_run += 1;
            if self.degenerate_run >= DEGENERATE_SWITCH {
                self.bland = true;
            }
        }
        let entering_value = self.nonbasic_value(q) + dir * step;
        if step != 0.0 {
            for i in 0..self.p {
                self.xb[i] -= dir * step * self.col[i];
            }
        }

        let Some((_, r, hits_upper)) = pivot_row else {
            // Bound flip: the entering residual crosses its whole range.
            self.state[q] = if dir > 0.0 {
                VarState::AtUpper
            } else {
                VarState::AtLower
            };
            return Ok(Step::Continue);
        };

        let dq = self.cost(q) - qsign * self.z[qc];
        let leaving = self.basis[r];
        self.state[leaving] = if self.is_artificial(leaving) && self.phase == Phase::One {
            VarState::Dropped
        } else if hits_upper {
            VarState::AtUpper
        } else {
            VarState::AtLower
        };
        self.state[q] = VarState::Basic;
        self.basis[r] = q;
        self.xb[r] = entering_value;
        self.pivot(r, dq);
        Ok(Step::Continue)
    }

    /// Gauss–Jordan elimination on row `r` with the entering column in `self.col`.
    fn pivot(&mut self, r: usize, dq: f64) {
        let w = self.width;
        let piv = self.col[r];
        let inv = 1.0 / piv;
        let (before, rest) = self.tab.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        prow.iter_mut().for_each(|v| *v *= inv);
        for (i, row) in before.chunks_exact_mut(w).enumerate() {
            let f = self.col[i];
            if f != 0.0 {
                for (t, pv) in row.iter_mut().zip(prow.iter()) {
                    *t -= f * pv;
                }
            }
        }
        for (k, row) in after.chunks_exact_mut(w).enumerate() {
            let f = self.col[r + 1 + k];
            if f != 0.0 {
                for (t, pv) in row.iter_mut().zip(prow.iter()) {
                    *t -= f * pv;
                }
            }
        }
        if dq != 0.0 {
            for (z, pv) in self.z.iter_mut().zip(prow.iter()) {
                *z += dq * pv;
            }
        }
    }

    fn beta(&self) -> Vec<f64> {
        let mut beta = vec![0.0; self.n];
        for (i, &var) in self.basis.iter().enumerate() {
            if var < self.n {
                beta[var] += self.xb[i].max(0.0);
            } else if var < 2 * self.n {
                beta[var - self.n] -= self.xb[i].max(0.0);
            }
        }
        beta
    }
}
