//! Test-only oracles, independent of the library's solver and kernels.
#![allow(dead_code)]

use dslda::linalg::{DenseMatrix, DenseVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    Some(x)
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in (i + 1)..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Optimal value of `min Σ(u + v)` over `{u, v ≥ 0 : −λ ≤ A(u − v) − b ≤ λ}`
/// by enumerating every vertex of the polytope in `(u, v)` space.
/// `None` when no vertex is feasible.
pub fn lp_vertex_oracle(a: &[Vec<f64>], b: &[f64], lambda: f64) -> Option<f64> {
    let d = b.len();
    let dim = 2 * d;
    // G x <= h
    let mut g: Vec<Vec<f64>> = Vec::with_capacity(4 * d);
    let mut h: Vec<f64> = Vec::with_capacity(4 * d);
    for i in 0..d {
        let mut row: Vec<f64> = a[i].clone();
        row.extend(a[i].iter().map(|v| -v));
        g.push(row);
        h.push(b[i] + lambda);
    }
    for i in 0..d {
        let mut row: Vec<f64> = a[i].iter().map(|v| -v).collect();
        row.extend(a[i].iter().copied());
        g.push(row);
        h.push(lambda - b[i]);
    }
    for k in 0..dim {
        let mut row = vec![0.0; dim];
        row[k] = -1.0;
        g.push(row);
        h.push(0.0);
    }
    let total = g.len();
    let mut comb: Vec<usize> = (0..dim).collect();
    let mut best: Option<f64> = None;
    loop {
        let sys: Vec<Vec<f64>> = comb.iter().map(|&i| g[i].clone()).collect();
        let rhs: Vec<f64> = comb.iter().map(|&i| h[i]).collect();
        if let Some(x) = gauss_solve(sys, rhs) {
            let feasible = g.iter().zip(&h).all(|(row, &hi)| {
                let lhs: f64 = row.iter().zip(&x).map(|(r, x)| r * x).sum();
                lhs <= hi + 1e-9
            });
            if feasible {
                let obj: f64 = x.iter().sum();
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        if !next_combination(&mut comb, total) {
            break;
        }
    }
    best
}

/// `MᵀM + shift·I` with `M` uniform in [-1, 1].
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> Vec<Vec<f64>> {
    let m: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = (0..d).map(|k| m[k][i] * m[k][j]).sum();
        }
        a[i][i] += shift;
    }
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
    }
    a
}

pub fn to_matrix(a: &[Vec<f64>]) -> DenseMatrix {
    DenseMatrix::from_rows(a).unwrap()
}

pub fn to_vector(v: &[f64]) -> DenseVector {
    DenseVector::new(v.to_vec()).unwrap()
}

/// Matrix inverse by solving against each unit vector.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = a.len();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            gauss_solve(a.to_vec(), e).expect("invertible")
        })
        .collect();
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

/// Pooled within-class covariance by the textbook double loop.
pub fn naive_pooled_covariance(x: &DenseMatrix, y: &DenseMatrix) -> Vec<Vec<f64>> {
    let d = x.cols();
    let mean = |m: &DenseMatrix, j: usize| (0..m.rows()).map(|i| m.get(i, j)).sum::<f64>() / m.rows() as f64;
    let mu1: Vec<f64> = (0..d).map(|j| mean(x, j)).collect();
    let mu2: Vec<f64> = (0..d).map(|j| mean(y, j)).collect();
    let n = (x.rows() + y.rows()) as f64;
    let mut s = vec![vec![0.0; d]; d];
    for j in 0..d {
        for k in 0..d {
            let mut acc = 0.0;
            for i in 0..x.rows() {
                acc += (x.get(i, j) - mu1[j]) * (x.get(i, k) - mu1[k]);
            }
            for i in 0..y.rows() {
                acc += (y.get(i, j) - mu2[j]) * (y.get(i, k) - mu2[k]);
            }
            s[j][k] = acc / n;
        }
    }
    s
}

/// One seeded random instance for the solver oracle: `A = MᵀM + 0.1·I`,
/// `b` uniform in [-1, 1]^d, `λ` uniform in [0, ‖b‖∞].
pub fn oracle_instance(rng: &mut ChaCha8Rng, max_d: usize) -> (Vec<Vec<f64>>, Vec<f64>, f64) {
    let d = rng.random_range(1..=max_d);
    let a = random_spd(rng, d, 0.1);
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let binf = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lambda = rng.random_range(0.0..=binf);
    (a, b, lambda)
}
