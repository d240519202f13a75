//! Synthetic two-class Gaussian model and seeded shard generation.
//!
//! Randomness comes from ChaCha8 seeded with the 64-bit experiment seed; each
//! shard draws from its own ChaCha stream (stream id = worker index), so a
//! shard's rows do not depend on how many other shards are generated or in
//! which order. Standard normals use `rand_distr::StandardNormal`
//! (ziggurat).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, DenseMatrix, DenseVector};
use crate::worker::DataShard;

/// Entries of `β*` with magnitude at or below this count as zero.
pub const SUPPORT_TOL: f64 = 1e-10;

/// Stream reserved for held-out evaluation samples.
const TEST_STREAM: u64 = u64::MAX;

/// Population parameters of the two-class model.
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub sigma_star: DenseMatrix,
    pub mu1: DenseVector,
    pub mu2: DenseVector,
    /// `Σ*⁻¹(μ₁ − μ₂)`
    pub beta_star: DenseVector,
    /// `‖β*‖₀` at [`SUPPORT_TOL`]
    pub s: usize,
    /// Lower Cholesky factor of `sigma_star`.
    pub chol: DenseMatrix,
}

impl TrueModel {
    pub fn new(sigma_star: DenseMatrix, mu1: DenseVector, mu2: DenseVector) -> Result<Self> {
        let chol = sigma_star.cholesky()?;
        let mud = mu1.sub(&mu2)?;
        let beta_star = cholesky_solve(&chol, &mud)?;
        let s = beta_star.count_nonzero(SUPPORT_TOL);
        Ok(Self {
            sigma_star,
            mu1,
            mu2,
            beta_star,
            s,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu1.dim()
    }
}

/// `Σ_jk = ρ^|j−k|`.
pub fn ar1_covariance(d: usize, rho: f64) -> Result<DenseMatrix> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be at least 1".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::InvalidParameter(format!("AR(1) needs |rho| < 1, got {rho}")));
    }
    let mut data = vec![0.0; d * d];
    for j in 0..d {
        for k in 0..d {
            data[j * d + k] = rho.powi(j.abs_diff(k) as i32);
        }
    }
    DenseMatrix::new(d, d, data)
}

/// AR(1) covariance with `μ₁ = 0` and `μ₂` equal to ten leading ones.
pub fn synthetic_model(d: usize, rho: f64) -> Result<TrueModel> {
    if d < 11 {
        return Err(Error::InvalidParameter(format!(
            "the benchmark model needs d >= 11, got {d}"
        )));
    }
    let sigma = ar1_covariance(d, rho)?;
    let mu1 = DenseVector::zeros(d);
    let mut mu2 = vec![0.0; d];
    mu2[..10].iter_mut().for_each(|v| *v = 1.0);
    TrueModel::new(sigma, mu1, DenseVector::from_vec_unchecked(mu2))
}

/// The benchmark model with `ρ = 0.8`.
pub fn paper_model(d: usize) -> Result<TrueModel> {
    synthetic_model(d, 0.8)
}

/// Sizes and tuning constants of one synthetic experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    /// total sample size N across machines
    pub n_total: usize,
    /// number of machines
    pub m: usize,
    /// class-1 share on each machine
    pub r: f64,
    pub rho: f64,
    pub seed: u64,
    /// C in λ = C·√(log d / n)
    pub lambda_c: f64,
    /// constant of the hard-threshold grid
    pub t_c: f64,
    pub reps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 200,
            n_total: 10_000,
            m: 1,
            r: 0.5,
            rho: 0.8,
            seed: 0,
            lambda_c: 1.0,
            t_c: 1.0,
            reps: 1,
        }
    }
}

impl ExperimentConfig {
    /// Per-machine sample size `n = N / m`.
    pub fn n(&self) -> usize {
        self.n_total / self.m.max(1)
    }

    pub fn n1(&self) -> usize {
        (self.r * self.n() as f64).round() as usize
    }

    pub fn n2(&self) -> usize {
        self.n() - self.n1()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n_total % self.m != 0 {
            return Err(Error::InvalidParameter(format!(
                "N = {} is not divisible by m = {}",
                self.n_total, self.m
            )));
        }
        if !(self.r > 0.0 && self.r <= 0.5) {
            return Err(Error::InvalidParameter(format!("r must lie in (0, 1/2], got {}", self.r)));
        }
        let n1 = self.r * self.n() as f64;
        if (n1 - n1.round()).abs() > 1e-9 || self.n1() < 2 || self.n2() < 2 {
            return Err(Error::InvalidParameter(format!(
                "r * n = {n1} must be an integer >= 2 (n = {})",
                self.n()
            )));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("d must be positive".into()));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `count` rows of `N(mean, L·Lᵀ)`.
fn sample_rows(mean: &DenseVector, chol: &DenseMatrix, count: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let d = mean.dim();
    let mut data = Vec::with_capacity(count * d);
    let mut z = vec![0.0; d];
    for _ in 0..count {
        z.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
        for j in 0..d {
            let row = &chol.row(j)[..=j];
            let lz: f64 = row.iter().zip(&z).map(|(l, z)| l * z).sum();
            data.push(mean.get(j) + lz);
        }
    }
    DenseMatrix::from_vec_unchecked(count, d, data)
}

/// One shard drawn from stream `worker` of `seed`.
pub fn generate_shard(model: &TrueModel, n1: usize, n2: usize, seed: u64, worker: u64) -> Result<DataShard> {
    let mut rng = stream_rng(seed, worker);
    let x = sample_rows(&model.mu1, &model.chol, n1, &mut rng);
    let y = sample_rows(&model.mu2, &model.chol, n2, &mut rng);
    DataShard::new(x, y)
}

/// `cfg.m` shards of `n1 + n2 = N / m` rows each.
pub fn generate_shards(model: &TrueModel, cfg: &ExperimentConfig) -> Result<Vec<DataShard>> {
    cfg.validate()?;
    if cfg.d != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: cfg.d,
        });
    }
    (0..cfg.m)
        .into_par_iter()
        .map(|l| generate_shard(model, cfg.n1(), cfg.n2(), cfg.seed, l as u64))
        .collect()
}

/// Held-out samples for misclassification, from a stream no shard uses.
pub fn generate_test_set(model: &TrueModel, per_class: usize, seed: u64) -> (DenseMatrix, DenseMatrix) {
    let mut rng = stream_rng(seed, TEST_STREAM);
    let x = sample_rows(&model.mu1, &model.chol, per_class, &mut rng);
    let y = sample_rows(&model.mu2, &model.chol, per_class, &mut rng);
    (x, y)
}

fn shard_paths(dir: &Path, id: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("shard_{id}_class1.csv")),
        dir.join(format!("shard_{id}_class2.csv")),
    )
}

fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header: Vec<String> = (0..m.cols()).map(|j| j.to_string()).collect();
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", header.join(","))?;
        for i in 0..m.rows() {
            let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .ok_or_else(|| Error::SchemaMismatch(format!("{} has no header", path.display())))?;
    let cols = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols {
            return Err(Error::Parse {
                row: i + 1,
                column: String::new(),
                message: format!("expected {cols} fields, found {}", fields.len()),
            });
        }
        for (j, f) in fields.iter().enumerate() {
            data.push(f.trim().parse::<f64>().map_err(|e| Error::Parse {
                row: i + 1,
                column: j.to_string(),
                message: e.to_string(),
            })?);
        }
        rows += 1;
    }
    DenseMatrix::new(rows, cols, data)
}

/// Writes `shard_<id>_class1.csv` and `shard_<id>_class2.csv` under `dir`.
pub fn write_shard_csv(shard: &DataShard, dir: &Path, id: usize) -> Result<()> {
    let (p1, p2) = shard_paths(dir, id);
    write_matrix_csv(&p1, shard.x())?;
    write_matrix_csv(&p2, shard.y())
}

pub fn read_shard_csv(dir: &Path, id: usize) -> Result<DataShard> {
    let (p1, p2) = shard_paths(dir, id);
    DataShard::new(read_matrix_csv(&p1)?, read_matrix_csv(&p2)?)
}
