//! Real-data pipeline: schema-driven CSV loading, dummy coding, mean
//! imputation, per-site stratified splits and cross-validated tuning.

use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::metrics::{misclassification_rate, Class};
use crate::pipeline::{centralized_fit, naive_fit, DistributedRound, Fit, Method, ThresholdRule};
use crate::worker::{summarize_shard, DataShard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

fn default_missing_token() -> String {
    "?".to_string()
}

/// One column of a data file.
///
/// For the label column, `categories` (if given) lists the raw values that
/// mean class 1; every other value is class 2. Without it the raw values
/// must be `1` or `2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default = "default_missing_token")]
    pub missing_token: String,
}

impl ColumnSchema {
    pub fn numeric(name: &str) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
            categories: None,
            missing_token: default_missing_token(),
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Categorical,
            categories: Some(levels.iter().map(|s| s.to_string()).collect()),
            missing_token: default_missing_token(),
        }
    }

    pub fn label(name: &str, class_one: Option<&[&str]>) -> Self {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Label,
            categories: class_one.map(|c| c.iter().map(|s| s.to_string()).collect()),
            missing_token: default_missing_token(),
        }
    }

    /// Index of the declared level matching `raw`. Levels that both parse
    /// as numbers match numerically, so `1` and `1.0` are the same level.
    fn level_of(&self, raw: &str) -> Option<usize> {
        let levels = self.categories.as_deref()?;
        levels.iter().position(|l| l == raw).or_else(|| {
            let x: f64 = raw.parse().ok()?;
            levels.iter().position(|l| l.parse::<f64>().is_ok_and(|v| v == x))
        })
    }
}

/// A validated column list.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    columns: Vec<ColumnSchema>,
    label: usize,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSchema>) -> Result<Self> {
        let labels: Vec<usize> = columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == ColumnKind::Label)
            .map(|(i, _)| i)
            .collect();
        if labels.len() != 1 {
            return Err(Error::SchemaMismatch(format!(
                "expected exactly one label column, found {}",
                labels.len()
            )));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::SchemaMismatch(format!("duplicate column name {:?}", c.name)));
            }
            if c.kind == ColumnKind::Categorical && c.categories.as_ref().is_none_or(|l| l.is_empty()) {
                return Err(Error::SchemaMismatch(format!(
                    "categorical column {:?} must list its levels",
                    c.name
                )));
            }
        }
        Ok(Schema {
            columns,
            label: labels[0],
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Schema::new(serde_json::from_str(s)?)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Schema::from_json_str(&text)
    }

    pub fn columns(&self) -> &[ColumnSchema] {
        &self.columns
    }

    /// Width of the preprocessed feature matrix.
    pub fn feature_dim(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Numeric => 1,
                ColumnKind::Categorical => c.categories.as_ref().map_or(0, |l| l.len() - 1),
                ColumnKind::Label => 0,
            })
            .sum()
    }

    /// Names of the preprocessed feature columns, `name=level` for indicators.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.columns {
            match c.kind {
                ColumnKind::Numeric => out.push(c.name.clone()),
                ColumnKind::Categorical => {
                    for level in &c.categories.as_ref().expect("validated")[1..] {
                        out.push(format!("{}={level}", c.name));
                    }
                }
                ColumnKind::Label => {}
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Missing,
    Number(f64),
    Level(usize),
    Label(Class),
}

/// Typed cells, row-major in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn parse_cell(col: &ColumnSchema, raw: &str, row: usize) -> Result<Cell> {
    let raw = raw.trim();
    let fail = |message: String| Error::Parse {
        row,
        column: col.name.clone(),
        message,
    };
    match col.kind {
        ColumnKind::Numeric => {
            if raw == col.missing_token {
                return Ok(Cell::Missing);
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Cell::Number(v)),
                _ => Err(fail(format!("{raw:?} is not a finite number"))),
            }
        }
        ColumnKind::Categorical => col
            .level_of(raw)
            .map(Cell::Level)
            .ok_or_else(|| fail(format!("{raw:?} is not a declared level"))),
        ColumnKind::Label => match &col.categories {
            Some(_) if raw == col.missing_token => Err(fail("missing label".into())),
            Some(_) => Ok(Cell::Label(if col.level_of(raw).is_some() {
                Class::One
            } else {
                Class::Two
            })),
            None => match raw.parse::<f64>() {
                Ok(v) if v == 1.0 => Ok(Cell::Label(Class::One)),
                Ok(v) if v == 2.0 => Ok(Cell::Label(Class::Two)),
                _ => Err(fail(format!("label {raw:?} is not 1 or 2"))),
            },
        },
    }
}

/// Reads a headed CSV whose header equals the schema's column names.
/// `row` in parse errors is the 1-based data row (header excluded).
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    if header != expected {
        return Err(Error::SchemaMismatch(format!(
            "{}: header {header:?} does not match schema {expected:?}",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.columns.len() {
            return Err(Error::SchemaMismatch(format!(
                "row {} has {} fields, expected {}",
                i + 1,
                record.len(),
                schema.columns.len()
            )));
        }
        let row = schema
            .columns
            .iter()
            .zip(record.iter())
            .map(|(c, raw)| parse_cell(c, raw, i + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable { rows })
}

/// Preprocessed data from one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteTable {
    pub site_id: usize,
    pub features: DenseMatrix,
    pub labels: Vec<Class>,
}

/// Dummy-codes categoricals (first level dropped) and fills missing
/// numerics with the column mean over this table.
pub fn preprocess(raw: &RawTable, schema: &Schema) -> Result<(DenseMatrix, Vec<Class>)> {
    if raw.is_empty() {
        return Err(Error::TooFewRows("cannot preprocess an empty table".into()));
    }
    let p = schema.feature_dim();
    let n = raw.len();
    let mut data = vec![0.0; n * p];
    let mut offset = 0;
    for (j, col) in schema.columns.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric => {
                let observed: Vec<f64> = raw
                    .rows
                    .iter()
                    .filter_map(|r| match r[j] {
                        Cell::Number(v) => Some(v),
                        _ => None,
                    })
                    .collect();
                if observed.is_empty() {
                    return Err(Error::AllMissingColumn(col.name.clone()));
                }
                let mean = observed.iter().sum::<f64>() / observed.len() as f64;
                for (i, r) in raw.rows.iter().enumerate() {
                    data[i * p + offset] = match r[j] {
                        Cell::Number(v) => v,
                        _ => mean,
                    };
                }
                offset += 1;
            }
            ColumnKind::Categorical => {
                let k = col.categories.as_ref().expect("validated").len();
                for (i, r) in raw.rows.iter().enumerate() {
                    if let Cell::Level(l) = r[j] {
                        if l > 0 {
                            data[i * p + offset + l - 1] = 1.0;
                        }
                    }
                }
                offset += k - 1;
            }
            ColumnKind::Label => {}
        }
    }
    let labels = raw
        .rows
        .iter()
        .map(|r| match r[schema.label] {
            Cell::Label(c) => c,
            _ => unreachable!("label column always parses to a label"),
        })
        .collect();
    Ok((DenseMatrix::new(n, p, data)?, labels))
}

/// Loads and preprocesses one site's file.
pub fn load_site(path: &Path, schema: &Schema, site_id: usize) -> Result<SiteTable> {
    let raw = load_csv(path, schema)?;
    let (features, labels) = preprocess(&raw, schema)?;
    Ok(SiteTable {
        site_id,
        features,
        labels,
    })
}

/// Held-out rows, split by class.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSplit {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

fn site_rng(seed: u64, site: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site as u64);
    rng
}

fn class_rows(site: &SiteTable, class: Class) -> Vec<usize> {
    (0..site.labels.len()).filter(|&i| site.labels[i] == class).collect()
}

fn gather(m: &DenseMatrix, rows: &[usize]) -> DenseMatrix {
    let mut data = Vec::with_capacity(rows.len() * m.cols());
    for &i in rows {
        data.extend_from_slice(m.row(i));
    }
    DenseMatrix::new(rows.len(), m.cols(), data).expect("rows of a valid matrix")
}

/// Stratified split: in each class `floor(fraction·n_c)` shuffled rows go
/// to training. The shuffle is seeded by `(seed, site_id)`.
pub fn split_train_test(site: &SiteTable, fraction: f64, seed: u64) -> Result<(DataShard, TestSplit)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = site_rng(seed, site.site_id);
    let mut parts = Vec::with_capacity(2);
    for class in [Class::One, Class::Two] {
        let mut rows = class_rows(site, class);
        if rows.len() < 4 {
            return Err(Error::TooFewRows(format!(
                "site {} has {} rows of class {:?}, need at least 4",
                site.site_id,
                rows.len(),
                class
            )));
        }
        rows.shuffle(&mut rng);
        let n_train = (fraction * rows.len() as f64).floor() as usize;
        let (train, test) = rows.split_at(n_train);
        parts.push((gather(&site.features, train), gather(&site.features, test)));
    }
    let (x_test, y_test) = (parts[0].1.clone(), parts[1].1.clone());
    let (x_train, y_train) = (parts[0].0.clone(), parts[1].0.clone());
    Ok((DataShard::new(x_train, y_train)?, TestSplit { x: x_test, y: y_test }))
}

/// Cross-validated choice of the constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub lambda_c: f64,
    pub t_c: f64,
    pub cv_misclass: f64,
}

/// Per-site, per-class fold assignment: row `i` of a shuffled class goes to
/// fold `i mod k`.
fn fold_ids(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut ids = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        ids[row] = pos % k;
    }
    ids
}

fn select(m: &DenseMatrix, ids: &[usize], keep: impl Fn(usize) -> bool) -> DenseMatrix {
    let rows: Vec<usize> = (0..m.rows()).filter(|&i| keep(ids[i])).collect();
    gather(m, &rows)
}

struct Fold {
    train: Vec<DataShard>,
    held_x: DenseMatrix,
    held_y: DenseMatrix,
}

fn stack(parts: &[DenseMatrix], cols: usize) -> DenseMatrix {
    let rows = parts.iter().map(DenseMatrix::rows).sum();
    let data = parts.iter().flat_map(|p| p.as_slice().iter().copied()).collect();
    DenseMatrix::new(rows, cols, data).expect("stacked blocks share a width")
}

fn make_folds(sites: &[DataShard], k: usize, seed: u64) -> Result<Vec<Fold>> {
    let assignments: Vec<(Vec<usize>, Vec<usize>)> = sites
        .iter()
        .enumerate()
        .map(|(l, s)| {
            for n in [s.n1(), s.n2()] {
                // training part of every fold must keep >= 2 rows per class
                if n < k || n - n.div_ceil(k) < 2 {
                    return Err(Error::FoldTooSmall(format!(
                        "site {l}: a class with {n} rows cannot be split into {k} folds"
                    )));
                }
            }
            let mut rng = site_rng(seed, l);
            Ok((fold_ids(s.n1(), k, &mut rng), fold_ids(s.n2(), k, &mut rng)))
        })
        .collect::<Result<_>>()?;
    let d = sites.first().map_or(0, DataShard::dim);
    (0..k)
        .map(|f| {
            let mut train = Vec::with_capacity(sites.len());
            let (mut hx, mut hy) = (Vec::new(), Vec::new());
            for (s, (a1, a2)) in sites.iter().zip(&assignments) {
                train.push(DataShard::new(
                    select(s.x(), a1, |g| g != f),
                    select(s.y(), a2, |g| g != f),
                )?);
                hx.push(select(s.x(), a1, |g| g == f));
                hy.push(select(s.y(), a2, |g| g == f));
            }
            Ok(Fold {
                train,
                held_x: stack(&hx, d),
                held_y: stack(&hy, d),
            })
        })
        .collect()
}

/// Held-out misclassification of `method` for every `(C, t)` cell on one
/// fold, as `rates[c_index][t_index]`. Methods without a threshold repeat
/// one value along `t`.
fn fold_rates(fold: &Fold, method: Method, c_grid: &[f64], t_grid: &[f64]) -> Result<Vec<Vec<f64>>> {
    let summaries = fold.train.iter().map(summarize_shard).collect::<Result<Vec<_>>>()?;
    let pooled = match method {
        Method::Centralized => Some(summarize_shard(&DataShard::pool(&fold.train)?)?),
        _ => None,
    };
    let rate = |fit: &Fit| misclassification_rate(&fold.held_x, &fold.held_y, &fit.beta, &fit.mu_mid);
    c_grid
        .par_iter()
        .map(|&c| match method {
            Method::Distributed => {
                let round = DistributedRound::run(&summaries, c)?;
                t_grid
                    .iter()
                    .map(|&t_c| {
                        let (est, _) = round.aggregate(ThresholdRule::MedianScaled, t_c)?;
                        rate(&Fit {
                            beta: est.beta_bar,
                            mu_mid: est.mu_mid,
                        })
                    })
                    .collect()
            }
            Method::Naive => Ok(vec![rate(&naive_fit(&summaries, c)?)?; t_grid.len()]),
            Method::Centralized => {
                let fit = centralized_fit(pooled.as_ref().expect("pooled for centralized"), c)?;
                Ok(vec![rate(&fit)?; t_grid.len()])
            }
        })
        .collect()
}

/// Mean held-out misclassification for every grid cell, `[c][t]`.
pub fn cv_grid(
    train_sites: &[DataShard],
    method: Method,
    c_grid: &[f64],
    t_grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k must be >= 2, got {k}")));
    }
    if c_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::InvalidParameter("tuning grids must be nonempty".into()));
    }
    if train_sites.is_empty() {
        return Err(Error::EmptyMessageSet);
    }
    let folds = make_folds(train_sites, k, seed)?;
    let mut total = vec![vec![0.0; t_grid.len()]; c_grid.len()];
    for fold in &folds {
        let rates = fold_rates(fold, method, c_grid, t_grid)?;
        for (acc, r) in total.iter_mut().zip(&rates) {
            for (a, v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
    }
    for row in &mut total {
        for v in row.iter_mut() {
            *v /= k as f64;
        }
    }
    Ok(total)
}

/// First cell (row-major) with the smallest value.
fn argmin_grid(grid: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (0, 0);
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v < grid[best.0][best.1] {
                best = (i, j);
            }
        }
    }
    best
}

/// k-fold tuning of `(C, t_c)` for `method`. Folds are drawn inside each
/// site and class so every round still has all sites. Ties go to the
/// smaller C index, then the smaller t index.
pub fn kfold_tune_method(
    train_sites: &[DataShard],
    method: Method,
    c_grid: &[f64],
    t_grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<TuningResult> {
    let grid = cv_grid(train_sites, method, c_grid, t_grid, k, seed)?;
    let (i, j) = argmin_grid(&grid);
    Ok(TuningResult {
        lambda_c: c_grid[i],
        t_c: t_grid[j],
        cv_misclass: grid[i][j],
    })
}

/// [`kfold_tune_method`] for the distributed estimator.
pub fn kfold_tune(train_sites: &[DataShard], c_grid: &[f64], t_grid: &[f64], k: usize, seed: u64) -> Result<TuningResult> {
    kfold_tune_method(train_sites, Method::Distributed, c_grid, t_grid, k, seed)
}

/// `{0.1, 0.2, …, 2.0}`.
pub fn default_c_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 10.0).collect()
}

/// `{0, 0.1, …, 2.0}`.
pub fn default_t_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 10.0).collect()
}

/// Drops feature columns with zero pooled within-class variance on any
/// training site; such a column makes that site's CLIME program
/// infeasible. Returns the kept column indices.
pub fn informative_columns(train_sites: &[DataShard]) -> Result<Vec<usize>> {
    let d = train_sites.first().ok_or(Error::EmptyMessageSet)?.dim();
    let mut keep = vec![true; d];
    for s in train_sites {
        let summary = summarize_shard(s)?;
        for (j, k) in keep.iter_mut().enumerate() {
            if summary.sigma.get(j, j) <= 0.0 {
                *k = false;
            }
        }
    }
    Ok((0..d).filter(|&j| keep[j]).collect())
}

/// Restricts a matrix to the given columns.
pub fn select_columns(m: &DenseMatrix, cols: &[usize]) -> DenseMatrix {
    let mut data = Vec::with_capacity(m.rows() * cols.len());
    for i in 0..m.rows() {
        let row = m.row(i);
        data.extend(cols.iter().map(|&j| row[j]));
    }
    DenseMatrix::new(m.rows(), cols.len(), data).expect("subset of a valid matrix")
}

/// Misclassification of a fitted rule on a site's held-out rows.
pub fn test_rate(fit: &Fit, test: &TestSplit) -> Result<f64> {
    misclassification_rate(&test.x, &test.y, &fit.beta, &fit.mu_mid)
}
