//! Series container, CSV ingestion, delay matrices, differencing and
//! seeded synthetic generators.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QarimaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(QarimaError::Data("empty series".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QarimaError::Data(format!("non-finite value at index {i}")));
        }
        Ok(Self { name: name.into(), values, timestamps: None })
    }

    pub fn with_timestamps(mut self, ts: Vec<f64>) -> Result<Self> {
        if ts.len() != self.values.len() {
            return invalid("timestamp count differs from value count");
        }
        if ts.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("timestamps must be strictly increasing");
        }
        self.timestamps = Some(ts);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Column selector for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

impl From<&str> for Column {
    fn from(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("null")
}

/// Read one numeric column. Leading rows with missing cells are dropped;
/// a missing cell after the first observation is an error. Row numbers in
/// errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, column: &Column) -> Result<TimeSeries> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| QarimaError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let idx = match column {
        Column::Index(i) if *i < headers.len() => *i,
        Column::Index(i) => return Err(QarimaError::Data(format!("column index {i} out of range"))),
        Column::Name(n) => headers
            .iter()
            .position(|h| h.trim() == n)
            .ok_or_else(|| QarimaError::Data(format!("column {n:?} not found")))?,
    };
    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(idx).unwrap_or("");
        if is_missing(cell) {
            if values.is_empty() {
                continue;
            }
            return Err(QarimaError::Data(format!("missing value at row {}", row + 1)));
        }
        let v: f64 = cell
            .trim()
            .parse()
            .map_err(|_| QarimaError::Data(format!("unparseable value {cell:?} at row {}", row + 1)))?;
        if !v.is_finite() {
            return Err(QarimaError::Data(format!("non-finite value at row {}", row + 1)));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(QarimaError::Data(format!("{}: empty series", path.display())));
    }
    let name = match column {
        Column::Name(n) => n.clone(),
        Column::Index(_) => headers.get(idx).unwrap_or("series").to_string(),
    };
    TimeSeries::new(name, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayMatrix {
    pub p: usize,
    /// `regressors[r] = [y_{t−1}, …, y_{t−p}]` for target `targets[r] = y_t`.
    pub regressors: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl DelayMatrix {
    pub fn rows(&self) -> usize {
        self.targets.len()
    }
}

pub fn build_delay_matrix(y: &[f64], p: usize) -> Result<DelayMatrix> {
    if p == 0 {
        return invalid("delay matrix needs p >= 1");
    }
    if y.len() <= p {
        return invalid(format!("insufficient data: {} observations for p = {p}", y.len()));
    }
    let mut regressors = Vec::with_capacity(y.len() - p);
    let mut targets = Vec::with_capacity(y.len() - p);
    for t in p..y.len() {
        regressors.push((1..=p).map(|i| y[t - i]).collect());
        targets.push(y[t]);
    }
    Ok(DelayMatrix { p, regressors, targets })
}

pub fn diff(y: &[f64]) -> Vec<f64> {
    y.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `d`-th difference; `d = 0` copies.
pub fn difference(y: &[f64], d: usize) -> Vec<f64> {
    let mut out = y.to_vec();
    for _ in 0..d {
        out = diff(&out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffTable {
    pub d_max: usize,
    /// `levels[d]` is `Del_d`; `levels[0]` is the source.
    pub levels: Vec<Vec<f64>>,
}

impl DiffTable {
    pub fn level(&self, d: usize) -> Option<&[f64]> {
        self.levels.get(d).map(|v| v.as_slice())
    }
}

pub fn generate_differences(y: &[f64], d_max: usize) -> Result<DiffTable> {
    if d_max == 0 {
        return invalid("d_max must be >= 1");
    }
    if d_max >= y.len() {
        return invalid(format!("insufficient data: {} observations for d_max = {d_max}", y.len()));
    }
    let mut levels = vec![y.to_vec()];
    for d in 1..=d_max {
        let next = diff(&levels[d - 1]);
        levels.push(next);
    }
    Ok(DiffTable { d_max, levels })
}

/// Integrate a `d`-times differenced continuation back to the original scale.
/// `history_tail` holds at least the last `d` original observations before
/// the continuation starts.
pub fn invert_difference(forecast_diff: &[f64], history_tail: &[f64], d: usize) -> Result<Vec<f64>> {
    if d == 0 {
        return Ok(forecast_diff.to_vec());
    }
    if history_tail.len() < d {
        return invalid(format!("need {d} anchor values, got {}", history_tail.len()));
    }
    let tail = &history_tail[history_tail.len() - d..];
    // anchors[j] = last value of Del_j over the tail
    let anchors: Vec<f64> = (0..d).map(|j| *difference(tail, j).last().unwrap()).collect();
    let mut cur = forecast_diff.to_vec();
    for j in (0..d).rev() {
        let mut acc = anchors[j];
        for v in cur.iter_mut() {
            acc += *v;
            *v = acc;
        }
    }
    Ok(cur)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn center(v: &[f64]) -> Vec<f64> {
    let m = mean(v);
    v.iter().map(|x| x - m).collect()
}

fn normals(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

const BURN_IN: usize = 200;

pub fn synth_white_noise(n: usize, sigma: f64, seed: u64) -> Result<TimeSeries> {
    if n < 10 {
        return invalid("synthetic series need n >= 10");
    }
    TimeSeries::new("white_noise", normals(n, sigma, seed))
}

pub fn synth_ar1(phi: f64, n: usize, sigma: f64, seed: u64) -> Result<TimeSeries> {
    if phi.abs() >= 1.0 {
        return invalid(format!("|phi| = {} is not stationary", phi.abs()));
    }
    let mut s = synth_arma(&[phi], &[], n, sigma, seed)?;
    s.name = "ar1".into();
    Ok(s)
}

pub fn synth_random_walk(n: usize, sigma: f64, seed: u64) -> Result<TimeSeries> {
    if n < 10 {
        return invalid("synthetic series need n >= 10");
    }
    let mut acc = 0.0;
    let values = normals(n, sigma, seed)
        .into_iter()
        .map(|e| {
            acc += e;
            acc
        })
        .collect();
    TimeSeries::new("random_walk", values)
}

/// Zero-mean ARMA draw with a discarded burn-in.
/// `y_t = Σ ar_i y_{t−i} + e_t + Σ ma_j e_{t−j}`.
pub fn synth_arma(ar: &[f64], ma: &[f64], n: usize, sigma: f64, seed: u64) -> Result<TimeSeries> {
    if n < 10 {
        return invalid("synthetic series need n >= 10");
    }
    let total = n + BURN_IN;
    let e = normals(total, sigma, seed);
    let mut y = vec![0.0; total];
    for t in 0..total {
        let mut v = e[t];
        for (i, a) in ar.iter().enumerate() {
            if t > i {
                v += a * y[t - i - 1];
            }
        }
        for (j, m) in ma.iter().enumerate() {
            if t > j {
                v += m * e[t - j - 1];
            }
        }
        y[t] = v;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(QarimaError::Numerical("synthetic ARMA draw diverged".into()));
    }
    TimeSeries::new("arma", y[BURN_IN..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_loading() {
        let f = write_tmp("v\n1\n2\n");
        let s = load_csv(f.path(), &Column::Name("v".into())).unwrap();
        assert_eq!(s.values, vec![1.0, 2.0]);

        let f = write_tmp("v\n1\nx\n3\n");
        let err = load_csv(f.path(), &"v".into()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let f = write_tmp("t,v\n1,\n2,NA\n3,5\n4,6\n");
        assert_eq!(load_csv(f.path(), &Column::Index(1)).unwrap().values, vec![5.0, 6.0]);

        let f = write_tmp("t,v\n1,4\n2,\n3,5\n");
        assert!(load_csv(f.path(), &"v".into()).is_err());
        let f = write_tmp("v\n\n");
        assert!(load_csv(f.path(), &"v".into()).is_err());
        assert!(load_csv("/nonexistent/file.csv", &"v".into()).is_err());
    }

    #[test]
    fn delay_matrix() {
        let m = build_delay_matrix(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(m.regressors, vec![vec![2.0, 1.0], vec![3.0, 2.0], vec![4.0, 3.0]]);
        assert_eq!(m.targets, vec![3.0, 4.0, 5.0]);
        let m = build_delay_matrix(&[1.0, 2.0], 1).unwrap();
        assert_eq!(m.rows(), 1);
        assert!(build_delay_matrix(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn differencing() {
        let t = generate_differences(&[1.0, 3.0, 6.0, 10.0], 2).unwrap();
        assert_eq!(t.levels[1], vec![2.0, 3.0, 4.0]);
        assert_eq!(t.levels[2], vec![1.0, 1.0]);
        let c = generate_differences(&[2.0; 5], 1).unwrap();
        assert!(c.levels[1].iter().all(|v| *v == 0.0));
        let g = generate_differences(&[1.0, 2.0, 4.0, 8.0, 16.0], 3).unwrap();
        assert_eq!(g.levels[3], vec![1.0, 2.0]);
        assert!(generate_differences(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn inversion() {
        assert_eq!(invert_difference(&[1.0, 2.0], &[], 0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(invert_difference(&[2.0, 3.0, 4.0], &[1.0], 1).unwrap(), vec![3.0, 6.0, 10.0]);
        assert!(invert_difference(&[1.0], &[1.0], 2).is_err());
    }

    #[test]
    fn generators() {
        let a = synth_ar1(0.5, 100, 1.0, 3).unwrap();
        assert_eq!(a, synth_ar1(0.5, 100, 1.0, 3).unwrap());
        assert!(synth_ar1(1.0, 100, 1.0, 3).is_err());
        assert!(synth_random_walk(5, 1.0, 1).is_err());
    }
}
