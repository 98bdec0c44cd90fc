//! Dense matrices, the observation mask, logistic link and seeded randomness.
//!
//! Everything downstream stores matrices densely in row-major order. Missing
//! cells of the location-app matrix are carried by a boolean mask and never by
//! sentinel values.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully observed real matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                format!("{} values for {rows}x{cols}", rows * cols),
                values.len(),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    format!("row {i} of length {cols}"),
                    row.len(),
                ));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    /// Keep the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.cols);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            rows: rows.len(),
            cols: self.cols,
            values,
        }
    }
}

/// Partially observed matrix: `mask[i][j]` is true where the value is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix {
    values: DenseMatrix,
    mask: Vec<bool>,
}

impl MaskedMatrix {
    /// Every cell unobserved.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            values: DenseMatrix::zeros(rows, cols),
            mask: vec![false; rows * cols],
        }
    }

    pub fn fully_observed(values: DenseMatrix) -> Self {
        let mask = vec![true; values.rows * values.cols];
        Self { values, mask }
    }

    pub fn new(values: DenseMatrix, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != values.rows * values.cols {
            return Err(Error::shape(
                format!("mask of {} cells", values.rows * values.cols),
                mask.len(),
            ));
        }
        Ok(Self { values, mask })
    }

    pub fn from_options(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut out = Self::empty(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    format!("row {i} of length {cols}"),
                    row.len(),
                ));
            }
            for (j, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    out.observe(i, j, *v);
                }
            }
        }
        Ok(out)
    }

    pub fn rows(&self) -> usize {
        self.values.rows
    }

    pub fn cols(&self) -> usize {
        self.values.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.values.cols + j]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.is_observed(i, j).then(|| self.values.get(i, j))
    }

    pub fn observe(&mut self, i: usize, j: usize, v: f64) {
        let idx = i * self.values.cols + j;
        self.values.values[idx] = v;
        self.mask[idx] = true;
    }

    pub fn unobserve(&mut self, i: usize, j: usize) {
        let idx = i * self.values.cols + j;
        self.values.values[idx] = 0.0;
        self.mask[idx] = false;
    }

    /// Raw value storage; unobserved cells hold 0 and carry no meaning.
    pub fn values(&self) -> &DenseMatrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Observed cells in row-major order.
    pub fn observed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let cols = self.values.cols;
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(idx, _)| (idx / cols, idx % cols, self.values.values[idx]))
    }

    pub fn observed_in_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.cols()).filter_map(move |j| self.get(i, j).map(|v| (j, v)))
    }

    pub fn all_observed_within(&self, lo: f64, hi: f64) -> bool {
        self.observed().all(|(_, _, v)| (lo..=hi).contains(&v))
    }
}

/// Non-negative integer matrix (raw counts r, q).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    values: Vec<u64>,
}

impl CountMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape(
                    format!("row {i} of length {cols}"),
                    row.len(),
                ));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, by: u64) {
        self.values[i * self.cols + j] += by;
    }

    pub fn set(&mut self, i: usize, j: usize, v: u64) {
        self.values[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }

    pub fn column_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.cols];
        for i in 0..self.rows {
            for (t, &v) in totals.iter_mut().zip(self.row(i)) {
                *t += v;
            }
        }
        totals
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j) as f64)
    }

    /// Keep the listed columns, in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, cols.len());
        for i in 0..self.rows {
            for (jj, &j) in cols.iter().enumerate() {
                out.set(i, jj, self.get(i, j));
            }
        }
        out
    }
}

/// Logistic function, evaluated without overflow for any finite input.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of [`logistic`]: `g(x)(1 - g(x)) = e^{-|x|} / (1 + e^{-|x|})^2`.
#[inline]
pub fn logistic_deriv(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    let d = 1.0 + e;
    e / (d * d)
}

/// Sum over observed cells of `a` of the squared difference to `b`.
pub fn masked_sq_error(a: &MaskedMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{:?}", a.shape()),
            format!("{:?}", b.shape()),
        ));
    }
    Ok(a.observed()
        .map(|(i, j, v)| {
            let d = v - b.get(i, j);
            d * d
        })
        .sum())
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity clamped to [-1, 1]; zero when either vector is all
/// zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Deterministic, portable random stream (ChaCha8).
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream identified by `(seed, stream)`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in [0, bound).
    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    /// Zero-mean Gaussian draw. `stddev == 0` yields exactly 0.
    pub fn gaussian(&mut self, stddev: f64) -> f64 {
        if stddev == 0.0 {
            return 0.0;
        }
        let normal = Normal::new(0.0, stddev).expect("finite non-negative stddev");
        normal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, sorted ascending.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut picked = rand::seq::index::sample(&mut self.inner, n, k.min(n)).into_vec();
        picked.sort_unstable();
        picked
    }
}

/// Format used for every real value written to disk: 17 significant digits,
/// which round-trips any f64 exactly.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write a matrix as CSV: header `id,<col ids>`, one row per row id, empty
/// cells for unobserved entries.
pub fn write_matrix_csv<W: Write>(
    out: W,
    row_ids: &[String],
    col_ids: &[String],
    cell: impl Fn(usize, usize) -> Option<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = Vec::with_capacity(col_ids.len() + 1);
    header.push("id".to_string());
    header.extend(col_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, rid) in row_ids.iter().enumerate() {
        let mut rec = Vec::with_capacity(col_ids.len() + 1);
        rec.push(rid.clone());
        for j in 0..col_ids.len() {
            rec.push(cell(i, j).map(format_real).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// A matrix read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl MatrixFile {
    pub fn to_dense(&self) -> Result<DenseMatrix> {
        let rows: Result<Vec<Vec<f64>>> = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|c| {
                        c.ok_or_else(|| {
                            Error::Invalid(format!("row {i}: empty cell in a dense matrix"))
                        })
                    })
                    .collect()
            })
            .collect();
        let rows = rows?;
        if rows.is_empty() {
            return Ok(DenseMatrix::zeros(0, self.col_ids.len()));
        }
        DenseMatrix::from_rows(&rows)
    }

    pub fn to_masked(&self) -> Result<MaskedMatrix> {
        if self.cells.is_empty() {
            return Ok(MaskedMatrix::empty(0, self.col_ids.len()));
        }
        MaskedMatrix::from_options(&self.cells)
    }
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<MatrixFile> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let header = r.headers()?.clone();
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut row_ids = Vec::new();
    let mut cells = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let mut it = rec.iter();
        row_ids.push(it.next().unwrap_or_default().to_string());
        let row: Result<Vec<Option<f64>>> = it
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>().map(Some).map_err(|e| Error::Parse {
                        line,
                        message: format!("bad value {s:?}: {e}"),
                    })
                }
            })
            .collect();
        cells.push(row?);
    }
    Ok(MatrixFile {
        row_ids,
        col_ids,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_examples() {
        assert_eq!(logistic(0.0), 0.5);
        assert!((logistic(40.0) - 1.0).abs() < 1e-12);
        assert!((logistic(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(logistic(-800.0) >= 0.0 && logistic(800.0) <= 1.0);
        assert!(logistic(-800.0).is_finite());
    }

    #[test]
    fn logistic_deriv_examples() {
        assert_eq!(logistic_deriv(0.0), 0.25);
        assert_eq!(logistic_deriv(1.7), logistic_deriv(-1.7));
        assert!((logistic_deriv(3f64.ln()) - 0.1875).abs() < 1e-15);
        assert_eq!(logistic_deriv(1e6), 0.0);
    }

    #[test]
    fn masked_sq_error_examples() {
        let a = MaskedMatrix::from_options(&[vec![Some(1.0)]]).unwrap();
        let b = DenseMatrix::from_rows(&[vec![0.5]]).unwrap();
        assert_eq!(masked_sq_error(&a, &b).unwrap(), 0.25);

        let empty = MaskedMatrix::empty(2, 2);
        let b = DenseMatrix::from_rows(&[vec![3.0, 1.0], vec![2.0, 9.0]]).unwrap();
        assert_eq!(masked_sq_error(&empty, &b).unwrap(), 0.0);

        let same = MaskedMatrix::from_options(&[vec![Some(3.0), None], vec![None, Some(9.0)]])
            .unwrap();
        assert_eq!(masked_sq_error(&same, &b).unwrap(), 0.0);
    }

    #[test]
    fn masked_sq_error_rejects_shape_mismatch() {
        let a = MaskedMatrix::empty(2, 3);
        let b = DenseMatrix::zeros(3, 2);
        assert!(matches!(masked_sq_error(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn seeded_streams_repeat() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..10_000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = SeededRng::derived(7, 1);
        let mut d = SeededRng::derived(7, 2);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = MaskedMatrix::from_options(&[
            vec![Some(0.1), None, Some(1.0 / 3.0)],
            vec![None, Some(-0.0), Some(f64::MIN_POSITIVE)],
        ])
        .unwrap();
        let rows = vec!["r0".to_string(), "r1".to_string()];
        let cols = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut buf = Vec::new();
        write_matrix_csv(&mut buf, &rows, &cols, |i, j| m.get(i, j)).unwrap();
        let back = read_matrix_csv(buf.as_slice()).unwrap();
        assert_eq!(back.row_ids, rows);
        assert_eq!(back.col_ids, cols);
        let mm = back.to_masked().unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(
                    m.get(i, j).map(f64::to_bits),
                    mm.get(i, j).map(f64::to_bits)
                );
            }
        }
    }
}
