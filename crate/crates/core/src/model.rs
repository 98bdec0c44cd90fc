//! Temporal collective matrix factorization.
//!
//! Per period `t` the model explains three matrices through shared location
//! factors:
//!
//! * `X_t ≈ g((L1_t + L2_t)ᵀ A)` on observed cells (app usage),
//! * `Y   ≈ g(L1_tᵀ P_t)` (POI profile, same `Y` for every period),
//! * `Z_t ≈ g(L2_tᵀ L2_t)` (user-overlap correlation),
//!
//! with ridge penalties on every factor and a chain penalty tying
//! consecutive periods' `L1`, `L2` and `P` together. `A` is shared across
//! periods. A single period with zero chain weights is the static model.
//!
//! Factor matrices are stored entity-major: the `K` latent coordinates of one
//! location, app or POI category are contiguous.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dot, format_real, logistic, logistic_deriv, read_matrix_csv, write_matrix_csv, DenseMatrix,
    MaskedMatrix, SeededRng,
};
use crate::preprocessing::{Dims, ObservationBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Latent dimension.
    pub k: usize,
    /// Weight of the location-POI term.
    pub alpha: f64,
    /// Weight of the location-correlation term.
    pub beta: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub lambda_a: f64,
    pub lambda_p: f64,
    /// Temporal continuity weight on `L1` and `L2`.
    pub lambda_1: f64,
    /// Temporal continuity weight on `P`.
    pub lambda_2: f64,
    pub learning_rate: f64,
    /// Observed cells per gradient step; `None` means full batch.
    pub batch_size: Option<usize>,
    pub epochs: usize,
    pub init_stddev: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 10,
            alpha: 5.0,
            beta: 1.0,
            lambda_l1: 0.1,
            lambda_l2: 0.1,
            lambda_a: 0.1,
            lambda_p: 0.1,
            lambda_1: 0.1,
            lambda_2: 0.1,
            learning_rate: 0.05,
            batch_size: None,
            epochs: 200,
            init_stddev: 0.1,
            seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("K must be at least 1".into()));
        }
        let weights = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda_l1", self.lambda_l1),
            ("lambda_l2", self.lambda_l2),
            ("lambda_a", self.lambda_a),
            ("lambda_p", self.lambda_p),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("init_stddev", self.init_stddev),
        ];
        for (name, w) in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Invalid("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `K × count` latent matrix, one contiguous `K`-vector per entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMatrix {
    k: usize,
    count: usize,
    data: Vec<f64>,
}

impl LatentMatrix {
    pub fn zeros(k: usize, count: usize) -> Self {
        Self {
            k,
            count,
            data: vec![0.0; k * count],
        }
    }

    pub fn from_vectors(k: usize, vectors: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(k * vectors.len());
        for (e, v) in vectors.iter().enumerate() {
            if v.len() != k {
                return Err(Error::shape(format!("vector {e} of length {k}"), v.len()));
            }
            data.extend_from_slice(v);
        }
        Ok(Self {
            k,
            count: vectors.len(),
            data,
        })
    }

    fn random(k: usize, count: usize, stddev: f64, rng: &mut SeededRng) -> Self {
        let data = (0..k * count).map(|_| rng.gaussian(stddev)).collect();
        Self { k, count, data }
    }

    /// `(K, count)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.k, self.count)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn vector(&self, e: usize) -> &[f64] {
        &self.data[e * self.k..(e + 1) * self.k]
    }

    #[inline]
    pub fn vector_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.data[e * self.k..(e + 1) * self.k]
    }

    /// Entry at latent row `r`, entity column `e`.
    pub fn get(&self, r: usize, e: usize) -> f64 {
        self.data[e * self.k + r]
    }

    pub fn set(&mut self, r: usize, e: usize, v: f64) {
        self.data[e * self.k + r] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius_sq(&self) -> f64 {
        let mut s = 0.0;
        for v in &self.data {
            s += v * v;
        }
        s
    }

    fn axpy(&mut self, scale: f64, other: &LatentMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Reorder latent rows: new row `r` is old row `perm[r]`.
    pub fn permute_latent(&self, perm: &[usize]) -> Self {
        let mut out = Self::zeros(self.k, self.count);
        for e in 0..self.count {
            for (r, &src) in perm.iter().enumerate() {
                out.set(r, e, self.get(src, e));
            }
        }
        out
    }
}

/// Factors of all periods. The static model is the one-period case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalFactorSet {
    pub l1: Vec<LatentMatrix>,
    pub l2: Vec<LatentMatrix>,
    pub p: Vec<LatentMatrix>,
    pub a: LatentMatrix,
}

/// Partial derivatives of the loss, laid out like the factors they belong to.
pub type FactorGradients = TemporalFactorSet;

impl TemporalFactorSet {
    pub fn zeros(k: usize, dims: Dims) -> Self {
        Self {
            l1: vec![LatentMatrix::zeros(k, dims.locations); dims.periods],
            l2: vec![LatentMatrix::zeros(k, dims.locations); dims.periods],
            p: vec![LatentMatrix::zeros(k, dims.categories); dims.periods],
            a: LatentMatrix::zeros(k, dims.apps),
        }
    }

    pub fn k(&self) -> usize {
        self.a.k
    }

    pub fn periods(&self) -> usize {
        self.l1.len()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            locations: self.l1.first().map_or(0, LatentMatrix::count),
            apps: self.a.count,
            categories: self.p.first().map_or(0, LatentMatrix::count),
            periods: self.l1.len(),
        }
    }

    /// `l1 + l2` of location `i` in period `t`.
    pub fn location_vector(&self, i: usize, t: usize) -> Vec<f64> {
        self.l1[t]
            .vector(i)
            .iter()
            .zip(self.l2[t].vector(i))
            .map(|(a, b)| a + b)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().all(|m| m.data.iter().all(|v| v.is_finite()))
    }

    pub fn matrices(&self) -> impl Iterator<Item = &LatentMatrix> {
        self.l1
            .iter()
            .chain(&self.l2)
            .chain(&self.p)
            .chain(std::iter::once(&self.a))
    }

    pub fn matrices_mut(&mut self) -> impl Iterator<Item = &mut LatentMatrix> {
        self.l1
            .iter_mut()
            .chain(self.l2.iter_mut())
            .chain(self.p.iter_mut())
            .chain(std::iter::once(&mut self.a))
    }

    /// `self += scale * other`, matrix by matrix.
    pub fn add_scaled(&mut self, scale: f64, other: &TemporalFactorSet) {
        for (a, b) in self.matrices_mut().zip(other.matrices()) {
            a.axpy(scale, b);
        }
    }

    /// Apply the same latent-row permutation to every matrix.
    pub fn permute_latent(&self, perm: &[usize]) -> Self {
        Self {
            l1: self.l1.iter().map(|m| m.permute_latent(perm)).collect(),
            l2: self.l2.iter().map(|m| m.permute_latent(perm)).collect(),
            p: self.p.iter().map(|m| m.permute_latent(perm)).collect(),
            a: self.a.permute_latent(perm),
        }
    }

    fn check_against(&self, bundle: &ObservationBundle) -> Result<()> {
        let (want, have) = (bundle.dims(), self.dims());
        let consistent = want == have
            && self.l2.len() == have.periods
            && self.p.len() == have.periods
            && self
                .matrices()
                .all(|m| m.k == self.k())
            && self.l2.iter().all(|m| m.count == have.locations)
            && self.p.iter().all(|m| m.count == have.categories)
            && self.l1.iter().all(|m| m.count == have.locations);
        if !consistent {
            return Err(Error::shape(
                format!("factors for {want:?}"),
                format!("factors for {have:?}"),
            ));
        }
        Ok(())
    }
}

/// Zero-mean Gaussian initialization with `init_stddev`, drawn in the order
/// `A`, then per period `L1_t`, `L2_t`, `P_t`.
pub fn init_factors(dims: Dims, hyper: &HyperParams) -> TemporalFactorSet {
    let mut rng = SeededRng::new(hyper.seed);
    let (k, s) = (hyper.k, hyper.init_stddev);
    let a = LatentMatrix::random(k, dims.apps, s, &mut rng);
    let mut l1 = Vec::with_capacity(dims.periods);
    let mut l2 = Vec::with_capacity(dims.periods);
    let mut p = Vec::with_capacity(dims.periods);
    for _ in 0..dims.periods {
        l1.push(LatentMatrix::random(k, dims.locations, s, &mut rng));
        l2.push(LatentMatrix::random(k, dims.locations, s, &mut rng));
        p.push(LatentMatrix::random(k, dims.categories, s, &mut rng));
    }
    TemporalFactorSet { l1, l2, p, a }
}

fn location_sums(l1: &LatentMatrix, l2: &LatentMatrix) -> LatentMatrix {
    let mut out = l1.clone();
    out.axpy(1.0, l2);
    out
}

/// Loss of one period, excluding the temporal chain.
fn period_loss(
    x: &MaskedMatrix,
    y: &DenseMatrix,
    z: &DenseMatrix,
    l1: &LatentMatrix,
    l2: &LatentMatrix,
    p: &LatentMatrix,
    a: &LatentMatrix,
    hyper: &HyperParams,
) -> f64 {
    let loc = location_sums(l1, l2);
    let mut xs = 0.0;
    for (i, j, v) in x.observed() {
        let d = v - logistic(dot(loc.vector(i), a.vector(j)));
        xs += d * d;
    }
    let mut ys = 0.0;
    for i in 0..y.rows() {
        for k in 0..y.cols() {
            let d = y.get(i, k) - logistic(dot(l1.vector(i), p.vector(k)));
            ys += d * d;
        }
    }
    let mut zs = 0.0;
    for i in 0..z.rows() {
        for j in 0..z.cols() {
            let d = z.get(i, j) - logistic(dot(l2.vector(i), l2.vector(j)));
            zs += d * d;
        }
    }
    let data = 0.5 * xs + hyper.alpha / 2.0 * ys + hyper.beta / 2.0 * zs;
    let ridge = hyper.lambda_l1 / 2.0 * l1.frobenius_sq()
        + hyper.lambda_l2 / 2.0 * l2.frobenius_sq()
        + hyper.lambda_a / 2.0 * a.frobenius_sq()
        + hyper.lambda_p / 2.0 * p.frobenius_sq();
    data + ridge
}

fn diff_sq(a: &LatentMatrix, b: &LatentMatrix) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Full objective: per-period losses plus the temporal continuity chain.
/// The chain has no wraparound; period 0 has no predecessor.
pub fn loss(
    bundle: &ObservationBundle,
    factors: &TemporalFactorSet,
    hyper: &HyperParams,
) -> Result<f64> {
    factors.check_against(bundle)?;
    let periods = factors.periods();
    let mut total = 0.0;
    for t in 0..periods {
        total += period_loss(
            &bundle.x[t],
            &bundle.y,
            &bundle.z[t],
            &factors.l1[t],
            &factors.l2[t],
            &factors.p[t],
            &factors.a,
            hyper,
        );
    }
    let mut chain_l = 0.0;
    let mut chain_p = 0.0;
    for t in 1..periods {
        chain_l += diff_sq(&factors.l1[t], &factors.l1[t - 1]);
        chain_l += diff_sq(&factors.l2[t], &factors.l2[t - 1]);
        chain_p += diff_sq(&factors.p[t], &factors.p[t - 1]);
    }
    Ok(total + (hyper.lambda_1 / 2.0 * chain_l + hyper.lambda_2 / 2.0 * chain_p))
}

/// Location-app cell `(t, i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub t: usize,
    pub i: usize,
    pub j: usize,
}

/// One mini-batch: observed X cells plus the locations whose Y and Z rows are
/// included in this step.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub cells: &'a [Cell],
    pub locations: &'a [usize],
}

/// Analytic gradient of [`loss`]. With a batch, the X residuals are summed
/// over the batch cells and the Y/Z residuals over the batch locations'
/// rows; ridge and continuity terms are always complete. Without a batch the
/// result is the exact gradient of the full objective.
pub fn gradients(
    bundle: &ObservationBundle,
    factors: &TemporalFactorSet,
    hyper: &HyperParams,
    batch: Option<Batch<'_>>,
) -> Result<FactorGradients> {
    factors.check_against(bundle)?;
    let dims = bundle.dims();
    let k = factors.k();
    let mut grad = TemporalFactorSet::zeros(k, dims);
    let all_locations: Vec<usize>;
    let rows: &[usize] = match batch {
        Some(b) => b.locations,
        None => {
            all_locations = (0..dims.locations).collect();
            &all_locations
        }
    };

    for t in 0..dims.periods {
        let loc = location_sums(&factors.l1[t], &factors.l2[t]);
        let x_term = |i: usize, j: usize, v: f64, grad: &mut TemporalFactorSet| {
            let s = dot(loc.vector(i), factors.a.vector(j));
            let c = (logistic(s) - v) * logistic_deriv(s);
            let aj = factors.a.vector(j);
            for (g, &av) in grad.l1[t].vector_mut(i).iter_mut().zip(aj) {
                *g += c * av;
            }
            for (g, &av) in grad.l2[t].vector_mut(i).iter_mut().zip(aj) {
                *g += c * av;
            }
            for (g, &lv) in grad.a.vector_mut(j).iter_mut().zip(loc.vector(i)) {
                *g += c * lv;
            }
        };
        match batch {
            Some(b) => {
                for cell in b.cells.iter().filter(|c| c.t == t) {
                    let v = bundle.x[t].get(cell.i, cell.j).ok_or_else(|| {
                        Error::Invalid(format!("batch cell {cell:?} is not observed"))
                    })?;
                    x_term(cell.i, cell.j, v, &mut grad);
                }
            }
            None => {
                for (i, j, v) in bundle.x[t].observed() {
                    x_term(i, j, v, &mut grad);
                }
            }
        }

        let (l1, l2, p) = (&factors.l1[t], &factors.l2[t], &factors.p[t]);
        if hyper.alpha != 0.0 {
            for &i in rows {
                for kk in 0..dims.categories {
                    let s = dot(l1.vector(i), p.vector(kk));
                    let c = hyper.alpha * (logistic(s) - bundle.y.get(i, kk)) * logistic_deriv(s);
                    for (g, &pv) in grad.l1[t].vector_mut(i).iter_mut().zip(p.vector(kk)) {
                        *g += c * pv;
                    }
                    for (g, &lv) in grad.p[t].vector_mut(kk).iter_mut().zip(l1.vector(i)) {
                        *g += c * lv;
                    }
                }
            }
        }
        if hyper.beta != 0.0 {
            let z = &bundle.z[t];
            for &i in rows {
                for j in 0..dims.locations {
                    let s = dot(l2.vector(i), l2.vector(j));
                    let c = hyper.beta * (logistic(s) - z.get(i, j)) * logistic_deriv(s);
                    for (g, &uv) in grad.l2[t].vector_mut(i).iter_mut().zip(l2.vector(j)) {
                        *g += c * uv;
                    }
                    for (g, &uv) in grad.l2[t].vector_mut(j).iter_mut().zip(l2.vector(i)) {
                        *g += c * uv;
                    }
                }
            }
        }

        grad.l1[t].axpy(hyper.lambda_l1, l1);
        grad.l2[t].axpy(hyper.lambda_l2, l2);
        grad.p[t].axpy(hyper.lambda_p, p);
        grad.a.axpy(hyper.lambda_a, &factors.a);
    }

    for t in 1..dims.periods {
        for (which, weight) in [(0usize, hyper.lambda_1), (1, hyper.lambda_1), (2, hyper.lambda_2)] {
            let (cur, prev) = match which {
                0 => (&factors.l1[t], &factors.l1[t - 1]),
                1 => (&factors.l2[t], &factors.l2[t - 1]),
                _ => (&factors.p[t], &factors.p[t - 1]),
            };
            let mut d = cur.clone();
            d.axpy(-1.0, prev);
            let target = match which {
                0 => &mut grad.l1,
                1 => &mut grad.l2,
                _ => &mut grad.p,
            };
            target[t].axpy(weight, &d);
            target[t - 1].axpy(-weight, &d);
        }
    }
    Ok(grad)
}

/// Trained factors and the full-objective loss after every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub factors: TemporalFactorSet,
    pub initial_loss: f64,
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(self.initial_loss)
    }
}

/// All observed cells of the bundle in `(t, i, j)` order.
pub fn observed_cells(bundle: &ObservationBundle) -> Vec<Cell> {
    bundle
        .x
        .iter()
        .enumerate()
        .flat_map(|(t, x)| x.observed().map(move |(i, j, _)| Cell { t, i, j }))
        .collect()
}

/// Mini-batch gradient descent from [`init_factors`].
pub fn train(bundle: &ObservationBundle, hyper: &HyperParams) -> Result<TrainOutcome> {
    train_from(bundle, hyper, init_factors(bundle.dims(), hyper))
}

/// Mini-batch gradient descent with constant step from the given factors.
///
/// Each epoch shuffles the observed cells and the locations, splits both
/// into the same number of batches and takes one step per batch. A batch
/// size covering every cell gives plain full-gradient descent.
pub fn train_from(
    bundle: &ObservationBundle,
    hyper: &HyperParams,
    init: TemporalFactorSet,
) -> Result<TrainOutcome> {
    hyper.validate()?;
    bundle.validate()?;
    let mut factors = init;
    let initial_loss = loss(bundle, &factors, hyper)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: initial_loss,
        });
    }
    let mut cells = observed_cells(bundle);
    let m = bundle.dims().locations;
    let mut locations: Vec<usize> = (0..m).collect();
    let batches = match hyper.batch_size {
        Some(bs) if bs < cells.len() => cells.len().div_ceil(bs),
        _ => 1,
    };
    let mut rng = SeededRng::derived(hyper.seed, 1);
    let mut loss_trace = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        if batches == 1 {
            let g = gradients(bundle, &factors, hyper, None)?;
            factors.add_scaled(-hyper.learning_rate, &g);
        } else {
            rng.shuffle(&mut cells);
            rng.shuffle(&mut locations);
            let cell_chunk = cells.len().div_ceil(batches);
            let loc_chunk = m.div_ceil(batches).max(1);
            for b in 0..batches {
                let cs = &cells[(b * cell_chunk).min(cells.len())..((b + 1) * cell_chunk).min(cells.len())];
                let ls = &locations[(b * loc_chunk).min(m)..((b + 1) * loc_chunk).min(m)];
                let g = gradients(
                    bundle,
                    &factors,
                    hyper,
                    Some(Batch {
                        cells: cs,
                        locations: ls,
                    }),
                )?;
                factors.add_scaled(-hyper.learning_rate, &g);
            }
        }
        let l = loss(bundle, &factors, hyper)?;
        if !l.is_finite() {
            return Err(Error::Diverged { epoch, loss: l });
        }
        loss_trace.push(l);
    }
    Ok(TrainOutcome {
        factors,
        initial_loss,
        loss_trace,
    })
}

/// Raw scores `(l1 + l2)ᵀ a_j` of every app at location `i`, period `t`.
pub fn predict_scores(factors: &TemporalFactorSet, i: usize, t: usize) -> Result<Vec<f64>> {
    let dims = factors.dims();
    if t >= dims.periods {
        return Err(Error::OutOfRange {
            what: "period",
            index: t,
            bound: dims.periods,
        });
    }
    if i >= dims.locations {
        return Err(Error::OutOfRange {
            what: "location",
            index: i,
            bound: dims.locations,
        });
    }
    let l = factors.location_vector(i, t);
    Ok((0..dims.apps)
        .map(|j| dot(&l, factors.a.vector(j)))
        .collect())
}

/// [`predict_scores`] mapped through the logistic link, on the [0, 1] scale
/// of the preprocessed targets.
pub fn predict_usage(factors: &TemporalFactorSet, i: usize, t: usize) -> Result<Vec<f64>> {
    Ok(predict_scores(factors, i, t)?
        .into_iter()
        .map(logistic)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopN {
    pub apps: Vec<usize>,
    /// Fewer than `N` candidates were available.
    pub short: bool,
}

/// The `n` highest-scoring apps outside `excluded`, descending, ties by
/// ascending index.
pub fn top_n(scores: &[f64], n: usize, excluded: &[bool]) -> Result<TopN> {
    if n == 0 {
        return Err(Error::Invalid("N must be at least 1".into()));
    }
    let mut apps: Vec<usize> = (0..scores.len())
        .filter(|&j| !excluded.get(j).copied().unwrap_or(false))
        .collect();
    apps.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let short = apps.len() < n;
    apps.truncate(n);
    Ok(TopN { apps, short })
}

/// Objective of a single static period, computed from the
/// materialized reconstruction matrices.
pub fn static_loss(
    x: &MaskedMatrix,
    y: &DenseMatrix,
    z: &DenseMatrix,
    l1: &LatentMatrix,
    l2: &LatentMatrix,
    a: &LatentMatrix,
    p: &LatentMatrix,
    hyper: &HyperParams,
) -> Result<f64> {
    let loc = location_sums(l1, l2);
    let xhat = DenseMatrix::from_fn(loc.count, a.count, |i, j| {
        logistic(dot(loc.vector(i), a.vector(j)))
    });
    let yhat = DenseMatrix::from_fn(l1.count, p.count, |i, k| {
        logistic(dot(l1.vector(i), p.vector(k)))
    });
    let zhat = DenseMatrix::from_fn(l2.count, l2.count, |i, j| {
        logistic(dot(l2.vector(i), l2.vector(j)))
    });
    let xs = crate::numerics::masked_sq_error(x, &xhat)?;
    let ys = crate::numerics::masked_sq_error(&MaskedMatrix::fully_observed(y.clone()), &yhat)?;
    let zs = crate::numerics::masked_sq_error(&MaskedMatrix::fully_observed(z.clone()), &zhat)?;
    let data = 0.5 * xs + hyper.alpha / 2.0 * ys + hyper.beta / 2.0 * zs;
    let ridge = hyper.lambda_l1 / 2.0 * l1.frobenius_sq()
        + hyper.lambda_l2 / 2.0 * l2.frobenius_sq()
        + hyper.lambda_a / 2.0 * a.frobenius_sq()
        + hyper.lambda_p / 2.0 * p.frobenius_sq();
    Ok(data + ridge)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: String,
    pub k: usize,
    pub locations: usize,
    pub apps: usize,
    pub categories: usize,
    pub periods: usize,
    pub hyper: HyperParams,
    pub seed: u64,
    pub epochs: usize,
    /// Final loss, written with full precision.
    pub final_loss: String,
    pub location_ids: Vec<String>,
    pub app_ids: Vec<String>,
    pub category_names: Vec<String>,
    pub files: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Entity ids labelling checkpoint columns.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    pub location_ids: Vec<String>,
    pub app_ids: Vec<String>,
    pub category_names: Vec<String>,
}

impl Vocabulary {
    pub fn of(bundle: &ObservationBundle) -> Self {
        Self {
            location_ids: bundle.location_ids.clone(),
            app_ids: bundle.app_ids.clone(),
            category_names: bundle.category_names.clone(),
        }
    }

    fn or_default(&self, dims: Dims) -> Self {
        let gen = |prefix: &str, n: usize, given: &[String]| {
            if given.len() == n {
                given.to_vec()
            } else {
                (0..n).map(|e| format!("{prefix}{e}")).collect()
            }
        };
        Self {
            location_ids: gen("loc", dims.locations, &self.location_ids),
            app_ids: gen("app", dims.apps, &self.app_ids),
            category_names: gen("cat", dims.categories, &self.category_names),
        }
    }
}

fn write_latent(path: &Path, m: &LatentMatrix, ids: &[String]) -> Result<()> {
    let rows: Vec<String> = (0..m.k).map(|r| format!("k{r}")).collect();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_matrix_csv(f, &rows, ids, |r, e| Some(m.get(r, e)))
}

fn read_latent(path: &Path) -> Result<LatentMatrix> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mf = read_matrix_csv(f)?;
    let dense = mf.to_dense()?;
    let mut out = LatentMatrix::zeros(dense.rows(), dense.cols());
    for r in 0..dense.rows() {
        for e in 0..dense.cols() {
            out.set(r, e, dense.get(r, e));
        }
    }
    Ok(out)
}

/// Write `manifest.json` plus one CSV (`K` rows, one column per entity) per
/// factor matrix.
pub fn write_checkpoint(
    dir: &Path,
    model: &str,
    factors: &TemporalFactorSet,
    hyper: &HyperParams,
    epochs: usize,
    final_loss: f64,
    vocab: &Vocabulary,
    notes: Vec<String>,
) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = factors.dims();
    let vocab = vocab.or_default(dims);
    let mut files = vec!["a.csv".to_string()];
    write_latent(&dir.join("a.csv"), &factors.a, &vocab.app_ids)?;
    for t in 0..dims.periods {
        for (name, m, ids) in [
            ("l1", &factors.l1[t], &vocab.location_ids),
            ("l2", &factors.l2[t], &vocab.location_ids),
            ("p", &factors.p[t], &vocab.category_names),
        ] {
            let f = format!("{name}_{t}.csv");
            write_latent(&dir.join(&f), m, ids)?;
            files.push(f);
        }
    }
    let manifest = CheckpointManifest {
        model: model.to_string(),
        k: factors.k(),
        locations: dims.locations,
        apps: dims.apps,
        categories: dims.categories,
        periods: dims.periods,
        hyper: hyper.clone(),
        seed: hyper.seed,
        epochs,
        final_loss: format_real(final_loss),
        location_ids: vocab.location_ids,
        app_ids: vocab.app_ids,
        category_names: vocab.category_names,
        files,
        notes,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_checkpoint(dir: &Path) -> Result<(TemporalFactorSet, CheckpointManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    let a = read_latent(&dir.join("a.csv"))?;
    let mut l1 = Vec::new();
    let mut l2 = Vec::new();
    let mut p = Vec::new();
    for t in 0..manifest.periods {
        l1.push(read_latent(&dir.join(format!("l1_{t}.csv")))?);
        l2.push(read_latent(&dir.join(format!("l2_{t}.csv")))?);
        p.push(read_latent(&dir.join(format!("p_{t}.csv")))?);
    }
    let factors = TemporalFactorSet { l1, l2, p, a };
    let dims = factors.dims();
    if factors.k() != manifest.k
        || dims.locations != manifest.locations
        || dims.apps != manifest.apps
        || dims.categories != manifest.categories
    {
        return Err(Error::shape(
            format!(
                "K={} {}x{}x{}",
                manifest.k, manifest.locations, manifest.apps, manifest.categories
            ),
            format!("K={} {dims:?}", factors.k()),
        ));
    }
    Ok((factors, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cell_bundle() -> ObservationBundle {
        ObservationBundle {
            location_ids: vec!["s".into()],
            app_ids: vec!["a".into()],
            category_names: vec!["c".into()],
            x: vec![MaskedMatrix::from_options(&[vec![Some(1.0)]]).unwrap()],
            z: vec![DenseMatrix::from_rows(&[vec![1.0]]).unwrap()],
            y: DenseMatrix::from_rows(&[vec![0.0]]).unwrap(),
        }
    }

    fn zero_weights() -> HyperParams {
        HyperParams {
            k: 2,
            alpha: 1.0,
            beta: 1.0,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            lambda_a: 0.0,
            lambda_p: 0.0,
            lambda_1: 0.0,
            lambda_2: 0.0,
            ..HyperParams::default()
        }
    }

    #[test]
    fn hand_loss_of_zero_factors() {
        let b = one_cell_bundle();
        let f = TemporalFactorSet::zeros(2, b.dims());
        let l = loss(&b, &f, &zero_weights()).unwrap();
        assert!((l - 0.375).abs() < 1e-15);
        let ridge = HyperParams {
            lambda_l1: 1.0,
            lambda_l2: 2.0,
            lambda_a: 0.5,
            lambda_p: 3.0,
            ..zero_weights()
        };
        assert_eq!(loss(&b, &f, &ridge).unwrap(), l);
    }

    #[test]
    fn zero_factors_are_stationary() {
        let b = one_cell_bundle();
        let f = TemporalFactorSet::zeros(2, b.dims());
        let h = HyperParams {
            lambda_l1: 0.3,
            ..zero_weights()
        };
        let g = gradients(&b, &f, &h, None).unwrap();
        assert!(g.matrices().all(|m| m.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn continuity_gradient_on_first_period() {
        let mut b = one_cell_bundle();
        b.x.push(MaskedMatrix::empty(1, 1));
        b.z.push(DenseMatrix::from_rows(&[vec![1.0]]).unwrap());
        let mut f = TemporalFactorSet::zeros(2, b.dims());
        f.l1[0] = LatentMatrix::from_vectors(2, &[vec![0.7, -0.2]]).unwrap();
        f.l1[1] = LatentMatrix::from_vectors(2, &[vec![0.1, 0.4]]).unwrap();
        let h = HyperParams {
            alpha: 0.0,
            beta: 0.0,
            lambda_1: 1.5,
            ..zero_weights()
        };
        // A = 0 and P = 0 remove every data term's dependence on L1
        let g = gradients(&b, &f, &h, None).unwrap();
        let want = [1.5 * (0.7 - 0.1), 1.5 * (-0.2 - 0.4)];
        for (got, w) in g.l1[0].vector(0).iter().zip(want) {
            assert!((got - w).abs() < 1e-15);
        }
        for (got, w) in g.l1[1].vector(0).iter().zip(want) {
            assert!((got + w).abs() < 1e-15);
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let dims = Dims {
            locations: 2,
            apps: 2,
            categories: 2,
            periods: 2,
        };
        let h = HyperParams {
            k: 3,
            seed: 11,
            ..HyperParams::default()
        };
        let f = init_factors(dims, &h);
        assert_eq!(f.a.shape(), (3, 2));
        for t in 0..2 {
            assert_eq!(f.l1[t].shape(), (3, 2));
            assert_eq!(f.l2[t].shape(), (3, 2));
            assert_eq!(f.p[t].shape(), (3, 2));
        }
        assert_eq!(f, init_factors(dims, &h));
        let zero = init_factors(
            dims,
            &HyperParams {
                init_stddev: 0.0,
                ..h
            },
        );
        assert!(zero.matrices().all(|m| m.frobenius_sq() == 0.0));
    }

    #[test]
    fn scores_and_ranking() {
        let dims = Dims {
            locations: 1,
            apps: 2,
            categories: 1,
            periods: 1,
        };
        let mut f = TemporalFactorSet::zeros(2, dims);
        f.l1[0] = LatentMatrix::from_vectors(2, &[vec![1.0, 0.0]]).unwrap();
        f.a = LatentMatrix::from_vectors(2, &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = predict_scores(&f, 0, 0).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        assert_eq!(top_n(&s, 1, &[]).unwrap().apps, vec![0]);
        let zero = TemporalFactorSet::zeros(2, dims);
        assert_eq!(predict_scores(&zero, 0, 0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(predict_usage(&zero, 0, 0).unwrap(), vec![0.5, 0.5]);
        assert!(predict_scores(&f, 1, 0).is_err());
        assert!(predict_scores(&f, 0, 1).is_err());
    }

    #[test]
    fn top_n_examples() {
        let s = [0.1, 0.9, 0.5];
        assert_eq!(top_n(&s, 2, &[]).unwrap().apps, vec![1, 2]);
        assert_eq!(top_n(&[0.3; 3], 2, &[]).unwrap().apps, vec![0, 1]);
        assert_eq!(
            top_n(&s, 2, &[false, true, false]).unwrap().apps,
            vec![2, 0]
        );
        let short = top_n(&s, 5, &[]).unwrap();
        assert!(short.short);
        assert_eq!(short.apps.len(), 3);
        assert!(top_n(&s, 0, &[]).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_factors() {
        let b = one_cell_bundle();
        let h = HyperParams {
            epochs: 0,
            seed: 5,
            ..HyperParams::default()
        };
        let out = train(&b, &h).unwrap();
        assert_eq!(out.factors, init_factors(b.dims(), &h));
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let b = one_cell_bundle();
        let h = HyperParams {
            learning_rate: 1e300,
            lambda_a: 1.0,
            lambda_l1: 1.0,
            init_stddev: 1.0,
            epochs: 5,
            ..HyperParams::default()
        };
        assert!(matches!(train(&b, &h), Err(Error::Diverged { .. })));
    }

    #[test]
    fn hyper_validation() {
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { k: 0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { alpha: -1.0, ..Default::default() }.validate().is_err());
        assert!(HyperParams { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dims = Dims {
            locations: 3,
            apps: 4,
            categories: 2,
            periods: 2,
        };
        let h = HyperParams {
            k: 3,
            seed: 9,
            init_stddev: 0.7,
            ..HyperParams::default()
        };
        let f = init_factors(dims, &h);
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(dir.path(), "model", &f, &h, 0, 1.25, &Vocabulary::default(), vec![])
            .unwrap();
        let (back, manifest) = read_checkpoint(dir.path()).unwrap();
        assert_eq!(manifest.hyper, h);
        for i in 0..3 {
            for t in 0..2 {
                let a = predict_scores(&f, i, t).unwrap();
                let b = predict_scores(&back, i, t).unwrap();
                assert_eq!(
                    a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                    b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                );
            }
        }
    }
}
