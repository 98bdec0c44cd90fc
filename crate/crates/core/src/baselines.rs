//! Comparison predictors: app-only popularity (AOP), per-app logistic-link
//! regression on POI features (MLR), and the factorization model restricted
//! to the location-app matrix (SMF) or stripped of time (CMF).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::CountTensors;
use crate::model::HyperParams;
use crate::numerics::{dot, logistic, logistic_deriv, DenseMatrix, MaskedMatrix, SeededRng};
use crate::preprocessing::{build_location_correlation, normalize_log_usage, ObservationBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Temporal transfer-learning model.
    Model,
    Cmf,
    Smf,
    Mlr,
    Aop,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Model,
        ModelKind::Cmf,
        ModelKind::Smf,
        ModelKind::Mlr,
        ModelKind::Aop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Model => "model",
            ModelKind::Cmf => "cmf",
            ModelKind::Smf => "smf",
            ModelKind::Mlr => "mlr",
            ModelKind::Aop => "aop",
        }
    }

    pub fn is_factorization(self) -> bool {
        matches!(self, ModelKind::Model | ModelKind::Cmf | ModelKind::Smf)
    }

    /// Whether the model trains on a single merged period.
    pub fn collapses_periods(self) -> bool {
        matches!(self, ModelKind::Cmf | ModelKind::Smf)
    }

    pub fn estimates_usage(self) -> bool {
        self != ModelKind::Aop
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Invalid(format!("unknown model {s:?}")))
    }
}

/// Hyperparameters the factorization trainer uses for `kind`.
pub fn baseline_config(kind: ModelKind, base: &HyperParams) -> HyperParams {
    match kind {
        ModelKind::Smf => HyperParams {
            alpha: 0.0,
            beta: 0.0,
            ..base.clone()
        },
        _ => base.clone(),
    }
}

/// Merge all periods of a (training) bundle into one.
///
/// With the source counts available, the counts of each cell's observed
/// periods are summed and X is rebuilt from the sums; Z is rebuilt from the
/// per-location union of user sets. Without counts, X is the mean of the
/// observed per-period values and Z the mean over periods.
pub fn collapse_periods(
    bundle: &ObservationBundle,
    counts: Option<&CountTensors>,
) -> Result<ObservationBundle> {
    let d = bundle.dims();
    if d.periods == 1 {
        return Ok(bundle.clone());
    }
    let (x, z) = match counts {
        Some(c) => {
            if c.period_count() != d.periods || c.location_count() != d.locations {
                return Err(Error::shape(
                    format!("counts for {d:?}"),
                    format!("{} periods x {} locations", c.period_count(), c.location_count()),
                ));
            }
            let mut summed = DenseMatrix::zeros(d.locations, d.apps);
            for t in 0..d.periods {
                for (i, j, _) in bundle.x[t].observed() {
                    let v = summed.get(i, j) + c.r[t].get(i, j) as f64;
                    summed.set(i, j, v);
                }
            }
            let x = normalize_log_usage(&summed)?;
            let users: Vec<BTreeSet<String>> = (0..d.locations)
                .map(|i| {
                    c.users
                        .iter()
                        .flat_map(|u| u[i].iter().cloned())
                        .collect()
                })
                .collect();
            (x, build_location_correlation(&users))
        }
        None => {
            let mut sum = DenseMatrix::zeros(d.locations, d.apps);
            let mut seen = vec![0usize; d.locations * d.apps];
            for xt in &bundle.x {
                for (i, j, v) in xt.observed() {
                    sum.set(i, j, sum.get(i, j) + v);
                    seen[i * d.apps + j] += 1;
                }
            }
            let mut x = MaskedMatrix::empty(d.locations, d.apps);
            for i in 0..d.locations {
                for j in 0..d.apps {
                    let s = seen[i * d.apps + j];
                    if s > 0 {
                        x.observe(i, j, sum.get(i, j) / s as f64);
                    }
                }
            }
            let z = DenseMatrix::from_fn(d.locations, d.locations, |i, j| {
                bundle.z.iter().map(|zt| zt.get(i, j)).sum::<f64>() / d.periods as f64
            });
            (x, z)
        }
    };
    Ok(ObservationBundle {
        location_ids: bundle.location_ids.clone(),
        app_ids: bundle.app_ids.clone(),
        category_names: bundle.category_names.clone(),
        x: vec![x],
        z: vec![z],
        y: bundle.y.clone(),
    })
}

/// Global app ranking by total training usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AopModel {
    pub ranking: Vec<usize>,
    pub totals: Vec<f64>,
}

impl AopModel {
    /// Rank by descending total, ties by ascending app index.
    pub fn from_totals(totals: Vec<f64>) -> Self {
        let mut ranking: Vec<usize> = (0..totals.len()).collect();
        ranking.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
        Self { ranking, totals }
    }

    /// First `n` ranked apps outside `excluded`.
    pub fn top_n(&self, n: usize, excluded: &[bool]) -> Vec<usize> {
        self.ranking
            .iter()
            .copied()
            .filter(|&j| !excluded.get(j).copied().unwrap_or(false))
            .take(n)
            .collect()
    }

    /// Scores consistent with the ranking (higher is better), for reuse of
    /// the generic top-N path.
    pub fn scores(&self) -> Vec<f64> {
        let n = self.ranking.len();
        let mut s = vec![0.0; n];
        for (rank, &j) in self.ranking.iter().enumerate() {
            s[j] = (n - rank) as f64;
        }
        s
    }
}

/// Column totals over every observed training cell of every period.
pub fn fit_aop(training: &[MaskedMatrix]) -> AopModel {
    let n = training.first().map_or(0, MaskedMatrix::cols);
    let mut totals = vec![0.0; n];
    for x in training {
        for (_, j, v) in x.observed() {
            totals[j] += v;
        }
    }
    AopModel::from_totals(totals)
}

/// AOP from raw usage counts summed over all periods.
pub fn fit_aop_counts(counts: &CountTensors) -> AopModel {
    AopModel::from_totals(counts.app_totals().into_iter().map(|c| c as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub init_stddev: f64,
    pub seed: u64,
}

impl MlrSettings {
    pub fn from_hyper(h: &HyperParams) -> Self {
        Self {
            learning_rate: h.learning_rate,
            epochs: h.epochs,
            init_stddev: h.init_stddev,
            seed: h.seed,
        }
    }
}

/// One weight vector per app: `l` POI weights then the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlrModel {
    pub weights: Vec<Vec<f64>>,
}

impl MlrModel {
    fn raw(w: &[f64], features: &[f64]) -> f64 {
        let l = features.len();
        dot(&w[..l], features) + w[l]
    }

    /// Raw linear scores of every app for one POI feature row.
    pub fn scores(&self, features: &[f64]) -> Vec<f64> {
        self.weights.iter().map(|w| Self::raw(w, features)).collect()
    }

    /// Usage estimates on the [0, 1] scale.
    pub fn usage(&self, features: &[f64]) -> Vec<f64> {
        self.scores(features).into_iter().map(logistic).collect()
    }
}

/// Fit each app independently: minimize the mean of
/// `(X_ij - g(wᵀy_i + b))²` over the app's observed training cells of all
/// periods, by full-batch gradient descent. Apps never observed keep
/// `w = 0, b = 0`.
pub fn fit_mlr(y: &DenseMatrix, training: &[MaskedMatrix], settings: &MlrSettings) -> Result<MlrModel> {
    let l = y.cols();
    let n = training.first().map_or(0, MaskedMatrix::cols);
    for x in training {
        if x.rows() != y.rows() || x.cols() != n {
            return Err(Error::shape(
                format!("X {}x{n}", y.rows()),
                format!("{:?}", x.shape()),
            ));
        }
    }
    let mut per_app: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for x in training {
        for (i, j, v) in x.observed() {
            per_app[j].push((i, v));
        }
    }
    let mut weights = Vec::with_capacity(n);
    for (j, obs) in per_app.iter().enumerate() {
        let mut w = vec![0.0; l + 1];
        if obs.is_empty() {
            weights.push(w);
            continue;
        }
        let mut rng = SeededRng::derived(settings.seed, j as u64);
        for v in w.iter_mut().take(l) {
            *v = rng.gaussian(settings.init_stddev);
        }
        let scale = 1.0 / obs.len() as f64;
        let mut grad = vec![0.0; l + 1];
        for _ in 0..settings.epochs {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &(i, target) in obs {
                let features = y.row(i);
                let s = MlrModel::raw(&w, features);
                let c = (logistic(s) - target) * logistic_deriv(s) * scale;
                for (g, f) in grad.iter_mut().zip(features) {
                    *g += c * f;
                }
                grad[l] += c;
            }
            for (wv, g) in w.iter_mut().zip(&grad) {
                *wv -= settings.learning_rate * g;
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Invalid(format!("MLR diverged for app {j}")));
            }
        }
        weights.push(w);
    }
    Ok(MlrModel { weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loss, train};
    use crate::synth::{generate, SyntheticConfig};

    #[test]
    fn aop_rankings() {
        assert_eq!(AopModel::from_totals(vec![5.0, 10.0, 1.0]).ranking, vec![1, 0, 2]);
        assert_eq!(AopModel::from_totals(vec![2.0; 3]).ranking, vec![0, 1, 2]);
        assert_eq!(AopModel::from_totals(vec![4.0]).ranking, vec![0]);
        let x = MaskedMatrix::from_options(&[
            vec![Some(0.5), Some(1.0), None],
            vec![None, Some(0.2), Some(0.1)],
        ])
        .unwrap();
        let aop = fit_aop(&[x]);
        assert_eq!(aop.ranking, vec![1, 0, 2]);
        assert_eq!(aop.top_n(2, &[false, true, false]), vec![0, 2]);
    }

    #[test]
    fn aop_ignores_location() {
        let aop = AopModel::from_totals(vec![3.0, 1.0, 2.0]);
        let s = aop.scores();
        assert_eq!(crate::model::top_n(&s, 2, &[]).unwrap().apps, aop.top_n(2, &[]));
    }

    #[test]
    fn mlr_unobserved_app_predicts_half() {
        let y = DenseMatrix::from_rows(&[vec![0.3, 0.1], vec![0.0, 0.7]]).unwrap();
        let x = MaskedMatrix::from_options(&[vec![Some(0.9), None], vec![Some(0.1), None]]).unwrap();
        let settings = MlrSettings {
            learning_rate: 0.5,
            epochs: 50,
            init_stddev: 0.1,
            seed: 1,
        };
        let model = fit_mlr(&y, &[x], &settings).unwrap();
        assert_eq!(model.usage(y.row(0))[1], 0.5);
        assert_eq!(model.usage(y.row(1))[1], 0.5);
    }

    #[test]
    fn mlr_bias_only_reaches_optimum() {
        let c = 0.8_f64;
        let y = DenseMatrix::zeros(4, 3);
        let x = MaskedMatrix::fully_observed(DenseMatrix::from_fn(4, 1, |_, _| logistic(c)));
        let settings = MlrSettings {
            learning_rate: 4.0,
            epochs: 5000,
            init_stddev: 0.0,
            seed: 0,
        };
        let model = fit_mlr(&y, &[x], &settings).unwrap();
        assert!((model.usage(y.row(0))[0] - logistic(c)).abs() < 1e-6);
    }

    #[test]
    fn mlr_duplicated_locations_agree() {
        let y = DenseMatrix::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1], vec![0.9, 0.0]]).unwrap();
        let x = MaskedMatrix::from_options(&[
            vec![Some(0.9), Some(0.2)],
            vec![Some(0.9), Some(0.2)],
            vec![Some(0.1), None],
        ])
        .unwrap();
        let settings = MlrSettings {
            learning_rate: 0.5,
            epochs: 100,
            init_stddev: 0.1,
            seed: 2,
        };
        let model = fit_mlr(&y, &[x], &settings).unwrap();
        assert_eq!(model.scores(y.row(0)), model.scores(y.row(1)));
    }

    #[test]
    fn smf_config_drops_transfer_terms() {
        let base = HyperParams::default();
        let smf = baseline_config(ModelKind::Smf, &base);
        assert_eq!((smf.alpha, smf.beta), (0.0, 0.0));
        assert_eq!(baseline_config(ModelKind::Model, &base), base);
        assert_eq!(baseline_config(ModelKind::Cmf, &base), base);
        assert!(ModelKind::Cmf.collapses_periods() && ModelKind::Smf.collapses_periods());
        assert!(!ModelKind::Model.collapses_periods());
    }

    #[test]
    fn smf_is_blind_to_y_and_z() {
        let cfg = SyntheticConfig {
            locations: 8,
            apps: 6,
            categories: 3,
            periods: 1,
            k_true: 2,
            density: 0.5,
            seed: 8,
            ..SyntheticConfig::default()
        };
        let city = generate(&cfg).unwrap();
        let mut scrambled = city.bundle.clone();
        scrambled.y = DenseMatrix::from_fn(8, 3, |i, j| ((i * 7 + j * 3) % 5) as f64 / 5.0);
        scrambled.z[0] = DenseMatrix::from_fn(8, 8, |i, j| if i == j { 1.0 } else { 0.3 });
        let h = baseline_config(
            ModelKind::Smf,
            &HyperParams {
                k: 3,
                epochs: 30,
                seed: 4,
                ..HyperParams::default()
            },
        );
        let a = train(&city.bundle, &h).unwrap();
        let b = train(&scrambled, &h).unwrap();
        assert_eq!(a.factors, b.factors);
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(
            loss(&city.bundle, &a.factors, &h).unwrap(),
            loss(&scrambled, &a.factors, &h).unwrap()
        );
    }

    #[test]
    fn collapse_without_counts_averages() {
        let cfg = SyntheticConfig {
            locations: 5,
            apps: 4,
            categories: 2,
            periods: 3,
            k_true: 2,
            seed: 1,
            ..SyntheticConfig::default()
        };
        let city = generate(&cfg).unwrap();
        let merged = collapse_periods(&city.bundle, None).unwrap();
        assert_eq!(merged.dims().periods, 1);
        let want = (0..3).map(|t| city.bundle.x[t].get(2, 1).unwrap()).sum::<f64>() / 3.0;
        assert!((merged.x[0].get(2, 1).unwrap() - want).abs() < 1e-15);
        merged.validate().unwrap();
    }

    #[test]
    fn model_kind_names_parse() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svd".parse::<ModelKind>().is_err());
    }
}
