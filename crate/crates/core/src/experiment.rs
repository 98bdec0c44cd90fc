//! Experiment protocols: every (sweep value, model) cell is split, trained,
//! predicted and scored, and the results are collected into a report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    baseline_config, collapse_periods, fit_aop, fit_mlr, AopModel, MlrModel, MlrSettings, ModelKind,
};
use crate::error::{Error, Result};
use crate::eval::{
    merge_locations, neighbor_merge_map, split, topn_accuracy, topn_hitrate, usage_rmse, Dataset,
    Split, SplitMode, SplitSpec,
};
use crate::model::{predict_scores, top_n, train, HyperParams, TemporalFactorSet};
use crate::numerics::{logistic, DenseMatrix, MaskedMatrix, SeededRng};
use crate::preprocessing::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    Sparsity,
    Users,
    Resolution,
    ColdStart,
    Exclusion,
    ParamSweep,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::Sparsity,
        ExperimentName::Users,
        ExperimentName::Resolution,
        ExperimentName::ColdStart,
        ExperimentName::Exclusion,
        ExperimentName::ParamSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentName::Sparsity => "sparsity",
            ExperimentName::Users => "users",
            ExperimentName::Resolution => "resolution",
            ExperimentName::ColdStart => "cold-start",
            ExperimentName::Exclusion => "exclusion",
            ExperimentName::ParamSweep => "param-sweep",
        }
    }

    /// Sweep used when the config lists none.
    pub fn default_sweep(self) -> Vec<f64> {
        match self {
            ExperimentName::Sparsity => vec![0.1, 0.2, 0.3, 0.4, 0.5],
            ExperimentName::Users => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            ExperimentName::Resolution => vec![1.0, 2.0, 4.0],
            ExperimentName::ColdStart => vec![0.1],
            ExperimentName::Exclusion => vec![0.0, 5.0, 10.0, 20.0, 30.0],
            ExperimentName::ParamSweep => Vec::new(),
        }
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentName::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub models: Vec<ModelKind>,
    /// Swept values; empty means the experiment's default sweep.
    pub sweep: Vec<f64>,
    /// Hyperparameter swept by `param-sweep`.
    pub sweep_param: Option<String>,
    /// Split used by every experiment; the swept quantity overrides its
    /// ratio (sparsity, users, cold-start) or exclusion count (exclusion).
    pub split: SplitSpec,
    pub top_n: Vec<usize>,
    pub hyper: HyperParams,
    /// MLR optimizer; defaults to the factorization settings.
    pub mlr: Option<MlrSettings>,
    /// Master seed for the per-cell training seeds.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            models: ModelKind::ALL.to_vec(),
            sweep: Vec::new(),
            sweep_param: None,
            split: SplitSpec::default(),
            top_n: vec![1, 5, 10],
            hyper: HyperParams::default(),
            mlr: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn resolved_sweep(&self, name: ExperimentName) -> Vec<f64> {
        if self.sweep.is_empty() {
            name.default_sweep()
        } else {
            self.sweep.clone()
        }
    }

    pub fn validate(&self, name: ExperimentName) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Invalid("no models listed".into()));
        }
        if self.top_n.is_empty() || self.top_n.contains(&0) {
            return Err(Error::Invalid("top_n needs values >= 1".into()));
        }
        if self.resolved_sweep(name).is_empty() {
            return Err(Error::Invalid(format!("{} needs sweep values", name.name())));
        }
        if name == ExperimentName::ParamSweep {
            let p = self
                .sweep_param
                .as_deref()
                .ok_or_else(|| Error::Invalid("param-sweep needs sweep_param".into()))?;
            with_param(&self.hyper, p, 1.0)?;
        }
        self.hyper.validate()
    }
}

/// `base` with the named hyperparameter set to `value`.
pub fn with_param(base: &HyperParams, name: &str, value: f64) -> Result<HyperParams> {
    let mut h = base.clone();
    let as_count = || -> Result<usize> {
        if value >= 0.0 && value.fract() == 0.0 {
            Ok(value as usize)
        } else {
            Err(Error::Invalid(format!("{name} needs a whole number, got {value}")))
        }
    };
    match name {
        "k" => h.k = as_count()?,
        "epochs" => h.epochs = as_count()?,
        "alpha" => h.alpha = value,
        "beta" => h.beta = value,
        "lambda_l1" => h.lambda_l1 = value,
        "lambda_l2" => h.lambda_l2 = value,
        "lambda_a" => h.lambda_a = value,
        "lambda_p" => h.lambda_p = value,
        "lambda_1" => h.lambda_1 = value,
        "lambda_2" => h.lambda_2 = value,
        "learning_rate" => h.learning_rate = value,
        "init_stddev" => h.init_stddev = value,
        _ => return Err(Error::Invalid(format!("unknown hyperparameter {name:?}"))),
    }
    Ok(h)
}

/// A fitted predictor of any kind.
#[derive(Debug, Clone)]
pub enum Predictor {
    /// Factorization model; a single period is used for every period when
    /// the model was trained on collapsed data.
    Factors(TemporalFactorSet),
    Aop(AopModel),
    Mlr { model: MlrModel, y: DenseMatrix },
}

impl Predictor {
    /// Ranking scores of every app at location `i`, period `t`.
    pub fn scores(&self, i: usize, t: usize) -> Result<Vec<f64>> {
        match self {
            Predictor::Factors(f) => predict_scores(f, i, t.min(f.periods() - 1)),
            Predictor::Aop(a) => Ok(a.scores()),
            Predictor::Mlr { model, y } => Ok(model.scores(y.row(i))),
        }
    }

    /// Usage estimates on the [0, 1] scale; `None` for AOP.
    pub fn usage(&self, i: usize, t: usize) -> Result<Option<Vec<f64>>> {
        match self {
            Predictor::Aop(_) => Ok(None),
            _ => Ok(Some(self.scores(i, t)?.into_iter().map(logistic).collect())),
        }
    }
}

/// Fit `kind` on the training side of `split`. `hyper.seed` seeds both the
/// factorization and MLR initializations.
pub fn fit_predictor(
    kind: ModelKind,
    split: &Split,
    hyper: &HyperParams,
    mlr: Option<&MlrSettings>,
) -> Result<Predictor> {
    match kind {
        ModelKind::Aop => Ok(Predictor::Aop(fit_aop(&split.train.x))),
        ModelKind::Mlr => {
            let mut settings = mlr.cloned().unwrap_or_else(|| MlrSettings::from_hyper(hyper));
            settings.seed = hyper.seed;
            Ok(Predictor::Mlr {
                model: fit_mlr(&split.train.y, &split.train.x, &settings)?,
                y: split.train.y.clone(),
            })
        }
        _ => {
            let h = baseline_config(kind, hyper);
            let bundle = if kind.collapses_periods() {
                collapse_periods(&split.train, split.train_counts.as_ref())?
            } else {
                split.train.clone()
            };
            Ok(Predictor::Factors(train(&bundle, &h)?.factors))
        }
    }
}

/// Held-out cells of one `(period, location)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TestUnit {
    pub t: usize,
    pub i: usize,
    pub apps: Vec<usize>,
    pub values: Vec<f64>,
}

impl TestUnit {
    /// True Top-N: held-out apps by descending value, ties by ascending
    /// index.
    pub fn truth(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.apps.len()).collect();
        order.sort_by(|&a, &b| {
            self.values[b]
                .total_cmp(&self.values[a])
                .then(self.apps[a].cmp(&self.apps[b]))
        });
        order.into_iter().take(n).map(|k| self.apps[k]).collect()
    }
}

/// Every `(t, i)` with at least one held-out cell, in `(t, i)` order.
pub fn test_units(test: &[MaskedMatrix]) -> Vec<TestUnit> {
    let mut units = Vec::new();
    for (t, x) in test.iter().enumerate() {
        for i in 0..x.rows() {
            let (apps, values): (Vec<usize>, Vec<f64>) = x.observed_in_row(i).unzip();
            if !apps.is_empty() {
                units.push(TestUnit { t, i, apps, values });
            }
        }
    }
    units
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_units: usize,
    /// One value per entry of the requested `top_n` list.
    pub hitrate: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// `None` when the predictor gives no usage estimates.
    pub rmse: Option<f64>,
}

/// Score a predictor on held-out cells. Every app is a Top-N candidate.
pub fn evaluate(predictor: &Predictor, test: &[MaskedMatrix], top: &[usize]) -> Result<Metrics> {
    let units = test_units(test);
    if units.is_empty() {
        return Err(Error::Invalid("no held-out cells".into()));
    }
    let max_n = top.iter().copied().max().unwrap_or(1);
    let mut preds = Vec::with_capacity(units.len());
    let mut truth_v = Vec::new();
    let mut pred_v = Vec::new();
    let mut has_usage = true;
    for u in &units {
        let scores = predictor.scores(u.i, u.t)?;
        preds.push(top_n(&scores, max_n, &[])?.apps);
        match predictor.usage(u.i, u.t)? {
            Some(usage) => {
                truth_v.push(u.values.clone());
                pred_v.push(u.apps.iter().map(|&j| usage[j]).collect());
            }
            None => has_usage = false,
        }
    }
    let mut hitrate = Vec::with_capacity(top.len());
    let mut accuracy = Vec::with_capacity(top.len());
    for &n in top {
        let truth: Vec<Vec<usize>> = units.iter().map(|u| u.truth(n)).collect();
        let pred: Vec<Vec<usize>> = preds.iter().map(|p| p[..n.min(p.len())].to_vec()).collect();
        hitrate.push(topn_hitrate(&truth, &pred, n)?);
        accuracy.push(topn_accuracy(&truth, &pred, n)?);
    }
    let rmse = if has_usage {
        Some(usage_rmse(&truth_v, &pred_v)?)
    } else {
        None
    };
    Ok(Metrics {
        test_units: units.len(),
        hitrate,
        accuracy,
        rmse,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sweep: f64,
    pub model: ModelKind,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub locations: usize,
    pub apps: usize,
    pub categories: usize,
    pub periods: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub metadata: ReportMetadata,
}

fn fmt_metric(v: f64) -> String {
    format!("{v:.10}")
}

impl EvaluationReport {
    pub fn row(&self, model: ModelKind, sweep: f64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model && r.sweep == sweep)
    }

    /// One CSV line per cell; `rmse` is `NA` for predictors without usage
    /// estimates.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,sweep,model,test_units");
        for n in &self.metadata.config.top_n {
            write!(out, ",top{n}_hitrate,top{n}_accuracy").unwrap();
        }
        out.push_str(",rmse\n");
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{}",
                self.metadata.experiment.name(),
                r.sweep,
                r.model,
                r.metrics.test_units
            )
            .unwrap();
            for (h, a) in r.metrics.hitrate.iter().zip(&r.metrics.accuracy) {
                write!(out, ",{},{}", fmt_metric(*h), fmt_metric(*a)).unwrap();
            }
            match r.metrics.rmse {
                Some(v) => writeln!(out, ",{}", fmt_metric(v)).unwrap(),
                None => out.push_str(",NA\n"),
            }
        }
        out
    }

    pub fn file_stem(&self) -> String {
        format!("{}_seed{}", self.metadata.experiment.name(), self.metadata.seed)
    }

    /// Write `<stem>.csv` and `<stem>.json` into `dir`; returns the CSV path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.file_stem()));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{}.json", self.file_stem()));
        let meta = serde_json::to_string_pretty(&self.metadata)?;
        fs::write(&json, meta + "\n").map_err(|e| Error::io(&json, e))?;
        Ok(csv)
    }
}

fn cell_seed(master: u64, cell: usize) -> u64 {
    SeededRng::derived(master, cell as u64).next_u64()
}

fn split_seed(base: u64, sweep_index: usize) -> u64 {
    SeededRng::derived(base, 1 << 32 | sweep_index as u64).next_u64()
}

/// Prepared inputs for one sweep value: the split plus the hyperparameters.
fn prepare(
    name: ExperimentName,
    data: &Dataset,
    config: &ExperimentConfig,
    value: f64,
    seed: u64,
) -> Result<(Split, HyperParams)> {
    let mut spec = SplitSpec {
        seed,
        ..config.split.clone()
    };
    let mut hyper = config.hyper.clone();
    let whole = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Invalid(format!("sweep value {v} must be a whole number")))
        }
    };
    let mut excluded = spec.excluded_top_apps;
    let mut source = data.clone();
    match name {
        ExperimentName::Sparsity => {
            spec.mode = SplitMode::CellSparsity;
            spec.ratio = value;
        }
        ExperimentName::Users => {
            spec.mode = SplitMode::UserSample;
            spec.ratio = value;
        }
        ExperimentName::ColdStart => {
            spec.mode = SplitMode::LocationHoldout;
            spec.ratio = value;
        }
        ExperimentName::Exclusion => excluded = whole(value)?,
        ExperimentName::ParamSweep => {
            let p = config.sweep_param.as_deref().unwrap_or_default();
            hyper = with_param(&hyper, p, value)?;
        }
        ExperimentName::Resolution => {
            let counts = data.counts.as_ref().ok_or_else(|| {
                Error::Invalid("resolution experiments need count data".into())
            })?;
            let coords: Option<Vec<(f64, f64)>> = data.records.as_ref().map(|r| {
                let by_id: std::collections::BTreeMap<&str, (f64, f64)> =
                    r.stations.iter().map(|s| (s.id.as_str(), (s.x, s.y))).collect();
                counts
                    .location_ids
                    .iter()
                    .map(|id| by_id.get(id.as_str()).copied().unwrap_or((0.0, 0.0)))
                    .collect()
            });
            let map = neighbor_merge_map(counts.location_count(), coords.as_deref(), whole(value)?)?;
            source = Dataset::from_counts(merge_locations(counts, &map)?)?;
        }
    }
    let (source, _) = source.without_popular(excluded)?;
    Ok((split(&source, &spec)?, hyper))
}

/// Run every `(sweep value, model)` cell in order. Cell `c` trains with a
/// seed derived from `(config.seed, c)`; all models of one sweep value share
/// the split.
pub fn run_experiment(name: ExperimentName, data: &Dataset, config: &ExperimentConfig) -> Result<EvaluationReport> {
    config.validate(name)?;
    let sweep = config.resolved_sweep(name);
    let mut rows = Vec::with_capacity(sweep.len() * config.models.len());
    for (s, &value) in sweep.iter().enumerate() {
        let annotate = |e: Error| e.context(format!("{} sweep value {value}", name.name()));
        let (sp, hyper) = prepare(name, data, config, value, split_seed(config.split.seed, s)).map_err(annotate)?;
        for (k, &model) in config.models.iter().enumerate() {
            let cell = s * config.models.len() + k;
            let h = HyperParams {
                seed: cell_seed(config.seed, cell),
                ..hyper.clone()
            };
            let annotate = |e: Error| e.context(format!("{} sweep value {value}, model {model}", name.name()));
            let predictor = fit_predictor(model, &sp, &h, config.mlr.as_ref()).map_err(annotate)?;
            let metrics = evaluate(&predictor, &sp.test, &config.top_n).map_err(annotate)?;
            rows.push(ReportRow {
                sweep: value,
                model,
                metrics,
            });
        }
    }
    let Dims {
        locations,
        apps,
        categories,
        periods,
    } = data.bundle.dims();
    Ok(EvaluationReport {
        rows,
        metadata: ReportMetadata {
            experiment: name,
            seed: config.seed,
            config: ExperimentConfig {
                sweep,
                ..config.clone()
            },
            locations,
            apps,
            categories,
            periods,
            notes: vec![
                "Top-N candidates: every non-excluded app".into(),
                "true Top-N: held-out X values, ties by ascending app index".into(),
                "mlr: per-app logistic-link least squares on POI features".into(),
                "aop: ranking only, rmse not applicable".into(),
            ],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SyntheticConfig};

    fn tiny() -> Dataset {
        let city = generate(&SyntheticConfig {
            locations: 12,
            apps: 8,
            categories: 3,
            periods: 2,
            k_true: 2,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        Dataset::from_bundle(city.bundle)
    }

    fn quick() -> ExperimentConfig {
        ExperimentConfig {
            split: SplitSpec {
                excluded_top_apps: 0,
                ratio: 0.3,
                ..SplitSpec::default()
            },
            hyper: HyperParams {
                k: 2,
                epochs: 5,
                ..HyperParams::default()
            },
            top_n: vec![1, 3],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sparsity_report_shape() {
        let r = run_experiment(ExperimentName::Sparsity, &tiny(), &quick()).unwrap();
        assert_eq!(r.rows.len(), 25);
        for row in &r.rows {
            for (h, a) in row.metrics.hitrate.iter().zip(&row.metrics.accuracy) {
                assert!(h >= a && (0.0..=1.0).contains(h) && (0.0..=1.0).contains(a));
            }
            assert_eq!(row.metrics.rmse.is_none(), row.model == ModelKind::Aop);
        }
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 26);
        assert!(csv.lines().next().unwrap().ends_with("top3_accuracy,rmse"));
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = ExperimentConfig {
            sweep: vec![0.2],
            ..quick()
        };
        let a = run_experiment(ExperimentName::ColdStart, &tiny(), &cfg).unwrap();
        let b = run_experiment(ExperimentName::ColdStart, &tiny(), &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert!(a.to_csv().contains("aop") && a.to_csv().contains(",NA\n"));
    }

    #[test]
    fn truth_ties_by_index() {
        let u = TestUnit {
            t: 0,
            i: 0,
            apps: vec![1, 4, 6],
            values: vec![0.5, 0.9, 0.5],
        };
        assert_eq!(u.truth(2), vec![4, 1]);
        assert_eq!(u.truth(5), vec![4, 1, 6]);
    }

    #[test]
    fn param_sweep_needs_known_param() {
        let mut cfg = ExperimentConfig {
            sweep: vec![1.0],
            ..quick()
        };
        assert!(run_experiment(ExperimentName::ParamSweep, &tiny(), &cfg).is_err());
        cfg.sweep_param = Some("gamma".into());
        assert!(run_experiment(ExperimentName::ParamSweep, &tiny(), &cfg).is_err());
        cfg.sweep_param = Some("k".into());
        assert_eq!(run_experiment(ExperimentName::ParamSweep, &tiny(), &cfg).unwrap().rows.len(), 5);
    }

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.name().parse::<ExperimentName>().unwrap(), e);
        }
    }
}
