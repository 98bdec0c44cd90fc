//! Command-line front end. Every command reads an optional JSON run config,
//! applies flag overrides, and writes its outputs plus `run.json` (the
//! resolved config) into the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{collapse_periods, fit_aop, fit_mlr, AopModel, MlrModel, MlrSettings, ModelKind};
use crate::error::{Error, Result};
use crate::eval::{poi_app_correlation, poi_app_correlation_counts, Dataset, SplitMode};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentName, Predictor};
use crate::ingestion::{
    aggregate_counts, app_vocabulary, assign_pois_voronoi, default_categories, parse_categories,
    parse_pois, parse_records, parse_stations, write_records, CountTensors, PeriodMap,
};
use crate::model::{read_checkpoint, top_n, train, write_checkpoint, Vocabulary};
use crate::numerics::{format_real, DenseMatrix};
use crate::preprocessing::{build_bundle, read_bundle, write_bundle, ObservationBundle, PreprocessingParams};
use crate::synth::{generate, SyntheticConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "POIAPP_OUT";

#[derive(Debug, Parser)]
#[command(name = "poiapp", version, about = "Location-aware app usage prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $POIAPP_OUT/<command> or poiapp-out/<command>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input: a bundle directory or a counts JSON file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Master seed; overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate raw usage records into count tensors.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        stations: PathBuf,
        #[arg(long)]
        pois: PathBuf,
        /// One category name per line [default: built-in list].
        #[arg(long)]
        categories: Option<PathBuf>,
        /// hour-of-day, static or day-slices:N.
        #[arg(long)]
        period_map: Option<String>,
    },
    /// Build X, Y and Z from count tensors.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic city.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on every observed cell of a bundle.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Write Top-N predictions of a trained model.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        top: Option<usize>,
    },
    /// One split, every configured model.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
    /// Run an experiment protocol.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        name: ExperimentName,
    },
    /// POI / app-usage correlation study.
    Correlate {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Preprocess { .. } => "preprocess",
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Experiment { .. } => "experiment",
            Command::Correlate { .. } => "correlate",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Ingest { common, .. }
            | Command::Preprocess { common }
            | Command::Synth { common }
            | Command::Train { common, .. }
            | Command::Predict { common, .. }
            | Command::Evaluate { common }
            | Command::Experiment { common, .. }
            | Command::Correlate { common } => common,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Bundle directory or counts JSON file.
    pub input: Option<PathBuf>,
    /// Generate the data instead of reading `input`.
    pub synthetic: Option<SyntheticConfig>,
    pub period_map: PeriodMap,
    /// Model trained by `train`.
    pub model: ModelKind,
    /// Top-N length written by `predict`.
    pub top: usize,
    pub experiment: ExperimentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            synthetic: None,
            period_map: PeriodMap::default(),
            model: ModelKind::Model,
            top: 5,
            experiment: ExperimentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::from(e).context(p.display().to_string()))
            }
        }
    }

    fn apply(&mut self, common: &Common) {
        if let Some(i) = &common.input {
            self.input = Some(i.clone());
        }
        if let Some(seed) = common.seed {
            self.experiment.seed = seed;
            self.experiment.split.seed = seed;
            self.experiment.hyper.seed = seed;
            if let Some(s) = &mut self.synthetic {
                s.seed = seed;
            }
        }
    }
}

/// Written as `run.json` in every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub arguments: Vec<String>,
    pub config: RunConfig,
}

fn parse_period_map(s: &str) -> Result<PeriodMap> {
    match s {
        "hour-of-day" => Ok(PeriodMap::HourOfDay),
        "static" => Ok(PeriodMap::Static),
        _ => match s.strip_prefix("day-slices:").and_then(|n| n.parse::<usize>().ok()) {
            Some(periods) if periods >= 1 => Ok(PeriodMap::DaySlices { periods }),
            _ => Err(Error::Invalid(format!(
                "period map {s:?}: expected hour-of-day, static or day-slices:N"
            ))),
        },
    }
}

fn output_dir(common: &Common, command: &str) -> PathBuf {
    match &common.out {
        Some(o) => o.clone(),
        None => std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("poiapp-out"))
            .join(command),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn require_input(cfg: &RunConfig) -> Result<&Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| Error::Invalid("no input given (--input or config \"input\")".into()))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(s) = &cfg.synthetic {
        let city = generate(s)?;
        return match city.records {
            Some(r) => Dataset::from_records(r),
            None => Ok(Dataset::from_bundle(city.bundle)),
        };
    }
    let input = require_input(cfg)?;
    if input.is_dir() {
        Ok(Dataset::from_bundle(read_bundle(input)?.0))
    } else {
        Dataset::from_counts(CountTensors::from_json(&read_text(input)?)?)
    }
}

fn write_points<W: std::io::Write>(out: W, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

fn ingest(cfg: &RunConfig, dir: &Path, records: &Path, stations: &Path, pois: &Path, categories: Option<&Path>) -> Result<()> {
    let categories = match categories {
        Some(p) => parse_categories(open(p)?)?,
        None => default_categories(),
    };
    let records = parse_records(open(records)?).map_err(|e| e.context(records.display().to_string()))?;
    let stations = parse_stations(open(stations)?).map_err(|e| e.context(stations.display().to_string()))?;
    let pois = parse_pois(open(pois)?, &categories).map_err(|e| e.context(pois.display().to_string()))?;
    let geometry = assign_pois_voronoi(&stations, &pois)?;
    let counts = aggregate_counts(&records, &geometry, cfg.period_map, &app_vocabulary(&records), &categories)?;
    let path = dir.join("counts.json");
    fs::write(&path, counts.to_json()?).map_err(|e| Error::io(&path, e))
}

fn synth(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let s = cfg.synthetic.clone().unwrap_or_default();
    let city = generate(&s)?;
    write_bundle(
        &city.bundle,
        &dir.join("bundle"),
        &PreprocessingParams {
            notes: city.notes.clone(),
            ..PreprocessingParams::default()
        },
    )?;
    write_checkpoint(
        &dir.join("truth"),
        "truth",
        &city.true_factors,
        &cfg.experiment.hyper,
        0,
        f64::NAN,
        &Vocabulary::of(&city.bundle),
        city.notes.clone(),
    )?;
    if let Some(rs) = &city.records {
        let p = dir.join("records.csv");
        write_records(fs::File::create(&p).map_err(|e| Error::io(&p, e))?, &rs.records)?;
        let p = dir.join("stations.csv");
        write_points(
            fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
            &["station_id", "x", "y"],
            rs.stations.iter().map(|s| vec![s.id.clone(), format_real(s.x), format_real(s.y)]),
        )?;
        let p = dir.join("pois.csv");
        write_points(
            fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
            &["poi_id", "x", "y", "category"],
            rs.pois.iter().map(|q| {
                vec![q.id.clone(), format_real(q.x), format_real(q.y), rs.category_names[q.category].clone()]
            }),
        )?;
        let p = dir.join("categories.txt");
        fs::write(&p, rs.category_names.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
        let p = dir.join("counts.json");
        fs::write(&p, rs.aggregate()?.to_json()?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    model: ModelKind,
}

fn train_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let hyper = &cfg.experiment.hyper;
    let kind = cfg.model;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match kind {
        ModelKind::Aop => {
            write_json(&dir.join("manifest.json"), &ModelHeader { model: kind })?;
            write_json(&dir.join("aop.json"), &fit_aop(&data.bundle.x))
        }
        ModelKind::Mlr => {
            let settings = cfg.experiment.mlr.clone().unwrap_or_else(|| MlrSettings::from_hyper(hyper));
            let model = fit_mlr(&data.bundle.y, &data.bundle.x, &settings)?;
            write_json(&dir.join("manifest.json"), &ModelHeader { model: kind })?;
            write_json(&dir.join("mlr.json"), &model)
        }
        _ => {
            let h = crate::baselines::baseline_config(kind, hyper);
            let bundle = if kind.collapses_periods() {
                collapse_periods(&data.bundle, data.counts.as_ref())?
            } else {
                data.bundle.clone()
            };
            let outcome = train(&bundle, &h)?;
            write_checkpoint(
                dir,
                kind.name(),
                &outcome.factors,
                &h,
                h.epochs,
                outcome.final_loss(),
                &Vocabulary::of(&bundle),
                Vec::new(),
            )?;
            let trace: Vec<String> = outcome.loss_trace.iter().map(|l| format_real(*l)).collect();
            let p = dir.join("loss_trace.txt");
            fs::write(&p, trace.join("\n") + "\n").map_err(|e| Error::io(&p, e))
        }
    }
}

fn load_predictor(checkpoint: &Path, y: &DenseMatrix) -> Result<Predictor> {
    let header: ModelHeader = serde_json::from_str(&read_text(&checkpoint.join("manifest.json"))?)?;
    match header.model {
        ModelKind::Aop => {
            let m: AopModel = serde_json::from_str(&read_text(&checkpoint.join("aop.json"))?)?;
            Ok(Predictor::Aop(m))
        }
        ModelKind::Mlr => {
            let m: MlrModel = serde_json::from_str(&read_text(&checkpoint.join("mlr.json"))?)?;
            Ok(Predictor::Mlr { model: m, y: y.clone() })
        }
        _ => Ok(Predictor::Factors(read_checkpoint(checkpoint)?.0)),
    }
}

fn predict_cmd(cfg: &RunConfig, dir: &Path, checkpoint: &Path) -> Result<()> {
    let bundle: ObservationBundle = load_dataset(cfg)?.bundle;
    let predictor = load_predictor(checkpoint, &bundle.y)?;
    let d = bundle.dims();
    let mut rows = Vec::new();
    for t in 0..d.periods {
        for i in 0..d.locations {
            let scores = predictor.scores(i, t)?;
            if scores.len() != d.apps {
                return Err(Error::shape(format!("{} apps", d.apps), scores.len()));
            }
            let usage = predictor.usage(i, t)?;
            for (rank, j) in top_n(&scores, cfg.top, &[])?.apps.into_iter().enumerate() {
                rows.push(vec![
                    bundle.location_ids[i].clone(),
                    t.to_string(),
                    (rank + 1).to_string(),
                    bundle.app_ids[j].clone(),
                    format_real(scores[j]),
                    usage.as_ref().map_or("NA".to_string(), |u| format_real(u[j])),
                ]);
            }
        }
    }
    let p = dir.join("predictions.csv");
    write_points(
        fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
        &["location", "period", "rank", "app", "score", "usage"],
        rows.into_iter(),
    )
}

fn correlate_cmd(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let corr = match &data.counts {
        Some(c) => poi_app_correlation_counts(&c.merge_periods().r[0], &c.q)?,
        None => {
            let d = data.bundle.dims();
            let usage = DenseMatrix::from_fn(d.locations, d.apps, |i, j| {
                data.bundle.x.iter().filter_map(|x| x.get(i, j)).sum()
            });
            poi_app_correlation(&usage, &data.bundle.y)?
        }
    };
    #[derive(Serialize)]
    struct Out<'a> {
        median: f64,
        v: &'a [f64],
        cdf: &'a [crate::eval::CdfPoint],
    }
    write_json(
        &dir.join("correlation.json"),
        &Out {
            median: corr.median(),
            v: &corr.v,
            cdf: &corr.cdf,
        },
    )?;
    let p = dir.join("correlation_cdf.csv");
    write_points(
        fs::File::create(&p).map_err(|e| Error::io(&p, e))?,
        &["threshold", "fraction"],
        corr.cdf.iter().map(|c| vec![format!("{:.2}", c.threshold), format_real(c.fraction)]),
    )
}

fn execute(cli: &Cli, arguments: Vec<String>) -> Result<PathBuf> {
    let cmd = &cli.command;
    let common = cmd.common();
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(common);
    match cmd {
        Command::Ingest { period_map: Some(p), .. } => cfg.period_map = parse_period_map(p)?,
        Command::Train { model: Some(m), .. } => cfg.model = *m,
        Command::Predict { top: Some(n), .. } => cfg.top = *n,
        _ => {}
    }
    let dir = output_dir(common, cmd.name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    match cmd {
        Command::Ingest {
            records,
            stations,
            pois,
            categories,
            ..
        } => ingest(&cfg, &dir, records, stations, pois, categories.as_deref())?,
        Command::Preprocess { .. } => {
            let input = require_input(&cfg)?;
            let counts = CountTensors::from_json(&read_text(input)?)?;
            write_bundle(&build_bundle(&counts)?, &dir, &PreprocessingParams::default())?;
        }
        Command::Synth { .. } => synth(&cfg, &dir)?,
        Command::Train { .. } => train_cmd(&cfg, &dir)?,
        Command::Predict { checkpoint, .. } => predict_cmd(&cfg, &dir, checkpoint)?,
        Command::Evaluate { .. } => {
            let name = match cfg.experiment.split.mode {
                SplitMode::CellSparsity => ExperimentName::Sparsity,
                SplitMode::UserSample => ExperimentName::Users,
                SplitMode::LocationHoldout => ExperimentName::ColdStart,
            };
            let exp = ExperimentConfig {
                sweep: vec![cfg.experiment.split.ratio],
                ..cfg.experiment.clone()
            };
            run_experiment(name, &load_dataset(&cfg)?, &exp)?.write(&dir)?;
        }
        Command::Experiment { name, .. } => {
            run_experiment(*name, &load_dataset(&cfg)?, &cfg.experiment)?.write(&dir)?;
        }
        Command::Correlate { .. } => correlate_cmd(&cfg, &dir)?,
    }
    write_json(
        &dir.join("run.json"),
        &RunManifest {
            command: cmd.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            arguments,
            config: cfg,
        },
    )?;
    Ok(dir)
}

/// Parse `argv` (program name first), run, and return the process exit code.
/// Failures print `error[<category>]: <message>` on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let arguments = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, arguments) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_map_flags() {
        assert_eq!(parse_period_map("static").unwrap(), PeriodMap::Static);
        assert_eq!(
            parse_period_map("day-slices:4").unwrap(),
            PeriodMap::DaySlices { periods: 4 }
        );
        assert!(parse_period_map("day-slices:0").is_err());
        assert!(parse_period_map("weekly").is_err());
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let cfg: RunConfig = serde_json::from_str(r#"{"top": 3, "experiment": {"seed": 9}}"#).unwrap();
        assert_eq!(cfg.top, 3);
        assert_eq!(cfg.experiment.seed, 9);
        assert_eq!(cfg.experiment.hyper, crate::model::HyperParams::default());
    }

    #[test]
    fn seed_flag_overrides_every_seed() {
        let mut cfg = RunConfig {
            synthetic: Some(SyntheticConfig::default()),
            ..RunConfig::default()
        };
        cfg.apply(&Common {
            seed: Some(77),
            ..Common::default()
        });
        assert_eq!(cfg.experiment.seed, 77);
        assert_eq!(cfg.experiment.hyper.seed, 77);
        assert_eq!(cfg.synthetic.unwrap().seed, 77);
    }
}
