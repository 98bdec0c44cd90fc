//! Synthetic cities drawn from the model's own generative process.
//!
//! Location factors are `l = l1 + l2` with independent spherical Gaussian
//! priors, app and POI factors likewise. Per-period location and POI
//! factors follow a Gaussian random walk; app factors are static. Matrix
//! entries are the logistic of the latent products plus Gaussian noise,
//! clamped to [0, 1].
//!
//! Record mode additionally emits raw usage records: device activity follows
//! a discrete power law with exponential cutoff, and each record's app is
//! drawn in proportion to the noiseless usage probability at the record's
//! location times a Zipf popularity weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::{
    aggregate_counts, assign_pois_voronoi, CountTensors, PeriodMap, Poi, Station, UsageRecord,
};
use crate::model::{LatentMatrix, TemporalFactorSet};
use crate::numerics::{dot, logistic, DenseMatrix, MaskedMatrix, SeededRng};
use crate::preprocessing::ObservationBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub locations: usize,
    pub apps: usize,
    pub categories: usize,
    pub periods: usize,
    pub k_true: usize,
    pub sigma_l1: f64,
    pub sigma_l2: f64,
    pub sigma_a: f64,
    pub sigma_p: f64,
    /// Observation noise of X, Y and Z.
    pub noise_x: f64,
    pub noise_y: f64,
    pub noise_z: f64,
    /// Fraction of X cells observed per period.
    pub density: f64,
    /// Per-period random-walk step of location and POI factors.
    pub drift: f64,
    /// When false, Y is generated from location factors drawn independently
    /// of those generating X and Z.
    pub shared_location_latents: bool,
    pub records: Option<RecordConfig>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            locations: 200,
            apps: 100,
            categories: 17,
            periods: 4,
            k_true: 8,
            sigma_l1: 0.5,
            sigma_l2: 0.5,
            sigma_a: 1.0,
            sigma_p: 1.0,
            noise_x: 0.05,
            noise_y: 0.05,
            noise_z: 0.05,
            density: 1.0,
            drift: 0.15,
            shared_location_latents: true,
            records: None,
            seed: 20_170_501,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordConfig {
    pub devices: usize,
    /// Power-law exponent of per-device daily record counts.
    pub exponent: f64,
    /// Exponential cutoff scale of the record-count law.
    pub cutoff: f64,
    /// Largest daily record count of one device.
    pub cap: usize,
    pub days: usize,
    /// Probability that a record is made at the device's second location.
    pub roam_probability: f64,
    /// Zipf exponent of app popularity; 0 disables popularity weighting.
    pub app_popularity_exponent: f64,
    pub pois_per_location: usize,
    /// Distance between neighbouring stations on the square grid, meters.
    pub station_spacing: f64,
}

impl Default for RecordConfig {
    fn default() -> Self {
        Self {
            devices: 5000,
            exponent: 1.8,
            cutoff: 1000.0,
            cap: 1000,
            days: 7,
            roam_probability: 0.3,
            app_popularity_exponent: 1.0,
            pois_per_location: 40,
            station_spacing: 500.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sigma_l1", self.sigma_l1),
            ("sigma_l2", self.sigma_l2),
            ("sigma_a", self.sigma_a),
            ("sigma_p", self.sigma_p),
            ("noise_x", self.noise_x),
            ("noise_y", self.noise_y),
            ("noise_z", self.noise_z),
            ("drift", self.drift),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Invalid(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        if self.locations == 0 || self.apps == 0 || self.periods == 0 || self.k_true == 0 {
            return Err(Error::Invalid(
                "locations, apps, periods and k_true must be positive".into(),
            ));
        }
        if let Some(r) = &self.records {
            if r.cap == 0 || r.days == 0 || !(r.exponent.is_finite() && r.cutoff > 0.0) {
                return Err(Error::Invalid(
                    "record mode needs cap >= 1, days >= 1, finite exponent and cutoff > 0"
                        .into(),
                ));
            }
            if !(0.0..=1.0).contains(&r.roam_probability) {
                return Err(Error::Invalid("roam_probability must be in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn location_ids(&self) -> Vec<String> {
        (0..self.locations).map(|i| format!("s{i:04}")).collect()
    }

    pub fn app_ids(&self) -> Vec<String> {
        (0..self.apps).map(|j| format!("app{j:04}")).collect()
    }

    pub fn category_names(&self) -> Vec<String> {
        (0..self.categories).map(|p| format!("poi{p:02}")).collect()
    }
}

/// Raw records and the geometry they were generated on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSet {
    pub records: Vec<UsageRecord>,
    pub stations: Vec<Station>,
    pub pois: Vec<Poi>,
    pub app_ids: Vec<String>,
    pub category_names: Vec<String>,
    pub period_map: PeriodMap,
}

impl RecordSet {
    /// Voronoi-assign the POIs and aggregate the records.
    pub fn aggregate(&self) -> Result<CountTensors> {
        let geometry = assign_pois_voronoi(&self.stations, &self.pois)?;
        aggregate_counts(
            &self.records,
            &geometry,
            self.period_map,
            &self.app_ids,
            &self.category_names,
        )
    }

    /// Keep only the records of the given devices.
    pub fn restricted_to(&self, devices: &std::collections::BTreeSet<String>) -> RecordSet {
        RecordSet {
            records: self
                .records
                .iter()
                .filter(|r| devices.contains(&r.device_id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    pub fn device_ids(&self) -> Vec<String> {
        let set: std::collections::BTreeSet<&str> =
            self.records.iter().map(|r| r.device_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCity {
    pub config: SyntheticConfig,
    pub true_factors: TemporalFactorSet,
    pub bundle: ObservationBundle,
    pub records: Option<RecordSet>,
    pub notes: Vec<String>,
}

impl SyntheticCity {
    /// Noiseless usage probabilities `g(l_{i,t}ᵀ a_j)` of every app.
    pub fn true_scores(&self, i: usize, t: usize) -> Vec<f64> {
        let l = self.true_factors.location_vector(i, t);
        (0..self.config.apps)
            .map(|j| logistic(dot(&l, self.true_factors.a.vector(j))))
            .collect()
    }
}

// RNG stream ids, one per independent quantity.
const STREAM_FACTORS: u64 = 1;
const STREAM_DRIFT: u64 = 2;
const STREAM_X: u64 = 3;
const STREAM_Y: u64 = 4;
const STREAM_Z: u64 = 5;
const STREAM_MASK: u64 = 6;
const STREAM_RECORDS: u64 = 7;
const STREAM_UNSHARED: u64 = 8;

fn random_latent(k: usize, count: usize, stddev: f64, rng: &mut SeededRng) -> LatentMatrix {
    let vectors: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..k).map(|_| rng.gaussian(stddev)).collect())
        .collect();
    LatentMatrix::from_vectors(k, &vectors).expect("consistent lengths")
}

fn drifted(prev: &LatentMatrix, drift: f64, rng: &mut SeededRng) -> LatentMatrix {
    let mut next = prev.clone();
    for v in next.as_mut_slice() {
        *v += rng.gaussian(drift);
    }
    next
}

fn noisy(mean: f64, stddev: f64, rng: &mut SeededRng) -> f64 {
    (mean + rng.gaussian(stddev)).clamp(0.0, 1.0)
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCity> {
    config.validate()?;
    let (m, n, l, periods, k) = (
        config.locations,
        config.apps,
        config.categories,
        config.periods,
        config.k_true,
    );
    let mut frng = SeededRng::derived(config.seed, STREAM_FACTORS);
    let l1_base = random_latent(k, m, config.sigma_l1, &mut frng);
    let l2_base = random_latent(k, m, config.sigma_l2, &mut frng);
    let a = random_latent(k, n, config.sigma_a, &mut frng);
    let p_base = random_latent(k, l, config.sigma_p, &mut frng);

    let mut drng = SeededRng::derived(config.seed, STREAM_DRIFT);
    let mut l1 = vec![l1_base];
    let mut l2 = vec![l2_base];
    let mut p = vec![p_base];
    for t in 1..periods {
        l1.push(drifted(&l1[t - 1], config.drift, &mut drng));
        l2.push(drifted(&l2[t - 1], config.drift, &mut drng));
        p.push(drifted(&p[t - 1], config.drift, &mut drng));
    }
    let factors = TemporalFactorSet { l1, l2, p, a };

    let observed_per_period = ((config.density * (m * n) as f64).round() as usize).min(m * n);
    let mut xrng = SeededRng::derived(config.seed, STREAM_X);
    let mut mrng = SeededRng::derived(config.seed, STREAM_MASK);
    let mut zrng = SeededRng::derived(config.seed, STREAM_Z);
    let mut x = Vec::with_capacity(periods);
    let mut z = Vec::with_capacity(periods);
    for t in 0..periods {
        let cells = mrng.sample_indices(m * n, observed_per_period);
        let mut xt = MaskedMatrix::empty(m, n);
        for idx in cells {
            let (i, j) = (idx / n, idx % n);
            let mean = logistic(dot(&factors.location_vector(i, t), factors.a.vector(j)));
            xt.observe(i, j, noisy(mean, config.noise_x, &mut xrng));
        }
        x.push(xt);

        let u = &factors.l2[t];
        let mut zt = DenseMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = noisy(logistic(dot(u.vector(i), u.vector(j))), config.noise_z, &mut zrng);
                zt.set(i, j, v);
                zt.set(j, i, v);
            }
        }
        z.push(zt);
    }

    let poi_locations = if config.shared_location_latents {
        factors.l1[0].clone()
    } else {
        let mut urng = SeededRng::derived(config.seed, STREAM_UNSHARED);
        random_latent(k, m, config.sigma_l1, &mut urng)
    };
    let mut yrng = SeededRng::derived(config.seed, STREAM_Y);
    let mut y = DenseMatrix::zeros(m, l);
    for i in 0..m {
        for c in 0..l {
            let mean = logistic(dot(poi_locations.vector(i), factors.p[0].vector(c)));
            y.set(i, c, noisy(mean, config.noise_y, &mut yrng));
        }
    }

    let bundle = ObservationBundle {
        location_ids: config.location_ids(),
        app_ids: config.app_ids(),
        category_names: config.category_names(),
        x,
        z,
        y,
    };
    let records = match &config.records {
        Some(rc) => Some(records_from_factors(config, rc, &factors)?),
        None => None,
    };
    let mut notes = vec![
        "observations clamped to [0, 1]".to_string(),
        "Y generated from period-0 location and POI factors".to_string(),
    ];
    if config.records.is_some() {
        notes.push(
            "record-count law exponent and cutoff are placeholders, not fitted values".to_string(),
        );
    }
    Ok(SyntheticCity {
        config: config.clone(),
        true_factors: factors,
        bundle,
        records,
        notes,
    })
}

/// Record-mode output for `config`; requires `config.records`.
pub fn generate_records(config: &SyntheticConfig) -> Result<RecordSet> {
    let city = generate(&SyntheticConfig {
        records: None,
        ..config.clone()
    })?;
    let rc = config
        .records
        .as_ref()
        .ok_or_else(|| Error::Invalid("record mode parameters not set".into()))?;
    records_from_factors(config, rc, &city.true_factors)
}

/// Probability mass of `k^-exponent * exp(-k / cutoff)` over `1..=cap`.
pub fn power_law_pmf(exponent: f64, cutoff: f64, cap: usize) -> Vec<f64> {
    let w: Vec<f64> = (1..=cap)
        .map(|k| (k as f64).powf(-exponent) * (-(k as f64) / cutoff).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Inverse-CDF sampler over `1..=len`.
#[derive(Debug, Clone)]
pub struct DiscreteSampler {
    cdf: Vec<f64>,
}

impl DiscreteSampler {
    pub fn new(weights: &[f64]) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            if acc > 0.0 {
                for v in cdf.iter_mut() {
                    *v /= acc;
                }
            } else {
                *last = 1.0;
            }
        }
        Self { cdf }
    }

    /// Index in `0..len`.
    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u = rng.uniform();
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }
}

fn records_from_factors(
    config: &SyntheticConfig,
    rc: &RecordConfig,
    factors: &TemporalFactorSet,
) -> Result<RecordSet> {
    let (m, n, l, periods) = (
        config.locations,
        config.apps,
        config.categories,
        config.periods,
    );
    let mut rng = SeededRng::derived(config.seed, STREAM_RECORDS);
    let location_ids = config.location_ids();
    let app_ids = config.app_ids();

    let side = (m as f64).sqrt().ceil() as usize;
    let stations: Vec<Station> = (0..m)
        .map(|i| Station {
            id: location_ids[i].clone(),
            x: (i % side) as f64 * rc.station_spacing,
            y: (i / side) as f64 * rc.station_spacing,
        })
        .collect();

    let mut pois = Vec::with_capacity(m * rc.pois_per_location);
    if l > 0 {
        for (i, s) in stations.iter().enumerate() {
            let w: Vec<f64> = (0..l)
                .map(|c| logistic(dot(factors.l1[0].vector(i), factors.p[0].vector(c))))
                .collect();
            let sampler = DiscreteSampler::new(&w);
            for q in 0..rc.pois_per_location {
                let radius = rc.station_spacing * 0.45 * rng.uniform().sqrt();
                let angle = rng.uniform() * std::f64::consts::TAU;
                pois.push(Poi {
                    id: format!("{}_p{q}", s.id),
                    x: s.x + radius * angle.cos(),
                    y: s.y + radius * angle.sin(),
                    category: sampler.sample(&mut rng),
                });
            }
        }
    }

    let mut popularity_order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut popularity_order);
    let mut popularity = vec![0.0; n];
    for (rank, &j) in popularity_order.iter().enumerate() {
        popularity[j] = ((rank + 1) as f64).powf(-rc.app_popularity_exponent);
    }
    let app_samplers: Vec<Vec<DiscreteSampler>> = (0..periods)
        .map(|t| {
            (0..m)
                .map(|i| {
                    let loc = factors.location_vector(i, t);
                    let w: Vec<f64> = (0..n)
                        .map(|j| logistic(dot(&loc, factors.a.vector(j))) * popularity[j])
                        .collect();
                    DiscreteSampler::new(&w)
                })
                .collect()
        })
        .collect();

    let activity = DiscreteSampler::new(&power_law_pmf(rc.exponent, rc.cutoff, rc.cap));
    let slice = 86_400 / periods as i64;
    let mut records = Vec::new();
    for d in 0..rc.devices {
        let device = format!("dev{d:06}");
        let home = rng.below(m);
        let away = rng.below(m);
        for day in 0..rc.days {
            let count = activity.sample(&mut rng) + 1;
            for _ in 0..count {
                let i = if rng.uniform() < rc.roam_probability {
                    away
                } else {
                    home
                };
                let t = rng.below(periods);
                let offset = rng.below(slice as usize) as i64;
                let j = app_samplers[t][i].sample(&mut rng);
                records.push(UsageRecord {
                    device_id: device.clone(),
                    station_id: location_ids[i].clone(),
                    app_id: app_ids[j].clone(),
                    timestamp: day as i64 * 86_400 + t as i64 * slice + offset,
                });
            }
        }
    }
    Ok(RecordSet {
        records,
        stations,
        pois,
        app_ids,
        category_names: config.category_names(),
        period_map: PeriodMap::DaySlices { periods },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            locations: 10,
            apps: 10,
            categories: 4,
            periods: 1,
            k_true: 3,
            seed: 3,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn noiseless_city_matches_latent_products() {
        let cfg = SyntheticConfig {
            noise_x: 0.0,
            noise_y: 0.0,
            noise_z: 0.0,
            drift: 0.0,
            periods: 3,
            ..small()
        };
        let city = generate(&cfg).unwrap();
        for t in 0..3 {
            for (i, j, v) in city.bundle.x[t].observed() {
                let l = city.true_factors.location_vector(i, t);
                assert_eq!(v, logistic(dot(&l, city.true_factors.a.vector(j))));
            }
            assert!(city.bundle.z[t].is_symmetric());
        }
        assert_eq!(city.true_factors.l1[0], city.true_factors.l1[2]);
    }

    #[test]
    fn same_seed_same_city() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.bundle, c.bundle);
    }

    #[test]
    fn density_gives_exact_cell_count() {
        let city = generate(&SyntheticConfig {
            density: 0.2,
            ..small()
        })
        .unwrap();
        assert_eq!(city.bundle.x[0].observed_count(), 20);
        city.bundle.validate().unwrap();
    }

    #[test]
    fn steep_power_law_has_unit_median() {
        let pmf = power_law_pmf(4.0, 1000.0, 1000);
        // brute-force median from the exact mass
        let mut acc = 0.0;
        let median = pmf
            .iter()
            .position(|p| {
                acc += p;
                acc >= 0.5
            })
            .unwrap()
            + 1;
        assert_eq!(median, 1);
        let sampler = DiscreteSampler::new(&pmf);
        let mut rng = SeededRng::new(1);
        let mut draws: Vec<usize> = (0..100_000).map(|_| sampler.sample(&mut rng) + 1).collect();
        draws.sort_unstable();
        assert_eq!(draws[draws.len() / 2], 1);
    }

    #[test]
    fn single_device_cap_one() {
        let cfg = SyntheticConfig {
            records: Some(RecordConfig {
                devices: 1,
                cap: 1,
                days: 1,
                pois_per_location: 2,
                ..RecordConfig::default()
            }),
            ..small()
        };
        let rs = generate_records(&cfg).unwrap();
        assert_eq!(rs.records.len(), 1);
    }

    #[test]
    fn records_aggregate_conserves_count() {
        let cfg = SyntheticConfig {
            periods: 4,
            records: Some(RecordConfig {
                devices: 200,
                days: 2,
                cap: 50,
                pois_per_location: 5,
                ..RecordConfig::default()
            }),
            ..small()
        };
        let rs = generate_records(&cfg).unwrap();
        let counts = rs.aggregate().unwrap();
        assert_eq!(counts.total_records(), rs.records.len() as u64);
        assert_eq!(counts.period_count(), 4);
        assert_eq!(counts.q.total(), 50);
    }

    #[test]
    fn sampler_respects_weights() {
        let s = DiscreteSampler::new(&[0.0, 1.0, 0.0]);
        let mut rng = SeededRng::new(2);
        assert!((0..100).all(|_| s.sample(&mut rng) == 1));
    }
}
