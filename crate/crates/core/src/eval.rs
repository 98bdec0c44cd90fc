//! Top-N and RMSE metrics, train/test splits, and the data transformations
//! behind the experiment protocols: popular-app exclusion, location merging
//! and the POI/app-usage correlation study.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::baselines::AopModel;
use crate::error::{Error, Result};
use crate::ingestion::CountTensors;
use crate::numerics::{cosine, CountMatrix, DenseMatrix, MaskedMatrix, SeededRng};
use crate::preprocessing::{build_bundle, ObservationBundle};
use crate::synth::RecordSet;

fn check_sets(true_sets: &[Vec<usize>], pred_sets: &[Vec<usize>], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Invalid("N must be at least 1".into()));
    }
    if true_sets.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if true_sets.len() != pred_sets.len() {
        return Err(Error::shape(
            format!("{} predicted sets", true_sets.len()),
            pred_sets.len(),
        ));
    }
    if let Some(i) = true_sets.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("test location {i} has an empty true set")));
    }
    Ok(())
}

fn overlap(a: &[usize], b: &[usize]) -> usize {
    let b: BTreeSet<usize> = b.iter().copied().collect();
    a.iter().collect::<BTreeSet<_>>().into_iter().filter(|x| b.contains(x)).count()
}

/// Fraction of test locations whose predicted set shares at least one app
/// with the true set.
pub fn topn_hitrate(true_sets: &[Vec<usize>], pred_sets: &[Vec<usize>], n: usize) -> Result<f64> {
    check_sets(true_sets, pred_sets, n)?;
    let hits = true_sets
        .iter()
        .zip(pred_sets)
        .filter(|(t, p)| overlap(t, p) >= 1)
        .count();
    Ok(hits as f64 / true_sets.len() as f64)
}

/// Mean over test locations of `|true ∩ predicted| / N`.
pub fn topn_accuracy(true_sets: &[Vec<usize>], pred_sets: &[Vec<usize>], n: usize) -> Result<f64> {
    check_sets(true_sets, pred_sets, n)?;
    let hits: usize = true_sets.iter().zip(pred_sets).map(|(t, p)| overlap(t, p)).sum();
    Ok(hits as f64 / (n * true_sets.len()) as f64)
}

/// Sum of per-location L2 errors divided by the total number of entries.
pub fn usage_rmse(true_vectors: &[Vec<f64>], pred_vectors: &[Vec<f64>]) -> Result<f64> {
    if true_vectors.len() != pred_vectors.len() {
        return Err(Error::shape(
            format!("{} predicted vectors", true_vectors.len()),
            pred_vectors.len(),
        ));
    }
    let mut norms = 0.0;
    let mut entries = 0usize;
    for (i, (t, p)) in true_vectors.iter().zip(pred_vectors).enumerate() {
        if t.len() != p.len() {
            return Err(Error::Context {
                context: format!("test location {i}"),
                source: Box::new(Error::shape(t.len(), p.len())),
            });
        }
        norms += t
            .iter()
            .zip(p)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        entries += t.len();
    }
    if entries == 0 {
        return Err(Error::Invalid("no test entries".into()));
    }
    Ok(norms / entries as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    CellSparsity,
    UserSample,
    LocationHoldout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// Fraction of cells, users or locations kept for training.
    pub ratio: f64,
    pub seed: u64,
    /// Most popular apps removed from both vocabularies before splitting.
    pub excluded_top_apps: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            mode: SplitMode::CellSparsity,
            ratio: 0.1,
            seed: 0,
            excluded_top_apps: 30,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Invalid(format!(
                "split ratio must be in (0, 1), got {}",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Inputs of an experiment. The bundle is always present; counts and
/// records are available when the data came from usage records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bundle: ObservationBundle,
    pub counts: Option<CountTensors>,
    pub records: Option<RecordSet>,
}

impl Dataset {
    pub fn from_bundle(bundle: ObservationBundle) -> Self {
        Self {
            bundle,
            counts: None,
            records: None,
        }
    }

    pub fn from_counts(counts: CountTensors) -> Result<Self> {
        Ok(Self {
            bundle: build_bundle(&counts)?,
            counts: Some(counts),
            records: None,
        })
    }

    pub fn from_records(records: RecordSet) -> Result<Self> {
        let counts = records.aggregate()?;
        Ok(Self {
            records: Some(records),
            ..Self::from_counts(counts)?
        })
    }

    /// Remove the `k` most used apps everywhere. Usage comes from the counts
    /// when present, otherwise from the X values.
    pub fn without_popular(&self, k: usize) -> Result<(Dataset, Vec<usize>)> {
        if k == 0 {
            return Ok((self.clone(), Vec::new()));
        }
        match &self.counts {
            Some(counts) => {
                let (filtered, excluded) = exclude_popular(counts, k)?;
                let records = self.records.as_ref().map(|rs| {
                    let dropped: BTreeSet<&str> =
                        excluded.iter().map(|&j| rs.app_ids[j].as_str()).collect();
                    RecordSet {
                        records: rs
                            .records
                            .iter()
                            .filter(|r| !dropped.contains(r.app_id.as_str()))
                            .cloned()
                            .collect(),
                        app_ids: filtered.app_ids.clone(),
                        ..rs.clone()
                    }
                });
                Ok((
                    Dataset {
                        bundle: build_bundle(&filtered)?,
                        counts: Some(filtered),
                        records,
                    },
                    excluded,
                ))
            }
            None => {
                let (bundle, excluded) = exclude_popular_bundle(&self.bundle, k)?;
                Ok((Dataset::from_bundle(bundle), excluded))
            }
        }
    }
}

/// Training bundle and held-out cells of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: ObservationBundle,
    pub test: Vec<MaskedMatrix>,
    /// Counts the training bundle was built from; cells outside the training
    /// mask must be ignored.
    pub train_counts: Option<CountTensors>,
}

fn ratio_count(ratio: f64, total: usize, what: &str) -> Result<usize> {
    let k = (ratio * total as f64).round() as usize;
    if k == 0 || k >= total {
        return Err(Error::Invalid(format!(
            "ratio {ratio} on {total} {what} leaves an empty training or test side"
        )));
    }
    Ok(k)
}

/// Uniformly sample training cells among all observed cells of all periods.
pub fn split_cells(bundle: &ObservationBundle, ratio: f64, seed: u64) -> Result<(ObservationBundle, Vec<MaskedMatrix>)> {
    let cells: Vec<(usize, usize, usize, f64)> = bundle
        .x
        .iter()
        .enumerate()
        .flat_map(|(t, x)| x.observed().map(move |(i, j, v)| (t, i, j, v)))
        .collect();
    let k = ratio_count(ratio, cells.len(), "observed cells")?;
    let picked = SeededRng::derived(seed, 0).sample_indices(cells.len(), k);
    let mut train = bundle.clone();
    for x in &mut train.x {
        *x = MaskedMatrix::empty(x.rows(), x.cols());
    }
    let mut test = bundle.x.clone();
    for idx in picked {
        let (t, i, j, v) = cells[idx];
        train.x[t].observe(i, j, v);
        test[t].unobserve(i, j);
    }
    Ok((train, test))
}

/// Keep X for a sample of locations; the others become cold-start test
/// locations that retain their Y and Z rows.
pub fn split_locations(
    bundle: &ObservationBundle,
    ratio: f64,
    seed: u64,
) -> Result<(ObservationBundle, Vec<MaskedMatrix>, Vec<usize>)> {
    let d = bundle.dims();
    let k = ratio_count(ratio, d.locations, "locations")?;
    let training = SeededRng::derived(seed, 0).sample_indices(d.locations, k);
    let keep: BTreeSet<usize> = training.iter().copied().collect();
    let mut train = bundle.clone();
    let mut test = bundle.x.clone();
    for t in 0..d.periods {
        for i in 0..d.locations {
            for j in 0..d.apps {
                if keep.contains(&i) {
                    test[t].unobserve(i, j);
                } else {
                    train.x[t].unobserve(i, j);
                }
            }
        }
    }
    Ok((train, test, training))
}

/// Rebuild every input from a sample of devices; the test side is the
/// full-data X.
pub fn split_users(records: &RecordSet, ratio: f64, seed: u64) -> Result<Split> {
    let devices = records.device_ids();
    let k = ratio_count(ratio, devices.len(), "devices")?;
    let sampled: BTreeSet<String> = SeededRng::derived(seed, 0)
        .sample_indices(devices.len(), k)
        .into_iter()
        .map(|i| devices[i].clone())
        .collect();
    let full = build_bundle(&records.aggregate()?)?;
    let counts = records.restricted_to(&sampled).aggregate()?;
    Ok(Split {
        train: build_bundle(&counts)?,
        test: full.x,
        train_counts: Some(counts),
    })
}

/// Split `data` per `spec`. Popular-app exclusion is applied by the caller
/// through [`Dataset::without_popular`].
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    match spec.mode {
        SplitMode::CellSparsity => {
            let (train, test) = split_cells(&data.bundle, spec.ratio, spec.seed)?;
            Ok(Split {
                train,
                test,
                train_counts: data.counts.clone(),
            })
        }
        SplitMode::LocationHoldout => {
            let (train, test, _) = split_locations(&data.bundle, spec.ratio, spec.seed)?;
            Ok(Split {
                train,
                test,
                train_counts: data.counts.clone(),
            })
        }
        SplitMode::UserSample => {
            let records = data.records.as_ref().ok_or_else(|| {
                Error::Invalid("user sampling needs record-level data".into())
            })?;
            split_users(records, spec.ratio, spec.seed)
        }
    }
}

fn popularity_order(totals: Vec<f64>, k: usize) -> Result<Vec<usize>> {
    let n = totals.len();
    if k >= n {
        return Err(Error::Invalid(format!(
            "cannot exclude {k} of {n} apps"
        )));
    }
    Ok(AopModel::from_totals(totals).ranking[..k].to_vec())
}

fn kept_columns(n: usize, excluded: &[usize]) -> Vec<usize> {
    let ex: BTreeSet<usize> = excluded.iter().copied().collect();
    (0..n).filter(|j| !ex.contains(j)).collect()
}

/// Drop the `k` apps with the largest total count. Returns the filtered
/// counts and the dropped app indices, most popular first.
pub fn exclude_popular(counts: &CountTensors, k: usize) -> Result<(CountTensors, Vec<usize>)> {
    let totals = counts.app_totals().into_iter().map(|c| c as f64).collect();
    let excluded = popularity_order(totals, k)?;
    let keep = kept_columns(counts.app_count(), &excluded);
    Ok((
        CountTensors {
            app_ids: keep.iter().map(|&j| counts.app_ids[j].clone()).collect(),
            r: counts.r.iter().map(|r| r.select_cols(&keep)).collect(),
            ..counts.clone()
        },
        excluded,
    ))
}

/// Drop the `k` apps with the largest observed X total. Remaining values are
/// kept as they are.
pub fn exclude_popular_bundle(bundle: &ObservationBundle, k: usize) -> Result<(ObservationBundle, Vec<usize>)> {
    let totals = crate::baselines::fit_aop(&bundle.x).totals;
    let excluded = popularity_order(totals, k)?;
    let keep = kept_columns(bundle.dims().apps, &excluded);
    let x = bundle
        .x
        .iter()
        .map(|x| {
            let mut out = MaskedMatrix::empty(x.rows(), keep.len());
            for i in 0..x.rows() {
                for (c, &j) in keep.iter().enumerate() {
                    if let Some(v) = x.get(i, j) {
                        out.observe(i, c, v);
                    }
                }
            }
            out
        })
        .collect();
    Ok((
        ObservationBundle {
            app_ids: keep.iter().map(|&j| bundle.app_ids[j].clone()).collect(),
            x,
            ..bundle.clone()
        },
        excluded,
    ))
}

/// Merge locations into groups: counts and POI counts summed, user sets
/// unioned. Group `g` is named after its members joined by `+`.
pub fn merge_locations(counts: &CountTensors, merge_map: &[usize]) -> Result<CountTensors> {
    let m = counts.location_count();
    if merge_map.len() != m {
        return Err(Error::shape(format!("merge map over {m} locations"), merge_map.len()));
    }
    let groups = merge_map.iter().max().map_or(0, |g| g + 1);
    let mut members = vec![Vec::new(); groups];
    for (i, &g) in merge_map.iter().enumerate() {
        members[g].push(i);
    }
    if let Some(g) = members.iter().position(Vec::is_empty) {
        return Err(Error::Invalid(format!("merge group {g} is empty")));
    }
    let (n, l) = (counts.app_count(), counts.category_count());
    let mut q = CountMatrix::zeros(groups, l);
    for (g, ms) in members.iter().enumerate() {
        for &i in ms {
            for c in 0..l {
                q.add(g, c, counts.q.get(i, c));
            }
        }
    }
    let mut r = Vec::with_capacity(counts.period_count());
    let mut users = Vec::with_capacity(counts.period_count());
    for (rt, ut) in counts.r.iter().zip(&counts.users) {
        let mut merged = CountMatrix::zeros(groups, n);
        let mut merged_users = vec![BTreeSet::new(); groups];
        for (g, ms) in members.iter().enumerate() {
            for &i in ms {
                for j in 0..n {
                    merged.add(g, j, rt.get(i, j));
                }
                merged_users[g].extend(ut[i].iter().cloned());
            }
        }
        r.push(merged);
        users.push(merged_users);
    }
    Ok(CountTensors {
        location_ids: members
            .iter()
            .map(|ms| {
                ms.iter()
                    .map(|&i| counts.location_ids[i].as_str())
                    .collect::<Vec<_>>()
                    .join("+")
            })
            .collect(),
        app_ids: counts.app_ids.clone(),
        category_names: counts.category_names.clone(),
        r,
        q,
        users,
    })
}

/// Group consecutive locations of size `group_size`, ordered by `(y, x)`
/// when coordinates are given and by index otherwise. On a grid this merges
/// horizontal neighbors.
pub fn neighbor_merge_map(m: usize, coords: Option<&[(f64, f64)]>, group_size: usize) -> Result<Vec<usize>> {
    if group_size == 0 {
        return Err(Error::Invalid("group size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..m).collect();
    if let Some(c) = coords {
        if c.len() != m {
            return Err(Error::shape(m, c.len()));
        }
        order.sort_by(|&a, &b| {
            c[a].1
                .total_cmp(&c[b].1)
                .then(c[a].0.total_cmp(&c[b].0))
                .then(a.cmp(&b))
        });
    }
    let mut map = vec![0; m];
    for (rank, &i) in order.iter().enumerate() {
        map[i] = rank / group_size;
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    /// Fraction of locations with `v_i <= threshold`.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub v: Vec<f64>,
    pub cdf: Vec<CdfPoint>,
}

impl Correlation {
    /// Median of `v`; the mean of the two middle values for even lengths.
    pub fn median(&self) -> f64 {
        let mut s = self.v.clone();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }
}

fn similarity_rows(rows: &DenseMatrix) -> DenseMatrix {
    let m = rows.rows();
    DenseMatrix::from_fn(m, m, |i, j| cosine(rows.row(i), rows.row(j)))
}

/// Per location, the cosine between its row of app-usage similarities and
/// its row of POI similarities, plus the empirical CDF at 101 thresholds.
pub fn poi_app_correlation(usage: &DenseMatrix, poi: &DenseMatrix) -> Result<Correlation> {
    let m = usage.rows();
    if m < 2 {
        return Err(Error::Invalid(format!("need at least 2 locations, got {m}")));
    }
    if poi.rows() != m {
        return Err(Error::shape(format!("{m} POI rows"), poi.rows()));
    }
    let su = similarity_rows(usage);
    let sp = similarity_rows(poi);
    let v: Vec<f64> = (0..m).map(|i| cosine(su.row(i), sp.row(i))).collect();
    let cdf = (0..=100)
        .map(|k| {
            let threshold = k as f64 / 100.0;
            let below = v.iter().filter(|&&x| x <= threshold).count();
            CdfPoint {
                threshold,
                fraction: below as f64 / m as f64,
            }
        })
        .collect();
    Ok(Correlation { v, cdf })
}

/// [`poi_app_correlation`] on raw counts.
pub fn poi_app_correlation_counts(r: &CountMatrix, q: &CountMatrix) -> Result<Correlation> {
    poi_app_correlation(&r.to_dense(), &q.to_dense())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SyntheticConfig};

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;

    #[test]
    fn metric_examples() {
        let truth = vec![vec![A, B], vec![C, D]];
        let pred = vec![vec![B, C], vec![A, B]];
        assert_eq!(topn_hitrate(&truth, &pred, 2).unwrap(), 0.5);
        assert_eq!(topn_accuracy(&truth, &pred, 2).unwrap(), 0.25);
        assert_eq!(topn_hitrate(&truth, &truth, 2).unwrap(), 1.0);
        assert_eq!(topn_accuracy(&truth, &truth, 2).unwrap(), 1.0);
        let disjoint = vec![vec![D], vec![A]];
        assert_eq!(topn_hitrate(&truth, &disjoint, 2).unwrap(), 0.0);
        assert_eq!(topn_accuracy(&[vec![A]], &[vec![A, B]], 2).unwrap(), 0.5);
        assert!(topn_hitrate(&[], &[], 2).is_err());
        assert!(topn_accuracy(&[vec![]], &[vec![A]], 1).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(usage_rmse(&[vec![1.0, 0.0]], &[vec![0.0, 0.0]]).unwrap(), 0.5);
        assert_eq!(usage_rmse(&[vec![0.3, 0.4]], &[vec![0.3, 0.4]]).unwrap(), 0.0);
        let t = vec![vec![0.2, 0.0], vec![0.0, 0.5]];
        let p = vec![vec![0.0, 0.0], vec![0.0, 0.3]];
        assert!((usage_rmse(&t, &p).unwrap() - 0.1).abs() < 1e-15);
        assert!(usage_rmse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
    }

    fn small_city(m: usize, n: usize, density: f64) -> ObservationBundle {
        generate(&SyntheticConfig {
            locations: m,
            apps: n,
            categories: 3,
            periods: 1,
            k_true: 2,
            density,
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .bundle
    }

    #[test]
    fn cell_split_partitions() {
        let b = small_city(10, 10, 1.0);
        let (train, test) = split_cells(&b, 0.5, 9).unwrap();
        assert_eq!(train.x[0].observed_count(), 50);
        assert_eq!(test[0].observed_count(), 50);
        for i in 0..10 {
            for j in 0..10 {
                assert!(train.x[0].is_observed(i, j) ^ test[0].is_observed(i, j));
            }
        }
        assert_eq!(split_cells(&b, 0.5, 9).unwrap().0, train);
        assert!(split_cells(&b, 0.001, 9).is_err());
        assert!(split_cells(&b, 0.999, 9).is_err());
    }

    #[test]
    fn location_holdout_counts() {
        let b = small_city(200, 3, 1.0);
        let (train, test, kept) = split_locations(&b, 0.1, 1).unwrap();
        assert_eq!(kept.len(), 20);
        let rows_with = |x: &MaskedMatrix| (0..200).filter(|&i| x.observed_in_row(i).next().is_some()).count();
        assert_eq!(rows_with(&train.x[0]), 20);
        assert_eq!(rows_with(&test[0]), 180);
    }

    fn counts_3() -> CountTensors {
        let users = |s: &[&str]| s.iter().map(|u| u.to_string()).collect::<BTreeSet<_>>();
        CountTensors {
            location_ids: vec!["a".into(), "b".into()],
            app_ids: vec!["x".into(), "y".into(), "z".into()],
            category_names: vec!["c".into()],
            r: vec![CountMatrix::from_rows(&[vec![5, 4, 1], vec![0, 6, 0]]).unwrap()],
            q: CountMatrix::from_rows(&[vec![2], vec![3]]).unwrap(),
            users: vec![vec![users(&["u1", "u2"]), users(&["u2", "u3"])]],
        }
    }

    #[test]
    fn exclusion_examples() {
        let c = counts_3();
        let (same, ex) = exclude_popular(&c, 0).unwrap();
        assert_eq!((same, ex), (c.clone(), vec![]));
        let (f, ex) = exclude_popular(&c, 1).unwrap();
        assert_eq!(ex, vec![1]);
        assert_eq!(f.app_ids, vec!["x".to_string(), "z".to_string()]);
        let (f, _) = exclude_popular(&c, 2).unwrap();
        assert_eq!(f.app_count(), 1);
        assert!(exclude_popular(&c, 3).is_err());
    }

    #[test]
    fn merge_examples() {
        let c = counts_3();
        assert_eq!(merge_locations(&c, &[0, 1]).unwrap(), c);
        let one = merge_locations(&c, &[0, 0]).unwrap();
        assert_eq!(one.location_ids, vec!["a+b".to_string()]);
        assert_eq!(one.r[0].row(0), &[5, 10, 1]);
        assert_eq!(one.q.row(0), &[5]);
        assert_eq!(one.users[0][0].len(), 3);
        assert!(merge_locations(&c, &[0, 2, 0][..2]).is_err());
        assert!(merge_locations(&c, &[1]).is_err());
    }

    #[test]
    fn neighbor_map_groups_rows() {
        let coords = [(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
        assert_eq!(neighbor_merge_map(4, Some(&coords), 2).unwrap(), vec![0, 0, 1, 1]);
        assert_eq!(neighbor_merge_map(3, None, 2).unwrap(), vec![0, 0, 1]);
    }

    #[test]
    fn correlation_examples() {
        let r = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let q = DenseMatrix::from_fn(3, 2, |i, j| 2.0 * r.get(i, j));
        let c = poi_app_correlation(&r, &q).unwrap();
        for v in &c.v {
            assert!((v - 1.0).abs() < 1e-12);
        }
        assert_eq!(c.cdf.len(), 101);
        assert_eq!(c.cdf[100].fraction, 1.0);

        // Two locations: usage similarity s = cos(r1, r2), POI similarity 0;
        // rows [1, s] and [1, 0] give v = 1 / sqrt(1 + s²).
        let r = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let q = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let want = 1.0 / (1.0 + s * s).sqrt();
        let c = poi_app_correlation(&r, &q).unwrap();
        assert!((c.v[0] - want).abs() < 1e-12 && (c.v[1] - want).abs() < 1e-12);

        let r = DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(poi_app_correlation(&r, &q).unwrap().v[0], 0.0);
        assert!(poi_app_correlation(&DenseMatrix::zeros(1, 2), &DenseMatrix::zeros(1, 2)).is_err());
    }
}
