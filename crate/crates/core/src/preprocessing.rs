//! Count tensors to model inputs: the location-app matrix X (log-normalized,
//! masked where nothing was observed), the TF-IDF location-POI matrix Y and
//! the user-overlap location-correlation matrix Z.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::CountTensors;
use crate::numerics::{read_matrix_csv, write_matrix_csv, CountMatrix, DenseMatrix, MaskedMatrix};

/// Model inputs for all periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub location_ids: Vec<String>,
    pub app_ids: Vec<String>,
    pub category_names: Vec<String>,
    /// Location-app matrix per period.
    pub x: Vec<MaskedMatrix>,
    /// Location-correlation matrix per period.
    pub z: Vec<DenseMatrix>,
    /// Location-POI matrix, shared by all periods.
    pub y: DenseMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub locations: usize,
    pub apps: usize,
    pub categories: usize,
    pub periods: usize,
}

impl ObservationBundle {
    pub fn dims(&self) -> Dims {
        Dims {
            locations: self.location_ids.len(),
            apps: self.app_ids.len(),
            categories: self.category_names.len(),
            periods: self.x.len(),
        }
    }

    pub fn observed_count(&self) -> usize {
        self.x.iter().map(MaskedMatrix::observed_count).sum()
    }

    /// Check shapes and value ranges.
    pub fn validate(&self) -> Result<()> {
        let d = self.dims();
        if d.periods == 0 {
            return Err(Error::Invalid("bundle has no periods".into()));
        }
        if self.z.len() != d.periods {
            return Err(Error::shape(format!("{} Z periods", d.periods), self.z.len()));
        }
        if self.y.shape() != (d.locations, d.categories) {
            return Err(Error::shape(
                format!("Y {}x{}", d.locations, d.categories),
                format!("{:?}", self.y.shape()),
            ));
        }
        if !self.y.is_finite() || self.y.values().iter().any(|&v| v < 0.0) {
            return Err(Error::Invalid("Y must be finite and non-negative".into()));
        }
        for t in 0..d.periods {
            if self.x[t].shape() != (d.locations, d.apps) {
                return Err(Error::shape(
                    format!("X {}x{}", d.locations, d.apps),
                    format!("{:?}", self.x[t].shape()),
                )
                .in_period(t));
            }
            if !self.x[t].all_observed_within(0.0, 1.0) {
                return Err(Error::Invalid("X values outside [0,1]".into()).in_period(t));
            }
            if self.z[t].shape() != (d.locations, d.locations) {
                return Err(Error::shape(
                    format!("Z {0}x{0}", d.locations),
                    format!("{:?}", self.z[t].shape()),
                )
                .in_period(t));
            }
        }
        Ok(())
    }
}

/// `X_ij = ln r_ij / max ln r`, over the observed (`r_ij > 0`) cells.
///
/// A matrix without any observed cell comes back fully masked. A matrix
/// whose observed counts are all 1 has no usable normalizer and is rejected.
pub fn build_location_app(r: &CountMatrix) -> Result<MaskedMatrix> {
    normalize_log_usage(&r.to_dense())
}

/// [`build_location_app`] over real-valued usage amounts. Positive entries
/// are observed and must be at least 1.
pub fn normalize_log_usage(r: &DenseMatrix) -> Result<MaskedMatrix> {
    let (m, n) = r.shape();
    let mut out = MaskedMatrix::empty(m, n);
    let mut max = f64::NEG_INFINITY;
    for &v in r.values() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Invalid(format!("usage amount {v} is not a count")));
        }
        if v > 0.0 {
            if v < 1.0 {
                return Err(Error::Invalid(format!(
                    "observed usage amount {v} below 1 has a negative log"
                )));
            }
            max = max.max(v);
        }
    }
    if max == f64::NEG_INFINITY {
        return Ok(out);
    }
    let norm = max.ln();
    if norm <= 0.0 {
        return Err(Error::Degenerate(
            "every observed count is 1, so max ln(r) = 0".into(),
        ));
    }
    for i in 0..m {
        for j in 0..n {
            let v = r.get(i, j);
            if v > 0.0 {
                out.observe(i, j, v.ln() / norm);
            }
        }
    }
    Ok(out)
}

/// TF-IDF of POI category counts:
/// `Y_ip = q_ip / sum_p q_ip * ln(m / |{i : q_ip > 0}|)`.
pub fn build_location_poi(q: &CountMatrix) -> DenseMatrix {
    let (m, l) = (q.rows(), q.cols());
    let present: Vec<usize> = (0..l)
        .map(|p| (0..m).filter(|&i| q.get(i, p) > 0).count())
        .collect();
    let idf: Vec<f64> = present
        .iter()
        .map(|&df| {
            if df == 0 {
                0.0
            } else {
                (m as f64 / df as f64).ln()
            }
        })
        .collect();
    let mut y = DenseMatrix::zeros(m, l);
    for i in 0..m {
        let total: u64 = q.row(i).iter().sum();
        if total == 0 {
            continue;
        }
        for p in 0..l {
            y.set(i, p, q.get(i, p) as f64 / total as f64 * idf[p]);
        }
    }
    y
}

/// Dice overlap of user sets: `Z_ij = 2|U_i ∩ U_j| / (|U_i| + |U_j|)`, zero
/// when both are empty.
pub fn build_location_correlation(users: &[BTreeSet<String>]) -> DenseMatrix {
    let m = users.len();
    let mut z = DenseMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let denom = users[i].len() + users[j].len();
            let v = if denom == 0 {
                0.0
            } else if i == j {
                1.0
            } else {
                let (small, large) = if users[i].len() <= users[j].len() {
                    (&users[i], &users[j])
                } else {
                    (&users[j], &users[i])
                };
                let common = small.iter().filter(|u| large.contains(*u)).count();
                2.0 * common as f64 / denom as f64
            };
            z.set(i, j, v);
            z.set(j, i, v);
        }
    }
    z
}

/// Apply the three builders per period. X is normalized independently in
/// each period.
pub fn build_bundle(counts: &CountTensors) -> Result<ObservationBundle> {
    counts.validate()?;
    let y = build_location_poi(&counts.q);
    let mut x = Vec::with_capacity(counts.period_count());
    let mut z = Vec::with_capacity(counts.period_count());
    for (t, (r, users)) in counts.r.iter().zip(&counts.users).enumerate() {
        x.push(build_location_app(r).map_err(|e| e.in_period(t))?);
        z.push(build_location_correlation(users));
    }
    Ok(ObservationBundle {
        location_ids: counts.location_ids.clone(),
        app_ids: counts.app_ids.clone(),
        category_names: counts.category_names.clone(),
        x,
        z,
        y,
    })
}

/// Manifest written beside the bundle CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub locations: usize,
    pub apps: usize,
    pub categories: usize,
    pub periods: usize,
    pub location_vocabulary: String,
    pub app_vocabulary: String,
    pub category_vocabulary: String,
    pub x_files: Vec<String>,
    pub z_files: Vec<String>,
    pub y_file: String,
    pub preprocessing: PreprocessingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingParams {
    pub log_base: String,
    pub x_normalizer: String,
    pub y_weighting: String,
    pub z_similarity: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Default for PreprocessingParams {
    fn default() -> Self {
        Self {
            log_base: "e".into(),
            x_normalizer: "per-period global max of ln(r) over observed cells".into(),
            y_weighting: "tf-idf, idf = ln(m / locations with category)".into(),
            z_similarity: "dice overlap of per-period user sets; 0 when both empty".into(),
            notes: Vec::new(),
        }
    }
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = lines.join("\n");
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Write the bundle as one CSV per matrix per period plus `manifest.json`.
pub fn write_bundle(
    bundle: &ObservationBundle,
    dir: &Path,
    params: &PreprocessingParams,
) -> Result<BundleManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = bundle.dims();
    let manifest = BundleManifest {
        locations: d.locations,
        apps: d.apps,
        categories: d.categories,
        periods: d.periods,
        location_vocabulary: "locations.txt".into(),
        app_vocabulary: "apps.txt".into(),
        category_vocabulary: "categories.txt".into(),
        x_files: (0..d.periods).map(|t| format!("x_{t}.csv")).collect(),
        z_files: (0..d.periods).map(|t| format!("z_{t}.csv")).collect(),
        y_file: "y.csv".into(),
        preprocessing: params.clone(),
    };
    write_lines(&dir.join(&manifest.location_vocabulary), &bundle.location_ids)?;
    write_lines(&dir.join(&manifest.app_vocabulary), &bundle.app_ids)?;
    write_lines(&dir.join(&manifest.category_vocabulary), &bundle.category_names)?;
    for t in 0..d.periods {
        let x = &bundle.x[t];
        write_matrix_csv(
            create(&dir.join(&manifest.x_files[t]))?,
            &bundle.location_ids,
            &bundle.app_ids,
            |i, j| x.get(i, j),
        )?;
        let z = &bundle.z[t];
        write_matrix_csv(
            create(&dir.join(&manifest.z_files[t]))?,
            &bundle.location_ids,
            &bundle.location_ids,
            |i, j| Some(z.get(i, j)),
        )?;
    }
    write_matrix_csv(
        create(&dir.join(&manifest.y_file))?,
        &bundle.location_ids,
        &bundle.category_names,
        |i, j| Some(bundle.y.get(i, j)),
    )?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<(ObservationBundle, BundleManifest)> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: BundleManifest = serde_json::from_str(&text)?;
    let y_file = read_matrix_csv(open(&dir.join(&manifest.y_file))?)?;
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut app_ids = Vec::new();
    for t in 0..manifest.periods {
        let xf = read_matrix_csv(open(&dir.join(&manifest.x_files[t]))?)?;
        app_ids = xf.col_ids.clone();
        x.push(xf.to_masked()?);
        z.push(read_matrix_csv(open(&dir.join(&manifest.z_files[t]))?)?.to_dense()?);
    }
    let bundle = ObservationBundle {
        location_ids: y_file.row_ids.clone(),
        app_ids,
        category_names: y_file.col_ids.clone(),
        y: y_file.to_dense()?,
        x,
        z,
    };
    bundle.validate()?;
    Ok((bundle, manifest))
}
