//! Usage records, station/POI listings and count aggregation.
//!
//! POIs are assigned to base stations by nearest-station classification,
//! which is exactly membership in the stations' Voronoi cells. Equidistant
//! POIs go to the station with the lexicographically smallest id.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::CountMatrix;

/// The 17 POI types used by default as the category vocabulary.
pub const DEFAULT_CATEGORIES: [&str; 17] = [
    "food",
    "hotel",
    "shopping",
    "life_service",
    "beauty",
    "tourist_attraction",
    "leisure",
    "sports",
    "education",
    "culture_media",
    "medical",
    "car_service",
    "transport",
    "finance",
    "real_estate",
    "company",
    "government",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub device_id: String,
    pub station_id: String,
    pub app_id: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poi {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub category: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityGeometry {
    pub stations: Vec<Station>,
    /// POI id -> station id.
    pub poi_assignment: BTreeMap<String, String>,
    /// POI id -> category index.
    pub poi_category: BTreeMap<String, usize>,
}

impl CityGeometry {
    pub fn station_ids(&self) -> Vec<String> {
        self.stations.iter().map(|s| s.id.clone()).collect()
    }
}

/// Maps a timestamp to its period index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodMap {
    /// Hour of day folded over all days, 24 periods.
    HourOfDay,
    /// Day split into `periods` equal slices, folded over all days.
    DaySlices { periods: usize },
    /// Single period.
    Static,
}

impl Default for PeriodMap {
    fn default() -> Self {
        PeriodMap::HourOfDay
    }
}

impl PeriodMap {
    pub fn period_count(&self) -> usize {
        match *self {
            PeriodMap::HourOfDay => 24,
            PeriodMap::DaySlices { periods } => periods.max(1),
            PeriodMap::Static => 1,
        }
    }

    pub fn period_of(&self, timestamp: i64) -> usize {
        let secs = timestamp.rem_euclid(86_400) as usize;
        match *self {
            PeriodMap::HourOfDay => secs / 3600,
            PeriodMap::DaySlices { periods } => secs * periods.max(1) / 86_400,
            PeriodMap::Static => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountTensors {
    pub location_ids: Vec<String>,
    pub app_ids: Vec<String>,
    pub category_names: Vec<String>,
    /// `r[t]` is the location x app count matrix of period `t`.
    pub r: Vec<CountMatrix>,
    /// Location x POI-category counts.
    pub q: CountMatrix,
    /// `users[t][i]` holds the distinct devices seen at location `i` in period `t`.
    pub users: Vec<Vec<BTreeSet<String>>>,
}

impl CountTensors {
    pub fn period_count(&self) -> usize {
        self.r.len()
    }

    pub fn location_count(&self) -> usize {
        self.location_ids.len()
    }

    pub fn app_count(&self) -> usize {
        self.app_ids.len()
    }

    pub fn category_count(&self) -> usize {
        self.category_names.len()
    }

    pub fn total_records(&self) -> u64 {
        self.r.iter().map(CountMatrix::total).sum()
    }

    /// Per-app totals summed over all periods and locations.
    pub fn app_totals(&self) -> Vec<u64> {
        let mut totals = vec![0u64; self.app_count()];
        for r in &self.r {
            for (t, c) in totals.iter_mut().zip(r.column_totals()) {
                *t += c;
            }
        }
        totals
    }

    /// Sum counts and union user sets over all periods.
    pub fn merge_periods(&self) -> CountTensors {
        let m = self.location_count();
        let mut r = CountMatrix::zeros(m, self.app_count());
        let mut users = vec![BTreeSet::new(); m];
        for (rt, ut) in self.r.iter().zip(&self.users) {
            for i in 0..m {
                for j in 0..self.app_count() {
                    r.add(i, j, rt.get(i, j));
                }
                users[i].extend(ut[i].iter().cloned());
            }
        }
        CountTensors {
            location_ids: self.location_ids.clone(),
            app_ids: self.app_ids.clone(),
            category_names: self.category_names.clone(),
            r: vec![r],
            q: self.q.clone(),
            users: vec![users],
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: CountTensors = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, l) = (self.location_count(), self.app_count(), self.category_count());
        if self.users.len() != self.r.len() {
            return Err(Error::shape(
                format!("{} user-set periods", self.r.len()),
                self.users.len(),
            ));
        }
        for (t, (r, u)) in self.r.iter().zip(&self.users).enumerate() {
            if r.rows() != m || r.cols() != n {
                return Err(
                    Error::shape(format!("{m}x{n}"), format!("{}x{}", r.rows(), r.cols()))
                        .in_period(t),
                );
            }
            if u.len() != m {
                return Err(Error::shape(format!("{m} user sets"), u.len()).in_period(t));
            }
        }
        if self.q.rows() != m || self.q.cols() != l {
            return Err(Error::shape(
                format!("q {m}x{l}"),
                format!("{}x{}", self.q.rows(), self.q.cols()),
            ));
        }
        Ok(())
    }
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Iterate non-blank CSV lines, skipping a leading header whose first cell
/// equals `first_header`.
fn for_each_line<R: Read>(
    input: R,
    first_header: &str,
    mut f: impl FnMut(usize, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut rdr = csv_reader(input);
    let mut rec = csv::StringRecord::new();
    let mut first = true;
    loop {
        let more = rdr.read_record(&mut rec).map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if first && rec.get(0) == Some(first_header) {
            first = false;
            continue;
        }
        first = false;
        f(line, &rec)?;
    }
    Ok(())
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<&'a str> {
    match rec.get(idx) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(Error::Parse {
            line,
            message: format!("empty {name}"),
        }),
    }
}

fn expect_fields(rec: &csv::StringRecord, n: usize, line: usize) -> Result<()> {
    if rec.len() != n {
        return Err(Error::Parse {
            line,
            message: format!("expected {n} fields, found {}", rec.len()),
        });
    }
    Ok(())
}

fn parse_real(s: &str, name: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("malformed {name} {s:?}"),
        })
}

/// Parse `device_id,station_id,app_id,timestamp` lines. A header line is
/// optional.
pub fn parse_records<R: Read>(input: R) -> Result<Vec<UsageRecord>> {
    let mut out = Vec::new();
    for_each_line(input, "device_id", |line, rec| {
        expect_fields(rec, 4, line)?;
        let ts = field(rec, 3, "timestamp", line)?;
        let timestamp = ts.parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("malformed timestamp {ts:?}"),
        })?;
        out.push(UsageRecord {
            device_id: field(rec, 0, "device_id", line)?.to_string(),
            station_id: field(rec, 1, "station_id", line)?.to_string(),
            app_id: field(rec, 2, "app_id", line)?.to_string(),
            timestamp,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Check every record falls in `[start, end)`.
pub fn check_window(records: &[UsageRecord], start: i64, end: i64) -> Result<()> {
    if let Some((idx, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.timestamp < start || r.timestamp >= end)
    {
        return Err(Error::Invalid(format!(
            "record {idx} timestamp {} outside [{start}, {end})",
            r.timestamp
        )));
    }
    Ok(())
}

pub fn write_records<W: Write>(out: W, records: &[UsageRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "station_id", "app_id", "timestamp"])?;
    for r in records {
        w.write_record([
            r.device_id.as_str(),
            r.station_id.as_str(),
            r.app_id.as_str(),
            &r.timestamp.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<records>", e))?;
    Ok(())
}

/// Parse `station_id,x,y` lines.
pub fn parse_stations<R: Read>(input: R) -> Result<Vec<Station>> {
    let mut out = Vec::new();
    for_each_line(input, "station_id", |line, rec| {
        expect_fields(rec, 3, line)?;
        out.push(Station {
            id: field(rec, 0, "station_id", line)?.to_string(),
            x: parse_real(field(rec, 1, "x", line)?, "x", line)?,
            y: parse_real(field(rec, 2, "y", line)?, "y", line)?,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Parse `poi_id,x,y,category` lines; `category` is either an index or a
/// name from `categories`.
pub fn parse_pois<R: Read>(input: R, categories: &[String]) -> Result<Vec<Poi>> {
    let mut out = Vec::new();
    for_each_line(input, "poi_id", |line, rec| {
        expect_fields(rec, 4, line)?;
        let cat = field(rec, 3, "category", line)?;
        let category = match categories.iter().position(|c| c == cat) {
            Some(idx) => idx,
            None => cat
                .parse::<usize>()
                .ok()
                .filter(|&c| c < categories.len())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("unknown category {cat:?}"),
                })?,
        };
        out.push(Poi {
            id: field(rec, 0, "poi_id", line)?.to_string(),
            x: parse_real(field(rec, 1, "x", line)?, "x", line)?,
            y: parse_real(field(rec, 2, "y", line)?, "y", line)?,
            category,
        });
        Ok(())
    })?;
    Ok(out)
}

/// One category name per non-empty line.
pub fn parse_categories<R: Read>(mut input: R) -> Result<Vec<String>> {
    let mut s = String::new();
    input
        .read_to_string(&mut s)
        .map_err(|e| Error::io("<categories>", e))?;
    Ok(s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn default_categories() -> Vec<String> {
    DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
}

/// Assign every POI to its nearest station.
pub fn assign_pois_voronoi(stations: &[Station], pois: &[Poi]) -> Result<CityGeometry> {
    if stations.is_empty() {
        return Err(Error::Invalid("no stations".into()));
    }
    let mut seen = BTreeSet::new();
    let mut dup = Vec::new();
    for s in stations {
        if !seen.insert(s.id.as_str()) {
            dup.push(s.id.clone());
        }
    }
    if !dup.is_empty() {
        return Err(Error::Invalid(format!(
            "duplicate station ids: {}",
            dup.join(",")
        )));
    }
    for (a, s) in stations.iter().enumerate() {
        if let Some(o) = stations[a + 1..].iter().find(|o| o.x == s.x && o.y == s.y) {
            return Err(Error::Invalid(format!(
                "stations {} and {} share coordinates",
                s.id, o.id
            )));
        }
    }

    let mut poi_assignment = BTreeMap::new();
    let mut poi_category = BTreeMap::new();
    for p in pois {
        let mut best: Option<(&Station, f64)> = None;
        for s in stations {
            let (dx, dy) = (p.x - s.x, p.y - s.y);
            let d = dx * dx + dy * dy;
            best = match best {
                None => Some((s, d)),
                Some((b, bd)) if d < bd || (d == bd && s.id < b.id) => Some((s, d)),
                keep => keep,
            };
        }
        let (station, _) = best.expect("at least one station");
        poi_assignment.insert(p.id.clone(), station.id.clone());
        poi_category.insert(p.id.clone(), p.category);
    }
    Ok(CityGeometry {
        stations: stations.to_vec(),
        poi_assignment,
        poi_category,
    })
}

/// Count records per (period, location, app), POIs per (location, category)
/// and distinct devices per (period, location).
///
/// Locations are the geometry's stations in listed order; apps follow
/// `app_ids`.
pub fn aggregate_counts(
    records: &[UsageRecord],
    geometry: &CityGeometry,
    period_map: PeriodMap,
    app_ids: &[String],
    category_names: &[String],
) -> Result<CountTensors> {
    let location_ids = geometry.station_ids();
    let loc_index: HashMap<&str, usize> = location_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let app_index: HashMap<&str, usize> = app_ids
        .iter()
        .enumerate()
        .map(|(j, s)| (s.as_str(), j))
        .collect();

    let mut unknown_stations = BTreeSet::new();
    let mut unknown_apps = BTreeSet::new();
    for r in records {
        if !loc_index.contains_key(r.station_id.as_str()) {
            unknown_stations.insert(r.station_id.as_str());
        }
        if !app_index.contains_key(r.app_id.as_str()) {
            unknown_apps.insert(r.app_id.as_str());
        }
    }
    if !unknown_stations.is_empty() || !unknown_apps.is_empty() {
        let mut parts = Vec::new();
        if !unknown_stations.is_empty() {
            parts.push(format!(
                "stations [{}]",
                unknown_stations.into_iter().collect::<Vec<_>>().join(",")
            ));
        }
        if !unknown_apps.is_empty() {
            parts.push(format!(
                "apps [{}]",
                unknown_apps.into_iter().collect::<Vec<_>>().join(",")
            ));
        }
        return Err(Error::Unknown(parts.join("; ")));
    }

    let (m, n, l, periods) = (
        location_ids.len(),
        app_ids.len(),
        category_names.len(),
        period_map.period_count(),
    );
    let mut r = vec![CountMatrix::zeros(m, n); periods];
    let mut users = vec![vec![BTreeSet::new(); m]; periods];
    for rec in records {
        let t = period_map.period_of(rec.timestamp);
        let i = loc_index[rec.station_id.as_str()];
        let j = app_index[rec.app_id.as_str()];
        r[t].add(i, j, 1);
        users[t][i].insert(rec.device_id.clone());
    }

    let mut q = CountMatrix::zeros(m, l);
    for (poi, station) in &geometry.poi_assignment {
        let cat = geometry.poi_category[poi];
        if cat >= l {
            return Err(Error::OutOfRange {
                what: "POI category",
                index: cat,
                bound: l,
            });
        }
        q.add(loc_index[station.as_str()], cat, 1);
    }

    Ok(CountTensors {
        location_ids,
        app_ids: app_ids.to_vec(),
        category_names: category_names.to_vec(),
        r,
        q,
        users,
    })
}

/// Apps in order of first appearance in the records.
pub fn app_vocabulary(records: &[UsageRecord]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in records {
        if seen.insert(r.app_id.as_str()) {
            out.push(r.app_id.clone());
        }
    }
    out
}
