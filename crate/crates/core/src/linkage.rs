//! Station matching and weekly exposure aggregation.
//!
//! Weeks are fixed 7-day blocks counted from [`EPOCH`]; they are not ISO
//! weeks.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;

use chrono::{Datelike, Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{Category, ColumnData, ColumnSpec, DataTable};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// First day of week 0.
pub const EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(2013, 1, 1) {
    Some(d) => d,
    None => panic!("invalid epoch"),
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lat.is_finite() && self.lon.is_finite() && self.lat.abs() <= 90.0 && self.lon.abs() <= 180.0 {
            Ok(())
        } else {
            Err(Error::InvalidCoordinate {
                lat: self.lat,
                lon: self.lon,
            })
        }
    }
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: String,
    pub location: GeoPoint,
    /// Daily series per variable, dates strictly increasing.
    pub series: BTreeMap<String, Vec<(NaiveDate, Option<f64>)>>,
}

impl Station {
    pub fn reports(&self, variable: &str) -> bool {
        self.series.get(variable).is_some_and(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostcodeLocation {
    pub postcode: String,
    pub location: GeoPoint,
}

/// Nearest station reporting `variable`; ties go to the smallest id.
pub fn nearest_station<'a>(loc: &PostcodeLocation, stations: &'a [Station], variable: &str) -> Result<&'a Station> {
    nearest_by(loc.location, stations.iter().filter(|s| s.reports(variable)))?
        .ok_or_else(|| Error::NoStation(variable.to_string()))
}

fn nearest_by<'a>(origin: GeoPoint, candidates: impl Iterator<Item = &'a Station>) -> Result<Option<&'a Station>> {
    let mut best: Option<(f64, &Station)> = None;
    for s in candidates {
        let d = haversine_km(origin, s.location)?;
        best = match best {
            Some((bd, bs)) if bd < d || (bd == d && bs.id <= s.id) => Some((bd, bs)),
            _ => Some((d, s)),
        };
    }
    Ok(best.map(|(_, s)| s))
}

pub fn week_index_of(date: NaiveDate) -> Result<u32> {
    let days = (date - EPOCH).num_days();
    if days < 0 {
        return Err(Error::BeforeEpoch(date));
    }
    Ok((days / 7) as u32)
}

pub fn week_start(week_index: u32) -> NaiveDate {
    EPOCH + Duration::days(7 * i64::from(week_index))
}

/// Week of the calendar year of `week_start`, in `1..=52`; day 365/366 folds into 52.
pub fn week_of_year(week_start: NaiveDate) -> u32 {
    ((week_start.ordinal() - 1) / 7 + 1).min(52)
}

/// One variable's data for one week.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekFragment {
    pub week_index: u32,
    pub mean: f64,
    pub coverage: u8,
    pub daily: [Option<f64>; 7],
}

/// Groups a daily series into 7-day blocks from `epoch`; weeks with no observed day are omitted.
pub fn weekly_aggregate(series: &[(NaiveDate, Option<f64>)], epoch: NaiveDate) -> Result<Vec<WeekFragment>> {
    let mut weeks: BTreeMap<u32, [Option<f64>; 7]> = BTreeMap::new();
    for &(date, value) in series {
        let days = (date - epoch).num_days();
        if days < 0 {
            return Err(Error::BeforeEpoch(date));
        }
        let slot = weeks.entry((days / 7) as u32).or_insert([None; 7]);
        slot[(days % 7) as usize] = value;
    }
    Ok(weeks
        .into_iter()
        .filter_map(|(week_index, daily)| {
            let observed: Vec<f64> = daily.iter().flatten().copied().collect();
            (!observed.is_empty()).then(|| WeekFragment {
                week_index,
                mean: observed.iter().sum::<f64>() / observed.len() as f64,
                coverage: observed.len() as u8,
                daily,
            })
        })
        .collect())
}

/// Fraction of observed days strictly above `threshold`.
pub fn threshold_ratio(daily: &[Option<f64>; 7], threshold: f64) -> Result<f64> {
    let observed: Vec<f64> = daily.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::AllMissing);
    }
    Ok(observed.iter().filter(|&&v| v > threshold).count() as f64 / observed.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StationMatching {
    /// Each variable comes from the nearest station reporting it.
    #[default]
    PerVariable,
    /// All variables come from the single nearest station.
    SingleStation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkageConfig {
    pub variables: Vec<String>,
    /// Daily guideline per pollutant; a ratio column exists only for these.
    pub thresholds: BTreeMap<String, f64>,
    pub matching: StationMatching,
}

impl Default for LinkageConfig {
    fn default() -> Self {
        Self {
            variables: default_variables(),
            thresholds: default_thresholds(),
            matching: StationMatching::PerVariable,
        }
    }
}

pub fn default_variables() -> Vec<String> {
    [
        "pm10",
        "no2",
        "wind_speed",
        "humidity",
        "precipitation",
        "temp_min",
        "temp_max",
        "temp_mean",
    ]
    .map(String::from)
    .to_vec()
}

/// WHO 2021 daily guideline levels (µg/m³).
pub fn default_thresholds() -> BTreeMap<String, f64> {
    [("pm2_5", 15.0), ("pm10", 45.0), ("no2", 25.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

pub fn mean_column(variable: &str) -> String {
    format!("{variable}_mean")
}

pub fn coverage_column(variable: &str) -> String {
    format!("{variable}_coverage")
}

pub fn ratio_column(variable: &str) -> String {
    format!("{variable}_ratio")
}

/// Variables that receive a ratio column.
pub fn ratio_variables(config: &LinkageConfig) -> Vec<&str> {
    config
        .variables
        .iter()
        .filter(|v| config.thresholds.contains_key(v.as_str()))
        .map(String::as_str)
        .collect()
}

pub fn exposure_schema(config: &LinkageConfig) -> Vec<ColumnSpec> {
    let mut schema = vec![
        ColumnSpec::categorical("patient_id", Category::Meta),
        ColumnSpec::numeric("week_index", Category::Meta),
    ];
    for v in &config.variables {
        schema.push(ColumnSpec::numeric(mean_column(v), Category::Environmental));
        schema.push(ColumnSpec::numeric(coverage_column(v), Category::Meta));
    }
    for v in ratio_variables(config) {
        schema.push(ColumnSpec::numeric(ratio_column(v), Category::Environmental));
    }
    schema
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageOutput {
    pub table: DataTable,
    /// Per-patient problems that did not stop processing.
    pub diagnostics: Vec<String>,
}

type WeekCells = BTreeMap<u32, BTreeMap<String, (f64, u8, Option<f64>)>>;

/// A patient to link, optionally restricted to an inclusive week range.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkRequest {
    pub id: String,
    pub postcode: String,
    pub weeks: Option<(u32, u32)>,
}

impl LinkRequest {
    pub fn new(id: impl Into<String>, postcode: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            postcode: postcode.into(),
            weeks: None,
        }
    }

    /// Keeps the weeks overlapping `[from, to]` plus the week before `from`.
    pub fn with_dates(mut self, from: NaiveDate, to: NaiveDate) -> Self {
        let lo = week_index_of(from.max(EPOCH)).unwrap_or(0).saturating_sub(1);
        let hi = week_index_of(to.max(EPOCH)).unwrap_or(0);
        self.weeks = Some((lo, hi));
        self
    }
}

fn link_patient(
    postcode: &str,
    window: Option<(u32, u32)>,
    stations: &[Station],
    lookup: &HashMap<&str, GeoPoint>,
    fragments: &HashMap<(String, String), Vec<WeekFragment>>,
    config: &LinkageConfig,
) -> std::result::Result<WeekCells, String> {
    let location = *lookup
        .get(postcode)
        .ok_or_else(|| format!("postcode `{postcode}` absent from lookup"))?;
    let loc = PostcodeLocation {
        postcode: postcode.to_string(),
        location,
    };
    let single = match config.matching {
        StationMatching::SingleStation => nearest_by(location, stations.iter()).map_err(|e| e.to_string())?,
        StationMatching::PerVariable => None,
    };
    let mut weeks: WeekCells = BTreeMap::new();
    for v in &config.variables {
        let station = match config.matching {
            StationMatching::PerVariable => match nearest_station(&loc, stations, v) {
                Ok(s) => s,
                Err(_) => continue,
            },
            StationMatching::SingleStation => match single {
                Some(s) => s,
                None => continue,
            },
        };
        let Some(frags) = fragments.get(&(station.id.clone(), v.clone())) else {
            continue;
        };
        let range = match window {
            Some((lo, hi)) => {
                let start = frags.partition_point(|f| f.week_index < lo);
                let end = frags.partition_point(|f| f.week_index <= hi);
                &frags[start..end.max(start)]
            }
            None => &frags[..],
        };
        for f in range {
            let ratio = config
                .thresholds
                .get(v)
                .map(|&t| threshold_ratio(&f.daily, t).expect("fragment has coverage > 0"));
            weeks
                .entry(f.week_index)
                .or_default()
                .insert(v.clone(), (f.mean, f.coverage, ratio));
        }
    }
    Ok(weeks)
}

/// One row per (patient, week) that has data for at least one variable.
///
/// Patients whose postcode is unknown are reported in `diagnostics` and skipped.
pub fn build_exposure_table(
    patients: &[LinkRequest],
    stations: &[Station],
    lookup: &[PostcodeLocation],
    config: &LinkageConfig,
) -> Result<LinkageOutput> {
    for s in stations {
        s.location.validate()?;
    }
    let lookup_map: HashMap<&str, GeoPoint> = lookup.iter().map(|p| (p.postcode.as_str(), p.location)).collect();

    let mut fragments = HashMap::new();
    for s in stations {
        for (v, series) in &s.series {
            if config.variables.contains(v) {
                fragments.insert((s.id.clone(), v.clone()), weekly_aggregate(series, EPOCH)?);
            }
        }
    }

    let mut ordered: Vec<&LinkRequest> = patients.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let linked: Vec<(String, std::result::Result<WeekCells, String>)> = ordered
        .par_iter()
        .map(|p| {
            let cells = link_patient(&p.postcode, p.weeks, stations, &lookup_map, &fragments, config);
            (p.id.clone(), cells)
        })
        .collect();

    let schema = exposure_schema(config);
    let ratio_vars = ratio_variables(config);
    let mut ids: Vec<std::sync::Arc<str>> = Vec::new();
    let mut id_codes = Vec::new();
    let mut week_col = Vec::new();
    let mut means: Vec<Vec<Option<f64>>> = vec![Vec::new(); config.variables.len()];
    let mut coverage: Vec<Vec<Option<f64>>> = vec![Vec::new(); config.variables.len()];
    let mut ratios: Vec<Vec<Option<f64>>> = vec![Vec::new(); ratio_vars.len()];
    let mut diagnostics = Vec::new();

    for (id, result) in linked {
        let weeks = match result {
            Ok(w) => w,
            Err(msg) => {
                log::warn!("patient {id}: {msg}");
                diagnostics.push(format!("patient {id}: {msg}"));
                continue;
            }
        };
        let code = ids.len() as u32;
        ids.push(id.as_str().into());
        for (week, cells) in weeks {
            id_codes.push(Some(code));
            week_col.push(Some(f64::from(week)));
            for (i, v) in config.variables.iter().enumerate() {
                let cell = cells.get(v);
                means[i].push(cell.map(|c| c.0));
                coverage[i].push(Some(f64::from(cell.map_or(0, |c| c.1))));
            }
            for (i, v) in ratio_vars.iter().enumerate() {
                ratios[i].push(cells.get(*v).and_then(|c| c.2));
            }
        }
    }

    let mut columns = vec![
        ColumnData::Categorical {
            levels: ids,
            codes: id_codes,
        },
        ColumnData::Numeric(week_col),
    ];
    for (m, c) in means.into_iter().zip(coverage) {
        columns.push(ColumnData::Numeric(m));
        columns.push(ColumnData::Numeric(c));
    }
    columns.extend(ratios.into_iter().map(ColumnData::Numeric));
    Ok(LinkageOutput {
        table: DataTable::new(schema, columns)?,
        diagnostics,
    })
}

#[derive(Debug, Deserialize)]
struct StationRecord {
    station_id: String,
    lat: f64,
    lon: f64,
    date: NaiveDate,
    variable: String,
    value: String,
}

/// Reads the long-format station CSV: `station_id,lat,lon,date,variable,value`.
pub fn read_stations<R: Read>(source: R, missing_tokens: &[String]) -> Result<Vec<Station>> {
    let mut reader = csv::Reader::from_reader(source);
    let mut stations: BTreeMap<String, Station> = BTreeMap::new();
    for (row, rec) in reader.deserialize::<StationRecord>().enumerate() {
        let rec = rec?;
        let location = GeoPoint::new(rec.lat, rec.lon)?;
        let value = if missing_tokens.iter().any(|t| t == rec.value.trim()) {
            None
        } else {
            Some(
                rec.value
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::cell(row, "value", format!("cannot parse `{}`", rec.value)))?,
            )
        };
        let station = stations.entry(rec.station_id.clone()).or_insert_with(|| Station {
            id: rec.station_id.clone(),
            location,
            series: BTreeMap::new(),
        });
        if station.location != location {
            return Err(Error::cell(row, "lat", format!("station {} changes location", rec.station_id)));
        }
        station.series.entry(rec.variable).or_default().push((rec.date, value));
    }
    for s in stations.values_mut() {
        for (v, series) in &mut s.series {
            series.sort_by_key(|(d, _)| *d);
            if series.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidArgument(format!(
                    "station {} has duplicate dates for {v}",
                    s.id
                )));
            }
        }
    }
    Ok(stations.into_values().collect())
}

#[derive(Debug, Deserialize)]
struct PostcodeRecord {
    postcode: String,
    lat: f64,
    lon: f64,
}

/// Reads `postcode,lat,lon`.
pub fn read_postcodes<R: Read>(source: R) -> Result<Vec<PostcodeLocation>> {
    let mut reader = csv::Reader::from_reader(source);
    reader
        .deserialize::<PostcodeRecord>()
        .map(|rec| {
            let rec = rec?;
            Ok(PostcodeLocation {
                postcode: rec.postcode,
                location: GeoPoint::new(rec.lat, rec.lon)?,
            })
        })
        .collect()
}

/// Distinct variables present across `stations`.
pub fn station_variables(stations: &[Station]) -> BTreeSet<String> {
    stations.iter().flat_map(|s| s.series.keys().cloned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    fn day(n: i64) -> NaiveDate {
        EPOCH + Duration::days(n)
    }

    fn station(id: &str, lat: f64, lon: f64, vars: &[&str]) -> Station {
        Station {
            id: id.into(),
            location: pt(lat, lon),
            series: vars.iter().map(|v| (v.to_string(), vec![(day(0), Some(1.0))])).collect(),
        }
    }

    /// Spherical law of cosines; independent of the haversine route.
    fn cosine_law_km(a: GeoPoint, b: GeoPoint) -> f64 {
        let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
        let dl = (b.lon - a.lon).to_radians();
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
        EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn haversine_reference_points() {
        assert_eq!(haversine_km(pt(45.0, 9.0), pt(45.0, 9.0)).unwrap(), 0.0);
        let half = haversine_km(pt(0.0, 0.0), pt(0.0, 180.0)).unwrap();
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((half - 20015.1).abs() < 0.1);
        let pavia = pt(45.185, 9.158);
        let torino = pt(45.071, 7.686);
        let d = haversine_km(pavia, torino).unwrap();
        assert!((d - cosine_law_km(pavia, torino)).abs() < 0.1, "{d}");
        assert!(haversine_km(pt(0.0, 0.0), GeoPoint { lat: 91.0, lon: 0.0 }).is_err());
    }

    #[test]
    fn nearest_station_rules() {
        let loc = PostcodeLocation {
            postcode: "27100".into(),
            location: pt(45.0, 9.0),
        };
        let one = [station("S1", 46.0, 9.0, &["pm10"])];
        assert_eq!(nearest_station(&loc, &one, "pm10").unwrap().id, "S1");

        // ~1 km vs ~5 km north
        let two = [
            station("far", 45.045, 9.0, &["pm10"]),
            station("near", 45.009, 9.0, &["pm10"]),
        ];
        assert_eq!(nearest_station(&loc, &two, "pm10").unwrap().id, "near");

        let tie = [station("B", 45.1, 9.0, &["pm10"]), station("A", 45.1, 9.0, &["pm10"])];
        assert_eq!(nearest_station(&loc, &tie, "pm10").unwrap().id, "A");

        assert!(matches!(nearest_station(&loc, &tie, "no2"), Err(Error::NoStation(_))));
        // a closer station lacking the variable is skipped
        let mixed = [station("close", 45.001, 9.0, &["no2"]), station("other", 45.5, 9.0, &["pm10"])];
        assert_eq!(nearest_station(&loc, &mixed, "pm10").unwrap().id, "other");
    }

    #[test]
    fn weekly_aggregation() {
        let full: Vec<_> = (0..7).map(|d| (day(d), Some(10.0))).collect();
        let w = weekly_aggregate(&full, EPOCH).unwrap();
        assert_eq!((w.len(), w[0].week_index, w[0].mean, w[0].coverage), (1, 0, 10.0, 7));

        let partial = vec![(day(0), Some(1.0)), (day(1), Some(2.0)), (day(2), Some(3.0))];
        let w = weekly_aggregate(&partial, EPOCH).unwrap();
        assert_eq!((w[0].mean, w[0].coverage), (2.0, 3));

        let w = weekly_aggregate(&[(day(7), Some(5.0))], EPOCH).unwrap();
        assert_eq!(w[0].week_index, 1);

        let w = weekly_aggregate(&[(day(3), None)], EPOCH).unwrap();
        assert!(w.is_empty());

        assert!(weekly_aggregate(&[(EPOCH - Duration::days(1), Some(1.0))], EPOCH).is_err());
    }

    #[test]
    fn threshold_ratios() {
        let d = [50.0, 50.0, 50.0, 40.0, 40.0, 40.0, 40.0].map(Some);
        assert_eq!(threshold_ratio(&d, 45.0).unwrap(), 3.0 / 7.0);
        let sparse = [Some(50.0), Some(50.0), None, None, None, None, None];
        assert_eq!(threshold_ratio(&sparse, 45.0).unwrap(), 1.0);
        assert_eq!(threshold_ratio(&[Some(45.0); 7], 45.0).unwrap(), 0.0);
        assert!(matches!(threshold_ratio(&[None; 7], 45.0), Err(Error::AllMissing)));
    }

    #[test]
    fn weeks_of_year() {
        let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
        assert_eq!(week_of_year(ymd(2015, 1, 1)), 1);
        assert_eq!(week_of_year(ymd(2015, 1, 8)), 2);
        assert_eq!(week_of_year(ymd(2015, 12, 31)), 52);
        assert_eq!(week_of_year(ymd(2016, 12, 30)), 52);
        assert_eq!(week_start(1), ymd(2013, 1, 8));
        assert_eq!(week_index_of(ymd(2013, 1, 14)).unwrap(), 1);
    }

    fn config(vars: &[&str]) -> LinkageConfig {
        LinkageConfig {
            variables: vars.iter().map(|s| s.to_string()).collect(),
            thresholds: [("pm10".to_string(), 45.0)].into_iter().collect(),
            matching: StationMatching::PerVariable,
        }
    }

    #[test]
    fn exposure_table_rows_and_diagnostics() {
        let s = Station {
            id: "S".into(),
            location: pt(45.0, 9.0),
            series: [
                ("pm10".to_string(), (0..14).map(|d| (day(d), Some(40.0 + d as f64))).collect()),
                ("humidity".to_string(), (0..14).map(|d| (day(d), Some(70.0))).collect()),
            ]
            .into_iter()
            .collect(),
        };
        let lookup = vec![PostcodeLocation {
            postcode: "A".into(),
            location: pt(45.1, 9.1),
        }];
        let patients = vec![LinkRequest::new("p1", "A"), LinkRequest::new("p2", "ZZZ")];
        let out = build_exposure_table(&patients, &[s], &lookup, &config(&["pm10", "humidity"])).unwrap();
        assert_eq!(out.table.n_rows(), 2);
        assert_eq!(out.diagnostics.len(), 1);
        assert!(out.diagnostics[0].contains("p2"));
        assert!(out.table.has_column("pm10_ratio"));
        assert!(!out.table.has_column("humidity_ratio"));
        // week 0 pm10: 40..46, > 45 only day 6
        assert_eq!(out.table.numeric("pm10_ratio").unwrap()[0], Some(1.0 / 7.0));
        assert_eq!(out.table.numeric("pm10_mean").unwrap()[0], Some(43.0));
        assert_eq!(out.table.numeric("humidity_coverage").unwrap()[1], Some(7.0));
    }

    #[test]
    fn windowed_link_keeps_previous_week() {
        let s = Station {
            id: "S".into(),
            location: pt(45.0, 9.0),
            series: [("pm10".to_string(), (0..70).map(|d| (day(d), Some(d as f64))).collect())]
                .into_iter()
                .collect(),
        };
        let lookup = vec![PostcodeLocation {
            postcode: "A".into(),
            location: pt(45.0, 9.0),
        }];
        let req = LinkRequest::new("p", "A").with_dates(day(30), day(44));
        assert_eq!(req.weeks, Some((3, 6)));
        let out = build_exposure_table(&[req], &[s], &lookup, &config(&["pm10"])).unwrap();
        let weeks: Vec<_> = out.table.numeric("week_index").unwrap().iter().flatten().copied().collect();
        assert_eq!(weeks, vec![3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn single_station_mode_leaves_gaps() {
        let near = Station {
            id: "near".into(),
            location: pt(45.0, 9.0),
            series: [("pm10".to_string(), vec![(day(0), Some(1.0))])].into_iter().collect(),
        };
        let far = Station {
            id: "far".into(),
            location: pt(46.0, 9.0),
            series: [("no2".to_string(), vec![(day(0), Some(2.0))])].into_iter().collect(),
        };
        let lookup = vec![PostcodeLocation {
            postcode: "A".into(),
            location: pt(45.0, 9.0),
        }];
        let patients = vec![LinkRequest::new("p", "A")];
        let mut cfg = config(&["pm10", "no2"]);
        let per_var = build_exposure_table(&patients, &[near.clone(), far.clone()], &lookup, &cfg).unwrap();
        assert_eq!(per_var.table.numeric("no2_mean").unwrap()[0], Some(2.0));
        cfg.matching = StationMatching::SingleStation;
        let single = build_exposure_table(&patients, &[near, far], &lookup, &cfg).unwrap();
        assert_eq!(single.table.numeric("no2_mean").unwrap()[0], None);
        assert_eq!(single.table.numeric("no2_coverage").unwrap()[0], Some(0.0));
    }

    #[test]
    fn station_csv_roundtrip() {
        let csv = "station_id,lat,lon,date,variable,value\n\
                   S1,45.0,9.0,2013-01-02,pm10,30\n\
                   S1,45.0,9.0,2013-01-01,pm10,NA\n\
                   S2,45.5,9.5,2013-01-01,no2,12.5\n";
        let st = read_stations(csv.as_bytes(), &crate::table::default_missing_tokens()).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].series["pm10"], vec![(day(0), None), (day(1), Some(30.0))]);
        let pcs = read_postcodes("postcode,lat,lon\n27100,45.18,9.15\n".as_bytes()).unwrap();
        assert_eq!(pcs[0].postcode, "27100");
        assert!(read_postcodes("postcode,lat,lon\nX,95,0\n".as_bytes()).is_err());
    }

    fn arb_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn haversine_symmetric(a in arb_point(), b in arb_point()) {
            let d1 = haversine_km(a, b).unwrap();
            let d2 = haversine_km(b, a).unwrap();
            prop_assert!((d1 - d2).abs() < 1e-9);
            prop_assert!(d1 >= 0.0);
        }

        #[test]
        fn haversine_triangle(a in arb_point(), b in arb_point(), c in arb_point()) {
            let ab = haversine_km(a, b).unwrap();
            let bc = haversine_km(b, c).unwrap();
            let ac = haversine_km(a, c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-6);
        }

        #[test]
        fn weekly_means_bounded_and_partitioned(seed: u64, len in 1usize..60) {
            let mut rng = substream(seed, 0);
            let mut d = 0i64;
            let mut series = Vec::new();
            for _ in 0..len {
                d += rng.gen_range(1..4);
                series.push((day(d), Some(rng.gen_range(-10.0..10.0))));
            }
            let weeks = weekly_aggregate(&series, EPOCH).unwrap();
            let total: usize = weeks.iter().map(|w| w.coverage as usize).sum();
            prop_assert_eq!(total, series.len());
            for w in &weeks {
                let vals: Vec<f64> = w.daily.iter().flatten().copied().collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(w.mean >= lo - 1e-12 && w.mean <= hi + 1e-12);
            }
        }

        #[test]
        fn ratio_monotone_in_threshold(vals in prop::collection::vec(prop::option::of(0.0f64..100.0), 7), t1 in 0.0f64..100.0, t2 in 0.0f64..100.0) {
            let daily: [Option<f64>; 7] = vals.try_into().unwrap();
            if daily.iter().any(Option::is_some) {
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                prop_assert!(threshold_ratio(&daily, hi).unwrap() <= threshold_ratio(&daily, lo).unwrap());
            }
        }
    }
}
