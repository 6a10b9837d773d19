//! Synthetic cohorts with a planted linear-logistic relapse hazard.
//!
//! Each station/variable series is `mean + seasonal + weekly shock + daily noise`.
//! The hazard for week `w` reads the standardized anomaly of week `w - 1` at the
//! station the patient links to, so the true log-odds score is a linear function
//! of independent standard normals and its AUC can be computed directly.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{StaticRecord, Visit, STATIC_COLUMNS, SUBSCORES};
use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::linkage::{
    nearest_station, week_index_of, week_start, GeoPoint, LinkRequest, PostcodeLocation, Station, EPOCH,
};
use crate::rng::{derive_seed, substream, Rng};

pub const SERIES_END: NaiveDate = match NaiveDate::from_ymd_opt(2021, 12, 31) {
    Some(d) => d,
    None => panic!("invalid date"),
};

const FOLLOW_UP_FROM: NaiveDate = match NaiveDate::from_ymd_opt(2013, 3, 1) {
    Some(d) => d,
    None => panic!("invalid date"),
};

pub const STATIONS_FILE: &str = "stations.csv";
pub const POSTCODES_FILE: &str = "postcodes.csv";
pub const PATIENTS_FILE: &str = "patients.csv";
pub const RELAPSES_FILE: &str = "relapses.csv";
pub const VISITS_FILE: &str = "visits.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub mean: f64,
    /// Std of the week-level shock.
    pub weekly_sd: f64,
    /// Std of the day-level noise around the weekly level.
    pub daily_sd: f64,
    /// Seasonal phase in radians.
    #[serde(default)]
    pub phase: f64,
}

impl VariableSpec {
    fn new(name: &str, mean: f64, weekly_sd: f64, daily_sd: f64, phase: f64) -> Self {
        Self {
            name: name.into(),
            mean,
            weekly_sd,
            daily_sd,
            phase,
        }
    }

    /// Std of a 7-day mean around the seasonal curve.
    pub fn weekly_mean_sd(&self, days: usize) -> f64 {
        (self.weekly_sd.powi(2) + self.daily_sd.powi(2) / days as f64).sqrt()
    }
}

pub fn default_variable_specs() -> Vec<VariableSpec> {
    vec![
        VariableSpec::new("pm10", 32.0, 10.0, 8.0, 1.6),
        VariableSpec::new("no2", 27.0, 8.0, 6.0, 1.4),
        VariableSpec::new("wind_speed", 2.4, 0.6, 0.8, -0.3),
        VariableSpec::new("humidity", 70.0, 8.0, 7.0, 1.2),
        VariableSpec::new("precipitation", 2.6, 1.5, 2.0, 0.4),
        VariableSpec::new("temp_min", 8.0, 2.5, 2.0, -1.6),
        VariableSpec::new("temp_max", 19.0, 3.0, 2.5, -1.6),
        VariableSpec::new("temp_mean", 13.5, 2.6, 2.0, -1.6),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub n_stations: usize,
    pub postcodes_per_station: usize,
    /// Mean weekly relapse probability over the anomaly distribution.
    pub base_hazard: f64,
    /// Log-odds per standardized weekly anomaly, keyed by variable.
    pub coefficients: BTreeMap<String, f64>,
    /// When set, `coefficients` are rescaled so that the true score reaches this AUC.
    pub target_bayes_auc: Option<f64>,
    /// Seasonal amplitude in units of each variable's weekly std.
    pub seasonal_amplitude: f64,
    /// MCAR rate for station days and clinical fields.
    pub missing_rate: f64,
    pub follow_up_weeks: u32,
    /// Weeks between scheduled clinical visits.
    pub visit_interval_weeks: u32,
    pub variables: Vec<VariableSpec>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 1600,
            n_stations: 6,
            postcodes_per_station: 5,
            base_hazard: 0.01,
            coefficients: [("pm10".to_string(), 0.6), ("no2".to_string(), 0.6)].into_iter().collect(),
            target_bayes_auc: None,
            seasonal_amplitude: 0.5,
            missing_rate: 0.05,
            follow_up_weeks: 60,
            visit_interval_weeks: 26,
            variables: default_variable_specs(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Same layout with no planted signal.
    pub fn null(seed: u64) -> Self {
        Self {
            coefficients: BTreeMap::new(),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::spec("n_patients", "must be positive"));
        }
        if self.n_stations == 0 {
            return Err(Error::spec("n_stations", "must be positive"));
        }
        if self.postcodes_per_station == 0 {
            return Err(Error::spec("postcodes_per_station", "must be positive"));
        }
        if !(self.base_hazard > 0.0 && self.base_hazard < 1.0) {
            return Err(Error::spec("base_hazard", format!("{} is not in (0, 1)", self.base_hazard)));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::spec("missing_rate", format!("{} is not in [0, 1)", self.missing_rate)));
        }
        if !self.seasonal_amplitude.is_finite() || self.seasonal_amplitude < 0.0 {
            return Err(Error::spec("seasonal_amplitude", "must be finite and non-negative"));
        }
        if self.follow_up_weeks < 2 {
            return Err(Error::spec("follow_up_weeks", "must be at least 2"));
        }
        let latest_end = Self::latest_follow_up_start() + Duration::days(7 * i64::from(self.follow_up_weeks));
        if latest_end > SERIES_END {
            return Err(Error::spec("follow_up_weeks", "follow-up runs past the end of the station series"));
        }
        if self.visit_interval_weeks == 0 {
            return Err(Error::spec("visit_interval_weeks", "must be positive"));
        }
        if let Some(t) = self.target_bayes_auc {
            if !(t > 0.5 && t < 1.0) {
                return Err(Error::spec("target_bayes_auc", format!("{t} is not in (0.5, 1)")));
            }
            if self.coefficients.values().all(|&b| b == 0.0) {
                return Err(Error::spec("target_bayes_auc", "needs at least one nonzero coefficient"));
            }
        }
        if self.variables.is_empty() {
            return Err(Error::spec("variables", "at least one variable is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::spec("variables", format!("duplicate variable `{}`", v.name)));
            }
            let ok = v.mean.is_finite() && v.phase.is_finite() && v.weekly_sd > 0.0 && v.daily_sd > 0.0;
            if !ok || !v.weekly_sd.is_finite() || !v.daily_sd.is_finite() {
                return Err(Error::spec("variables", format!("`{}` needs finite mean/phase and positive stds", v.name)));
            }
        }
        for (name, b) in &self.coefficients {
            if !b.is_finite() {
                return Err(Error::spec("coefficients", format!("`{name}` is not finite")));
            }
            if !seen.contains(name.as_str()) {
                return Err(Error::spec("coefficients", format!("`{name}` is not a generated variable")));
            }
        }
        Ok(())
    }

    fn latest_follow_up_start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 6, 30).expect("valid date")
    }

    /// Intercept at which the mean weekly hazard equals `base_hazard`.
    pub fn intercept(&self) -> f64 {
        let scale = self.coefficient_vector().iter().map(|b| b * b).sum::<f64>().sqrt();
        let logit = (self.base_hazard / (1.0 - self.base_hazard)).ln();
        if scale == 0.0 {
            return logit;
        }
        // the score minus intercept is N(0, scale²); mean hazard is increasing in the intercept
        let (mut lo, mut hi) = (logit - 2.0 * scale * scale - 10.0, logit + 10.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mean_hazard(mid, scale) < self.base_hazard {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Coefficients aligned with `variables`, zero where absent.
    pub fn coefficient_vector(&self) -> Vec<f64> {
        self.variables
            .iter()
            .map(|v| self.coefficients.get(&v.name).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variables.iter().map(|v| v.name.clone()).collect()
    }

    /// Validates and applies `target_bayes_auc`, if any.
    pub fn resolved(&self) -> Result<Self> {
        self.validate()?;
        match self.target_bayes_auc {
            Some(t) => {
                let mut out = calibrate(self, t, 200_000)?;
                out.target_bayes_auc = None;
                Ok(out)
            }
            None => Ok(self.clone()),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// E[σ(b0 + scale·t)] for t ~ N(0, 1), by the trapezoid rule on [-10, 10].
fn mean_hazard(b0: f64, scale: f64) -> f64 {
    let n = 4000;
    let h = 20.0 / n as f64;
    let norm = (2.0 * std::f64::consts::PI).sqrt();
    (0..=n)
        .map(|i| {
            let t = -10.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * sigmoid(b0 + scale * t) * (-0.5 * t * t).exp() / norm
        })
        .sum::<f64>()
        * h
}

/// AUC of the true log-odds score between exposures preceding a relapse and
/// exposures preceding none, by weighted Monte Carlo.
///
/// The score minus the intercept is `‖β‖·t` with `t ~ N(0, 1)`, so one normal
/// draw per sample suffices; each draw counts as a case with weight σ(score)
/// and as a control with weight 1 − σ(score).
pub fn bayes_optimal_auc(spec: &SyntheticSpec, n_mc: usize) -> f64 {
    let draws = sorted_normals(spec.seed, n_mc);
    weighted_auc(&draws, spec.intercept(), coefficient_norm(spec))
}

fn coefficient_norm(spec: &SyntheticSpec) -> f64 {
    spec.coefficient_vector().iter().map(|b| b * b).sum::<f64>().sqrt()
}

fn sorted_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = substream(derive_seed(seed, "bayes"), 0);
    let mut t: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// `t` ascending; scores are `b0 + scale * t` with `scale >= 0`.
fn weighted_auc(t: &[f64], b0: f64, scale: f64) -> f64 {
    let (mut below, mut num, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < t.len() {
        let score = b0 + scale * t[i];
        let mut j = i;
        let (mut gp, mut gn) = (0.0, 0.0);
        while j < t.len() && b0 + scale * t[j] == score {
            let p = sigmoid(b0 + scale * t[j]);
            gp += p;
            gn += 1.0 - p;
            j += 1;
        }
        num += gp * (below + 0.5 * gn);
        below += gn;
        pos += gp;
        neg += gn;
        i = j;
    }
    if pos == 0.0 || neg == 0.0 {
        0.5
    } else {
        num / (pos * neg)
    }
}

/// Rescales the coefficients by a common factor so that the true score reaches `target`.
pub fn calibrate(spec: &SyntheticSpec, target: f64, n_mc: usize) -> Result<SyntheticSpec> {
    if !(target > 0.5 && target < 1.0) {
        return Err(Error::spec("target_bayes_auc", format!("{target} is not in (0.5, 1)")));
    }
    if spec.coefficients.values().all(|&b| b == 0.0) {
        return Err(Error::spec("target_bayes_auc", "needs at least one nonzero coefficient"));
    }
    let draws = sorted_normals(spec.seed, n_mc);
    let scaled = |s: f64| {
        let mut out = spec.clone();
        out.coefficients.values_mut().for_each(|b| *b *= s);
        out
    };
    let auc_at = |s: f64| {
        let sp = scaled(s);
        weighted_auc(&draws, sp.intercept(), coefficient_norm(&sp))
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while auc_at(hi) < target {
        hi *= 2.0;
        if hi > 1024.0 {
            return Err(Error::spec("target_bayes_auc", format!("{target} is unreachable")));
        }
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if auc_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(scaled(0.5 * (lo + hi)))
}

/// Expected share of patients with at least one relapse; weeks are independent.
pub fn expected_relapser_fraction(spec: &SyntheticSpec) -> f64 {
    1.0 - (1.0 - spec.base_hazard).powi(spec.follow_up_weeks as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub stations: Vec<Station>,
    pub postcodes: Vec<PostcodeLocation>,
    pub patients: Vec<StaticRecord>,
    /// Sorted by patient then date.
    pub relapses: Vec<(String, NaiveDate)>,
    pub visits: Vec<(String, Visit)>,
}

/// Standardized weekly anomalies per `[station][variable][week]`.
type Anomalies = Vec<Vec<Vec<f64>>>;

fn n_weeks() -> u32 {
    week_index_of(SERIES_END).expect("series end after epoch") + 1
}

fn gen_station(spec: &SyntheticSpec, index: usize, seed: u64) -> (Station, Vec<Vec<f64>>) {
    let mut rng = substream(derive_seed(seed, "station-site"), index as u64);
    let location = GeoPoint {
        lat: 45.0 + rng.gen_range(0.0..0.6),
        lon: 8.8 + rng.gen_range(0.0..0.8),
    };
    let mut series = BTreeMap::new();
    let mut anomalies = Vec::with_capacity(spec.variables.len());
    for (k, v) in spec.variables.iter().enumerate() {
        let mut rng = substream(derive_seed(seed, "station-series"), (index * 1024 + k) as u64);
        let weekly = Normal::new(0.0, v.weekly_sd).expect("validated std");
        let daily = Normal::new(0.0, v.daily_sd).expect("validated std");
        let mut values = Vec::new();
        let mut z = Vec::with_capacity(n_weeks() as usize);
        for w in 0..n_weeks() {
            let shock = weekly.sample(&mut rng);
            let mut noise_sum = 0.0;
            let mut days = 0;
            for d in 0..7 {
                let date = week_start(w) + Duration::days(d);
                if date > SERIES_END {
                    break;
                }
                let noise = daily.sample(&mut rng);
                noise_sum += noise;
                days += 1;
                let angle = 2.0 * std::f64::consts::PI * f64::from(date.ordinal0()) / 365.25 + v.phase;
                let seasonal = spec.seasonal_amplitude * v.weekly_sd * angle.sin();
                let value = v.mean + seasonal + shock + noise;
                let observed = rng.gen::<f64>() >= spec.missing_rate;
                values.push((date, observed.then_some(value)));
            }
            z.push((shock + noise_sum / days as f64) / v.weekly_mean_sd(days));
        }
        series.insert(v.name.clone(), values);
        anomalies.push(z);
    }
    (
        Station {
            id: format!("ST{:02}", index + 1),
            location,
            series,
        },
        anomalies,
    )
}

fn gen_postcodes(spec: &SyntheticSpec, stations: &[Station], seed: u64) -> Vec<PostcodeLocation> {
    let mut rng = substream(derive_seed(seed, "postcodes"), 0);
    let mut out = Vec::new();
    for s in stations {
        for _ in 0..spec.postcodes_per_station {
            let location = GeoPoint {
                lat: s.location.lat + rng.gen_range(-0.08..0.08),
                lon: s.location.lon + rng.gen_range(-0.08..0.08),
            };
            out.push(PostcodeLocation {
                postcode: format!("{}", 27000 + out.len()),
                location,
            });
        }
    }
    out
}

fn pick<'a>(rng: &mut Rng, options: &[(&'a str, f64)]) -> &'a str {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (name, p) in options {
        acc += p;
        if u < acc {
            return name;
        }
    }
    options.last().expect("non-empty options").0
}

fn masked<T>(rng: &mut Rng, rate: f64, value: T) -> Option<T> {
    (rng.gen::<f64>() >= rate).then_some(value)
}

struct PatientDraw {
    record: StaticRecord,
    relapses: Vec<NaiveDate>,
    visits: Vec<Visit>,
}

fn gen_patient(
    spec: &SyntheticSpec,
    index: usize,
    seed: u64,
    postcodes: &[PostcodeLocation],
    linked: &[Vec<usize>],
    anomalies: &Anomalies,
    (b0, beta): (f64, &[f64]),
) -> PatientDraw {
    let mut rng = substream(derive_seed(seed, "patients"), index as u64);
    let miss = spec.missing_rate;
    let pc = rng.gen_range(0..postcodes.len());
    let span = (SyntheticSpec::latest_follow_up_start() - FOLLOW_UP_FROM).num_days();
    let fu_start = FOLLOW_UP_FROM + Duration::days(rng.gen_range(0..=span));
    let fu_end = fu_start + Duration::days(7 * i64::from(spec.follow_up_weeks) - 1);
    let onset = fu_start - Duration::days(rng.gen_range(180..=15 * 365));
    let diagnosis = onset + Duration::days(rng.gen_range(0..=1500));
    let age: f64 = Normal::new(31.0, 9.0).expect("valid").sample(&mut rng);
    let age = (age.clamp(10.0, 60.0) * 10.0).round() / 10.0;
    let sex = pick(&mut rng, &[("F", 0.7), ("M", 0.3)]);
    let ethnicity = pick(&mut rng, &[("caucasian", 0.85), ("african", 0.08), ("other", 0.07)]);
    let residence = pick(&mut rng, &[("city", 0.35), ("town", 0.4), ("rural", 0.25)]);
    let mut symptoms = [None; 5];
    for (s, p) in symptoms.iter_mut().zip([0.3, 0.25, 0.25, 0.2, 0.1]) {
        let v = rng.gen::<f64>() < p;
        *s = masked(&mut rng, miss, v);
    }
    let record = StaticRecord {
        id: format!("P{:05}", index + 1),
        postcode: postcodes[pc].postcode.clone(),
        onset_date: onset,
        diagnosis_date: diagnosis,
        follow_up_start: fu_start,
        follow_up_end: fu_end,
        sex: masked(&mut rng, miss, sex.to_string()),
        ethnicity: masked(&mut rng, miss, ethnicity.to_string()),
        residence: masked(&mut rng, miss, residence.to_string()),
        age_at_onset: masked(&mut rng, miss, age),
        ms_pediatric: masked(&mut rng, miss, age < 18.0),
        symptoms,
    };

    let edss_base = f64::from(rng.gen_range(0..=13u32)) * 0.5;
    let mut visits = Vec::new();
    let mut date = fu_start - Duration::days(14);
    while date <= fu_end {
        let drift: f64 = Normal::new(0.0, 0.3).expect("valid").sample(&mut rng);
        let edss = ((edss_base + drift).clamp(0.0, 9.5) * 2.0).round() / 2.0;
        let mut subscores = [None; 8];
        for s in subscores.iter_mut() {
            let cap = edss.ceil().min(5.0) as u32;
            let v = f64::from(rng.gen_range(0..=cap));
            *s = masked(&mut rng, miss, v);
        }
        visits.push(Visit {
            date,
            edss: masked(&mut rng, miss, edss),
            subscores,
        });
        date += Duration::days(7 * i64::from(spec.visit_interval_weeks));
    }

    let stations = &linked[pc];
    let first = ((fu_start - EPOCH).num_days() + 6).div_euclid(7) as u32;
    let mut relapses = Vec::new();
    let mut w = first;
    while week_start(w) + Duration::days(6) <= fu_end {
        let eta = b0 + beta
            .iter()
            .enumerate()
            .map(|(k, b)| b * anomalies[stations[k]][k][(w - 1) as usize])
            .sum::<f64>();
        let u: f64 = rng.gen();
        if u < sigmoid(eta) {
            relapses.push(week_start(w) + Duration::days(rng.gen_range(0..7)));
        }
        w += 1;
    }
    PatientDraw {
        record,
        relapses,
        visits,
    }
}

/// Generates stations, postcodes, patients, relapses and visits for `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let spec = spec.resolved()?;
    let seed = spec.seed;
    let (stations, anomalies): (Vec<Station>, Anomalies) = (0..spec.n_stations)
        .into_par_iter()
        .map(|i| gen_station(&spec, i, seed))
        .unzip();
    let postcodes = gen_postcodes(&spec, &stations, seed);
    // station index per postcode and variable, by the same rule linkage applies
    let index_of: BTreeMap<&str, usize> = stations.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let linked = postcodes
        .iter()
        .map(|pc| {
            spec.variables
                .iter()
                .map(|v| Ok(index_of[nearest_station(pc, &stations, &v.name)?.id.as_str()]))
                .collect::<Result<Vec<usize>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let beta = spec.coefficient_vector();
    let b0 = spec.intercept();
    let draws: Vec<PatientDraw> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| gen_patient(&spec, i, seed, &postcodes, &linked, &anomalies, (b0, &beta)))
        .collect();

    let mut patients = Vec::with_capacity(draws.len());
    let mut relapses = Vec::new();
    let mut visits = Vec::new();
    for d in draws {
        relapses.extend(d.relapses.into_iter().map(|r| (d.record.id.clone(), r)));
        visits.extend(d.visits.into_iter().map(|v| (d.record.id.clone(), v)));
        patients.push(d.record);
    }
    Ok(SyntheticData {
        spec,
        stations,
        postcodes,
        patients,
        relapses,
        visits,
    })
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "NA".to_string(), T::to_string)
}

fn fmt_flag(v: Option<bool>) -> String {
    v.map_or_else(|| "NA".to_string(), |b| if b { "1" } else { "0" }.to_string())
}

impl SyntheticData {
    /// Linkage requests covering each patient's follow-up.
    pub fn link_requests(&self) -> Vec<LinkRequest> {
        link_requests(&self.patients)
    }

    pub fn write_stations<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["station_id", "lat", "lon", "date", "variable", "value"])?;
        for s in &self.stations {
            let (lat, lon) = (s.location.lat.to_string(), s.location.lon.to_string());
            for (var, series) in &s.series {
                for (date, value) in series {
                    w.write_record([&s.id, &lat, &lon, &date.to_string(), var, &fmt_opt(value)])?;
                }
            }
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn write_postcodes<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["postcode", "lat", "lon"])?;
        for p in &self.postcodes {
            w.write_record([&p.postcode, &p.location.lat.to_string(), &p.location.lon.to_string()])?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn write_patients<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(STATIC_COLUMNS)?;
        for r in &self.patients {
            let mut row = vec![
                r.id.clone(),
                r.postcode.clone(),
                r.onset_date.to_string(),
                r.diagnosis_date.to_string(),
                r.follow_up_start.to_string(),
                r.follow_up_end.to_string(),
                fmt_opt(&r.sex),
                fmt_opt(&r.ethnicity),
                fmt_opt(&r.residence),
                fmt_opt(&r.age_at_onset),
                fmt_flag(r.ms_pediatric),
            ];
            row.extend(r.symptoms.iter().map(|s| fmt_flag(*s)));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn write_relapses<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["patient_id", "date"])?;
        for (id, date) in &self.relapses {
            w.write_record([id, &date.to_string()])?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    pub fn write_visits<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["patient_id", "date", "edss"];
        header.extend(SUBSCORES);
        w.write_record(&header)?;
        for (id, v) in &self.visits {
            let mut row = vec![id.clone(), v.date.to_string(), fmt_opt(&v.edss)];
            row.extend(v.subscores.iter().map(fmt_opt));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(())
    }

    /// Writes the five input files into `dir`, each atomically.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        atomic_write(&dir.join(STATIONS_FILE), |w| self.write_stations(w))?;
        atomic_write(&dir.join(POSTCODES_FILE), |w| self.write_postcodes(w))?;
        atomic_write(&dir.join(PATIENTS_FILE), |w| self.write_patients(w))?;
        atomic_write(&dir.join(RELAPSES_FILE), |w| self.write_relapses(w))?;
        atomic_write(&dir.join(VISITS_FILE), |w| self.write_visits(w))?;
        Ok(())
    }
}

/// One request per patient covering follow-up plus the week before it.
pub fn link_requests(patients: &[StaticRecord]) -> Vec<LinkRequest> {
    patients
        .iter()
        .map(|r| LinkRequest::new(&r.id, &r.postcode).with_dates(r.follow_up_start, r.follow_up_end))
        .collect()
}
