//! Matched case-control cohort construction.
//!
//! A case is a patient's first relapse whose preceding week has exposure data;
//! its predictor week is the week before the event. Controls are relapse-free
//! patients matched on week of year and treatment era of the target week.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::sync::Arc;

use chrono::{Datelike, Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::{
    coverage_column, mean_column, ratio_column, ratio_variables, week_index_of, week_of_year, week_start,
    LinkageConfig,
};
use crate::table::{Category, ColumnData, ColumnSpec, DataTable};

pub const SUBSCORES: [&str; 8] = [
    "pyramidal",
    "cerebellar",
    "brainstem_fs",
    "sensory",
    "bowel_bladder",
    "visual",
    "cerebral",
    "ambulation",
];

pub const SYMPTOMS: [&str; 5] = [
    "symptom_spinal_cord",
    "symptom_brainstem",
    "symptom_eye",
    "symptom_supratentorial",
    "symptom_other",
];

pub const OUTCOME: &str = "relapse";

/// First day of the post-2018 treatment era.
pub const ERA_BOUNDARY: NaiveDate = match NaiveDate::from_ymd_opt(2018, 1, 1) {
    Some(d) => d,
    None => panic!("bad era boundary"),
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Era {
    Pre2018,
    Post2018,
}

impl Era {
    pub fn as_str(self) -> &'static str {
        match self {
            Era::Pre2018 => "pre2018",
            Era::Post2018 => "post2018",
        }
    }
}

pub fn era_of(week_index: u32) -> Era {
    if week_start(week_index) >= ERA_BOUNDARY {
        Era::Post2018
    } else {
        Era::Pre2018
    }
}

pub fn season_of(date: NaiveDate) -> &'static str {
    match date.month() {
        12 | 1 | 2 => "Winter",
        3..=5 => "Spring",
        6..=8 => "Summer",
        _ => "Autumn",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticRecord {
    pub id: String,
    pub postcode: String,
    pub onset_date: NaiveDate,
    pub diagnosis_date: NaiveDate,
    pub follow_up_start: NaiveDate,
    pub follow_up_end: NaiveDate,
    pub sex: Option<String>,
    pub ethnicity: Option<String>,
    pub residence: Option<String>,
    pub age_at_onset: Option<f64>,
    pub ms_pediatric: Option<bool>,
    pub symptoms: [Option<bool>; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Visit {
    pub date: NaiveDate,
    pub edss: Option<f64>,
    pub subscores: [Option<f64>; 8],
}

/// Linked exposure for one week, indexed like `LinkageConfig::variables`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyExposure {
    pub means: Vec<Option<f64>>,
    pub coverage: Vec<u8>,
    /// Indexed like `ratio_variables(config)`.
    pub ratios: Vec<Option<f64>>,
}

impl WeeklyExposure {
    pub fn covered(&self) -> bool {
        !self.coverage.is_empty() && self.coverage.iter().all(|&c| c > 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientTimeline {
    pub record: StaticRecord,
    /// Ascending.
    pub relapse_dates: Vec<NaiveDate>,
    /// Ascending by date.
    pub visits: Vec<Visit>,
    pub exposure: BTreeMap<u32, WeeklyExposure>,
}

impl PatientTimeline {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    fn in_follow_up(&self, date: NaiveDate) -> bool {
        date >= self.record.follow_up_start && date <= self.record.follow_up_end
    }

    pub fn relapses_in_follow_up(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.relapse_dates.iter().copied().filter(|d| self.in_follow_up(*d))
    }

    fn week_covered(&self, week: u32) -> bool {
        self.exposure.get(&week).is_some_and(WeeklyExposure::covered)
    }
}

/// `(event_week, predictor_week)` of the first relapse whose previous week has exposure.
pub fn first_eligible_relapse(t: &PatientTimeline) -> Option<(u32, u32)> {
    t.relapses_in_follow_up().find_map(|d| {
        let event = week_index_of(d).ok()?;
        let pred = event.checked_sub(1)?;
        t.week_covered(pred).then_some((event, pred))
    })
}

/// Target weeks `w` inside follow-up whose previous week has exposure.
pub fn eligible_control_weeks(t: &PatientTimeline) -> Result<BTreeSet<u32>> {
    if t.relapses_in_follow_up().next().is_some() {
        return Err(Error::HasRelapses(t.id().to_string()));
    }
    let Ok(first) = week_index_of(t.record.follow_up_start.max(crate::linkage::EPOCH)) else {
        return Ok(BTreeSet::new());
    };
    let Ok(last) = week_index_of(t.record.follow_up_end) else {
        return Ok(BTreeSet::new());
    };
    Ok((first.max(1)..=last).filter(|&w| t.week_covered(w - 1)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseInstance {
    pub subject_id: String,
    pub event_week: u32,
    pub predictor_week: u32,
}

impl CaseInstance {
    pub fn week_of_year(&self) -> u32 {
        week_of_year(week_start(self.event_week))
    }

    pub fn era(&self) -> Era {
        era_of(self.event_week)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub case_id: String,
    pub control_id: String,
    /// Control's target week; its predictor week is the one before.
    pub control_week: u32,
    pub week_of_year: u32,
    pub era: Era,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched: Vec<String>,
}

fn admissible_week(case: &CaseInstance, weeks: &BTreeSet<u32>) -> Option<u32> {
    let (woy, era) = (case.week_of_year(), case.era());
    weeks
        .iter()
        .copied()
        .find(|&w| week_of_year(week_start(w)) == woy && era_of(w) == era)
}

/// Maximum bipartite matching of cases to control patients.
///
/// Cases are processed in id order and candidates tried in patient id order,
/// so the result does not depend on input order. Each control patient is used
/// at most once, at its earliest admissible week.
pub fn match_controls(cases: &[CaseInstance], pool: &[(String, BTreeSet<u32>)]) -> MatchResult {
    let mut cases: Vec<&CaseInstance> = cases.iter().collect();
    cases.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    let mut pool: Vec<&(String, BTreeSet<u32>)> = pool.iter().collect();
    pool.sort_by(|a, b| a.0.cmp(&b.0));

    // bucket controls by (woy, era) so adjacency stays cheap on large pools
    let mut by_key: HashMap<(u32, Era), Vec<usize>> = HashMap::new();
    for (j, (_, weeks)) in pool.iter().enumerate() {
        let keys: BTreeSet<(u32, Era)> = weeks.iter().map(|&w| (week_of_year(week_start(w)), era_of(w))).collect();
        for k in keys {
            by_key.entry(k).or_default().push(j);
        }
    }
    let adjacency: Vec<&[usize]> = cases
        .iter()
        .map(|c| by_key.get(&(c.week_of_year(), c.era())).map_or(&[][..], Vec::as_slice))
        .collect();

    let mut owner: Vec<Option<usize>> = vec![None; pool.len()];
    for i in 0..cases.len() {
        let mut seen = vec![false; pool.len()];
        augment(i, &adjacency, &mut owner, &mut seen);
    }

    let mut matched_to: Vec<Option<usize>> = vec![None; cases.len()];
    for (j, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            matched_to[*i] = Some(j);
        }
    }
    let mut result = MatchResult::default();
    for (i, case) in cases.iter().enumerate() {
        match matched_to[i] {
            Some(j) => {
                let week = admissible_week(case, &pool[j].1).expect("adjacent control has an admissible week");
                result.pairs.push(MatchedPair {
                    case_id: case.subject_id.clone(),
                    control_id: pool[j].0.clone(),
                    control_week: week,
                    week_of_year: case.week_of_year(),
                    era: case.era(),
                });
            }
            None => result.unmatched.push(case.subject_id.clone()),
        }
    }
    result
}

// Kuhn's augmenting path, iterative so deep chains cannot overflow the stack.
fn augment(start: usize, adjacency: &[&[usize]], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    // stack[d] = (case, next candidate position); path[d] = control leading to stack[d + 1]
    let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
    let mut path: Vec<usize> = Vec::new();
    while let Some(&(case, pos)) = stack.last() {
        let adj = adjacency[case];
        let mut next = pos;
        let mut step = None;
        while next < adj.len() {
            let j = adj[next];
            next += 1;
            if !seen[j] {
                seen[j] = true;
                step = Some(j);
                break;
            }
        }
        if let Some(top) = stack.last_mut() {
            top.1 = next;
        }
        match step {
            None => {
                stack.pop();
                path.pop();
            }
            Some(j) => {
                path.push(j);
                match owner[j] {
                    None => {
                        for (depth, &ctrl) in path.iter().enumerate() {
                            owner[ctrl] = Some(stack[depth].0);
                        }
                        return true;
                    }
                    Some(other) => stack.push((other, 0)),
                }
            }
        }
    }
    false
}

/// Predictor columns of the cohort table, plus meta and outcome columns.
pub fn cohort_schema(config: &LinkageConfig) -> Vec<ColumnSpec> {
    let mut s = vec![
        ColumnSpec::categorical("subject_id", Category::Meta),
        ColumnSpec::categorical("pair_id", Category::Meta),
        ColumnSpec::numeric("event_week", Category::Meta),
        ColumnSpec::numeric("predictor_week", Category::Meta),
        ColumnSpec::numeric("week_of_year", Category::Meta),
        ColumnSpec::categorical("era", Category::Meta),
        ColumnSpec::numeric("time_since_onset", Category::ClinicalCurrentWeek),
        ColumnSpec::numeric("age_at_onset", Category::Demographic),
        ColumnSpec::categorical("sex", Category::Demographic),
        ColumnSpec::categorical("ethnicity", Category::Demographic),
        ColumnSpec::categorical("residence", Category::Demographic),
        ColumnSpec::numeric("diagnostic_delay", Category::ClinicalOnset),
        ColumnSpec::binary("ms_pediatric", Category::ClinicalOnset),
    ];
    s.extend(SYMPTOMS.iter().map(|n| ColumnSpec::binary(*n, Category::ClinicalOnset)));
    s.push(ColumnSpec::numeric("edss", Category::ClinicalRecent));
    s.extend(SUBSCORES.iter().map(|n| ColumnSpec::numeric(*n, Category::ClinicalRecent)));
    s.extend(config.variables.iter().map(|v| ColumnSpec::numeric(mean_column(v), Category::Environmental)));
    s.extend(ratio_variables(config).iter().map(|v| ColumnSpec::numeric(ratio_column(v), Category::Environmental)));
    s.push(ColumnSpec::categorical("season", Category::Environmental));
    s.push(ColumnSpec::binary(OUTCOME, Category::Outcome));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub time_since_onset: f64,
    pub diagnostic_delay: f64,
    pub edss: Option<f64>,
    pub subscores: [Option<f64>; 8],
    pub means: Vec<Option<f64>>,
    pub ratios: Vec<Option<f64>>,
    pub season: &'static str,
}

/// Features for one observation whose predictor week is `predictor_week`.
///
/// Only data before the end of the predictor week is read.
pub fn assemble_features(t: &PatientTimeline, predictor_week: u32) -> Result<FeatureRow> {
    let start = week_start(predictor_week);
    let end = start + Duration::days(7);
    let exp = t
        .exposure
        .get(&predictor_week)
        .ok_or_else(|| Error::InsufficientData(format!("patient {} has no exposure in week {predictor_week}", t.id())))?;
    let visit = t.visits.iter().rev().find(|v| v.date < end);
    Ok(FeatureRow {
        time_since_onset: (start - t.record.onset_date).num_days() as f64,
        diagnostic_delay: (t.record.diagnosis_date - t.record.onset_date).num_days() as f64,
        edss: visit.and_then(|v| v.edss),
        subscores: visit.map_or([None; 8], |v| v.subscores),
        means: exp.means.clone(),
        ratios: exp.ratios.clone(),
        season: season_of(start),
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortReport {
    pub n_patients: usize,
    pub n_cases: usize,
    pub n_controls: usize,
    pub n_control_pool: usize,
    /// Relapsing patients with no relapse preceded by a week of exposure.
    pub n_relapsers_ineligible: usize,
    pub matching: MatchResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortOutput {
    pub table: DataTable,
    pub report: CohortReport,
}

struct CohortRow<'a> {
    timeline: &'a PatientTimeline,
    pair_id: Option<String>,
    event_week: u32,
    is_case: bool,
}

/// Builds the matched cohort table: every eligible case (matched or not) and one control per pair.
pub fn build_cohort(timelines: &[PatientTimeline], config: &LinkageConfig) -> Result<CohortOutput> {
    let mut ordered: Vec<&PatientTimeline> = timelines.iter().collect();
    ordered.sort_by(|a, b| a.id().cmp(b.id()));
    if ordered.windows(2).any(|w| w[0].id() == w[1].id()) {
        return Err(Error::InvalidArgument("duplicate patient id in timelines".into()));
    }
    let by_id: HashMap<&str, &PatientTimeline> = ordered.iter().map(|t| (t.id(), *t)).collect();

    let mut cases = Vec::new();
    let mut pool = Vec::new();
    let mut ineligible = 0;
    for t in &ordered {
        if t.relapses_in_follow_up().next().is_some() {
            match first_eligible_relapse(t) {
                Some((event_week, predictor_week)) => cases.push(CaseInstance {
                    subject_id: t.id().to_string(),
                    event_week,
                    predictor_week,
                }),
                None => ineligible += 1,
            }
        } else {
            let weeks = eligible_control_weeks(t)?;
            if !weeks.is_empty() {
                pool.push((t.id().to_string(), weeks));
            }
        }
    }
    let matching = match_controls(&cases, &pool);
    let pair_of: HashMap<&str, (usize, &MatchedPair)> = matching
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (p.case_id.as_str(), (i, p)))
        .collect();

    let mut rows = Vec::with_capacity(cases.len() + matching.pairs.len());
    for c in &cases {
        let t = by_id[c.subject_id.as_str()];
        match pair_of.get(c.subject_id.as_str()) {
            Some((i, p)) => {
                let pid = format!("pair{:05}", i + 1);
                rows.push(CohortRow {
                    timeline: t,
                    pair_id: Some(pid.clone()),
                    event_week: c.event_week,
                    is_case: true,
                });
                rows.push(CohortRow {
                    timeline: by_id[p.control_id.as_str()],
                    pair_id: Some(pid),
                    event_week: p.control_week,
                    is_case: false,
                });
            }
            None => rows.push(CohortRow {
                timeline: t,
                pair_id: None,
                event_week: c.event_week,
                is_case: true,
            }),
        }
    }
    let table = rows_to_table(&rows, config)?;
    Ok(CohortOutput {
        table,
        report: CohortReport {
            n_patients: ordered.len(),
            n_cases: cases.len(),
            n_controls: matching.pairs.len(),
            n_control_pool: pool.len(),
            n_relapsers_ineligible: ineligible,
            matching,
        },
    })
}

#[derive(Default)]
struct Interner {
    levels: Vec<Arc<str>>,
    index: HashMap<String, u32>,
    codes: Vec<Option<u32>>,
}

impl Interner {
    fn push(&mut self, v: Option<&str>) {
        let code = v.map(|v| {
            if let Some(&c) = self.index.get(v) {
                c
            } else {
                let c = self.levels.len() as u32;
                self.levels.push(v.into());
                self.index.insert(v.to_string(), c);
                c
            }
        });
        self.codes.push(code);
    }

    fn finish(self) -> ColumnData {
        ColumnData::Categorical {
            levels: self.levels,
            codes: self.codes,
        }
    }
}

fn rows_to_table(rows: &[CohortRow<'_>], config: &LinkageConfig) -> Result<DataTable> {
    let schema = cohort_schema(config);
    let n_ratio = ratio_variables(config).len();
    let mut subject = Interner::default();
    let mut pair = Interner::default();
    let mut era = Interner::default();
    let mut sex = Interner::default();
    let mut eth = Interner::default();
    let mut res = Interner::default();
    let mut season = Interner::default();
    let mut nums: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
    let mut bins: BTreeMap<&str, Vec<Option<bool>>> = BTreeMap::new();
    let mut means = vec![Vec::with_capacity(rows.len()); config.variables.len()];
    let mut ratios = vec![Vec::with_capacity(rows.len()); n_ratio];

    for r in rows {
        let rec = &r.timeline.record;
        let pred = r.event_week - 1;
        let f = assemble_features(r.timeline, pred)?;
        if f.means.len() != config.variables.len() || f.ratios.len() != n_ratio {
            return Err(Error::InvalidArgument(format!(
                "patient {}: exposure does not match the configured variables",
                rec.id
            )));
        }
        subject.push(Some(&rec.id));
        pair.push(r.pair_id.as_deref());
        era.push(Some(era_of(r.event_week).as_str()));
        sex.push(rec.sex.as_deref());
        eth.push(rec.ethnicity.as_deref());
        res.push(rec.residence.as_deref());
        season.push(Some(f.season));
        let mut num = |k, v| nums.entry(k).or_default().push(v);
        num("event_week", Some(f64::from(r.event_week)));
        num("predictor_week", Some(f64::from(pred)));
        num("week_of_year", Some(f64::from(week_of_year(week_start(r.event_week)))));
        num("time_since_onset", Some(f.time_since_onset));
        num("age_at_onset", rec.age_at_onset);
        num("diagnostic_delay", Some(f.diagnostic_delay));
        num("edss", f.edss);
        for (k, v) in SUBSCORES.iter().zip(f.subscores) {
            num(k, v);
        }
        let mut bin = |k, v| bins.entry(k).or_default().push(v);
        bin("ms_pediatric", rec.ms_pediatric);
        for (k, v) in SYMPTOMS.iter().zip(rec.symptoms) {
            bin(k, v);
        }
        bin(OUTCOME, Some(r.is_case));
        for (col, v) in means.iter_mut().zip(&f.means) {
            col.push(*v);
        }
        for (col, v) in ratios.iter_mut().zip(&f.ratios) {
            col.push(*v);
        }
    }
    let mut env_means: BTreeMap<String, Vec<Option<f64>>> = config
        .variables
        .iter()
        .map(|v| mean_column(v))
        .zip(means)
        .collect();
    let mut env_ratios: BTreeMap<String, Vec<Option<f64>>> = ratio_variables(config)
        .iter()
        .map(|v| ratio_column(v))
        .zip(ratios)
        .collect();
    let mut cats: BTreeMap<&str, Interner> = [
        ("subject_id", subject),
        ("pair_id", pair),
        ("era", era),
        ("sex", sex),
        ("ethnicity", eth),
        ("residence", res),
        ("season", season),
    ]
    .into_iter()
    .collect();

    let columns = schema
        .iter()
        .map(|spec| {
            let name = spec.name.as_str();
            if let Some(c) = cats.remove(name) {
                c.finish()
            } else if let Some(b) = bins.remove(name) {
                ColumnData::Binary(b)
            } else if let Some(v) = nums.remove(name) {
                ColumnData::Numeric(v)
            } else if let Some(v) = env_means.remove(name) {
                ColumnData::Numeric(v)
            } else if let Some(v) = env_ratios.remove(name) {
                ColumnData::Numeric(v)
            } else {
                ColumnData::empty(spec.kind)
            }
        })
        .collect();
    DataTable::new(schema, columns)
}

// ---- CSV ingestion ----

struct Fields {
    header: HashMap<String, usize>,
    tokens: Vec<String>,
    source: &'static str,
}

impl Fields {
    fn new(headers: &csv::StringRecord, required: &[&str], tokens: &[String], source: &'static str) -> Result<Self> {
        let header: HashMap<String, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect();
        if header.len() != headers.len() {
            return Err(Error::DuplicateColumn(format!("{source} header")));
        }
        for r in required {
            if !header.contains_key(*r) {
                return Err(Error::MissingColumn(format!("{source}: {r}")));
            }
        }
        Ok(Self {
            header,
            tokens: tokens.to_vec(),
            source,
        })
    }

    fn raw<'a>(&self, rec: &'a csv::StringRecord, col: &str) -> Option<&'a str> {
        let v = rec.get(*self.header.get(col)?)?.trim();
        (!self.tokens.iter().any(|t| t == v)).then_some(v)
    }

    fn text(&self, rec: &csv::StringRecord, row: usize, col: &str) -> Result<String> {
        self.raw(rec, col)
            .map(str::to_string)
            .ok_or_else(|| Error::cell(row, col, format!("{}: value required", self.source)))
    }

    fn date(&self, rec: &csv::StringRecord, row: usize, col: &str) -> Result<NaiveDate> {
        let v = self.text(rec, row, col)?;
        NaiveDate::parse_from_str(&v, "%Y-%m-%d").map_err(|e| Error::cell(row, col, format!("bad date `{v}`: {e}")))
    }

    fn opt_f64(&self, rec: &csv::StringRecord, row: usize, col: &str) -> Result<Option<f64>> {
        self.raw(rec, col)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::cell(row, col, format!("cannot parse `{v}` as a number")))
            })
            .transpose()
    }

    fn opt_bool(&self, rec: &csv::StringRecord, row: usize, col: &str) -> Result<Option<bool>> {
        self.raw(rec, col)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" => Ok(true),
                "0" | "false" | "no" => Ok(false),
                _ => Err(Error::cell(row, col, format!("cannot parse `{v}` as a flag"))),
            })
            .transpose()
    }
}

pub const STATIC_COLUMNS: [&str; 16] = [
    "patient_id",
    "postcode",
    "onset_date",
    "diagnosis_date",
    "follow_up_start",
    "follow_up_end",
    "sex",
    "ethnicity",
    "residence",
    "age_at_onset",
    "ms_pediatric",
    "symptom_spinal_cord",
    "symptom_brainstem",
    "symptom_eye",
    "symptom_supratentorial",
    "symptom_other",
];

pub fn read_static<R: Read>(source: R, tokens: &[String]) -> Result<Vec<StaticRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let f = Fields::new(rdr.headers()?, &STATIC_COLUMNS, tokens, "patients")?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut symptoms = [None; 5];
        for (s, name) in symptoms.iter_mut().zip(SYMPTOMS) {
            *s = f.opt_bool(&rec, row, name)?;
        }
        let r = StaticRecord {
            id: f.text(&rec, row, "patient_id")?,
            postcode: f.text(&rec, row, "postcode")?,
            onset_date: f.date(&rec, row, "onset_date")?,
            diagnosis_date: f.date(&rec, row, "diagnosis_date")?,
            follow_up_start: f.date(&rec, row, "follow_up_start")?,
            follow_up_end: f.date(&rec, row, "follow_up_end")?,
            sex: f.raw(&rec, "sex").map(str::to_string),
            ethnicity: f.raw(&rec, "ethnicity").map(str::to_string),
            residence: f.raw(&rec, "residence").map(str::to_string),
            age_at_onset: f.opt_f64(&rec, row, "age_at_onset")?,
            ms_pediatric: f.opt_bool(&rec, row, "ms_pediatric")?,
            symptoms,
        };
        if r.diagnosis_date < r.onset_date {
            return Err(Error::cell(row, "diagnosis_date", "diagnosis precedes onset"));
        }
        if r.follow_up_end < r.follow_up_start {
            return Err(Error::cell(row, "follow_up_end", "follow-up ends before it starts"));
        }
        out.push(r);
    }
    Ok(out)
}

/// `patient_id,date`
pub fn read_relapses<R: Read>(source: R, tokens: &[String]) -> Result<Vec<(String, NaiveDate)>> {
    let mut rdr = csv::Reader::from_reader(source);
    let f = Fields::new(rdr.headers()?, &["patient_id", "date"], tokens, "relapses")?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            Ok((f.text(&rec, row, "patient_id")?, f.date(&rec, row, "date")?))
        })
        .collect()
}

/// `patient_id,date,edss,<subscores>`
pub fn read_visits<R: Read>(source: R, tokens: &[String]) -> Result<Vec<(String, Visit)>> {
    let mut rdr = csv::Reader::from_reader(source);
    let mut required = vec!["patient_id", "date", "edss"];
    required.extend(SUBSCORES);
    let f = Fields::new(rdr.headers()?, &required, tokens, "visits")?;
    rdr.records()
        .enumerate()
        .map(|(row, rec)| {
            let rec = rec?;
            let mut subscores = [None; 8];
            for (s, name) in subscores.iter_mut().zip(SUBSCORES) {
                *s = f.opt_f64(&rec, row, name)?;
            }
            Ok((
                f.text(&rec, row, "patient_id")?,
                Visit {
                    date: f.date(&rec, row, "date")?,
                    edss: f.opt_f64(&rec, row, "edss")?,
                    subscores,
                },
            ))
        })
        .collect()
}

/// Splits the exposure table into per-patient weekly records.
pub fn exposure_by_patient(
    exposure: &DataTable,
    config: &LinkageConfig,
) -> Result<HashMap<String, BTreeMap<u32, WeeklyExposure>>> {
    let ids = exposure.column("patient_id")?;
    let ColumnData::Categorical { levels, codes } = ids else {
        return Err(Error::ColumnKind {
            column: "patient_id".into(),
            expected: "categorical",
            found: ids.kind().as_str(),
        });
    };
    let weeks = exposure.numeric("week_index")?;
    let means: Vec<&[Option<f64>]> = config
        .variables
        .iter()
        .map(|v| exposure.numeric(&mean_column(v)))
        .collect::<Result<_>>()?;
    let cover: Vec<&[Option<f64>]> = config
        .variables
        .iter()
        .map(|v| exposure.numeric(&coverage_column(v)))
        .collect::<Result<_>>()?;
    let ratios: Vec<&[Option<f64>]> = ratio_variables(config)
        .iter()
        .map(|v| exposure.numeric(&ratio_column(v)))
        .collect::<Result<_>>()?;
    let mut out: HashMap<String, BTreeMap<u32, WeeklyExposure>> = HashMap::new();
    for r in 0..exposure.n_rows() {
        let id = codes[r]
            .map(|c| levels[c as usize].to_string())
            .ok_or_else(|| Error::cell(r, "patient_id", "missing patient id"))?;
        let week = weeks[r]
            .filter(|w| *w >= 0.0 && w.fract() == 0.0)
            .ok_or_else(|| Error::cell(r, "week_index", "week index must be a non-negative integer"))?
            as u32;
        let w = WeeklyExposure {
            means: means.iter().map(|c| c[r]).collect(),
            coverage: cover.iter().map(|c| c[r].unwrap_or(0.0).clamp(0.0, 7.0) as u8).collect(),
            ratios: ratios.iter().map(|c| c[r]).collect(),
        };
        out.entry(id).or_default().insert(week, w);
    }
    Ok(out)
}

/// Joins the four inputs into timelines; relapses or visits for unknown
/// patients are reported and ignored.
pub fn assemble_timelines(
    records: Vec<StaticRecord>,
    relapses: Vec<(String, NaiveDate)>,
    visits: Vec<(String, Visit)>,
    mut exposure: HashMap<String, BTreeMap<u32, WeeklyExposure>>,
) -> (Vec<PatientTimeline>, Vec<String>) {
    let mut diagnostics = Vec::new();
    let mut timelines: BTreeMap<String, PatientTimeline> = BTreeMap::new();
    for r in records {
        let exp = exposure.remove(&r.id).unwrap_or_default();
        if exp.is_empty() {
            diagnostics.push(format!("patient {} has no linked exposure", r.id));
        }
        timelines.insert(
            r.id.clone(),
            PatientTimeline {
                record: r,
                relapse_dates: Vec::new(),
                visits: Vec::new(),
                exposure: exp,
            },
        );
    }
    let mut unknown: BTreeSet<String> = BTreeSet::new();
    for (id, d) in relapses {
        match timelines.get_mut(&id) {
            Some(t) => t.relapse_dates.push(d),
            None => {
                unknown.insert(id);
            }
        }
    }
    for (id, v) in visits {
        match timelines.get_mut(&id) {
            Some(t) => t.visits.push(v),
            None => {
                unknown.insert(id);
            }
        }
    }
    for id in unknown {
        diagnostics.push(format!("records for unknown patient {id} ignored"));
    }
    let timelines = timelines
        .into_values()
        .map(|mut t| {
            t.relapse_dates.sort();
            t.relapse_dates.dedup();
            t.visits.sort_by_key(|v| v.date);
            t
        })
        .collect();
    (timelines, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn full_week() -> WeeklyExposure {
        WeeklyExposure {
            means: vec![Some(1.0)],
            coverage: vec![7],
            ratios: vec![Some(0.0)],
        }
    }

    fn timeline(id: &str, weeks: impl IntoIterator<Item = u32>, relapses: Vec<NaiveDate>) -> PatientTimeline {
        PatientTimeline {
            record: StaticRecord {
                id: id.into(),
                postcode: "x".into(),
                onset_date: date(2013, 1, 1),
                diagnosis_date: date(2013, 2, 1),
                follow_up_start: date(2013, 1, 1),
                follow_up_end: date(2022, 1, 1),
                sex: Some("F".into()),
                ethnicity: None,
                residence: None,
                age_at_onset: Some(30.0),
                ms_pediatric: Some(false),
                symptoms: [Some(false); 5],
            },
            relapse_dates: relapses,
            visits: vec![],
            exposure: weeks.into_iter().map(|w| (w, full_week())).collect(),
        }
    }

    #[test]
    fn era_and_season() {
        assert_eq!(era_of(0), Era::Pre2018);
        let w = week_index_of(date(2018, 1, 1)).unwrap();
        // the block containing 2018-01-01 starts before it
        assert!(week_start(w) < ERA_BOUNDARY);
        assert_eq!(era_of(w), Era::Pre2018);
        assert_eq!(era_of(w + 1), Era::Post2018);
        assert_eq!(season_of(date(2020, 7, 3)), "Summer");
        assert_eq!(season_of(date(2020, 12, 3)), "Winter");
        assert_eq!(season_of(date(2020, 3, 1)), "Spring");
        assert_eq!(season_of(date(2020, 11, 30)), "Autumn");
    }

    #[test]
    fn first_eligible_relapse_cases() {
        let t = timeline("a", 0..10, vec![week_start(10)]);
        assert_eq!(first_eligible_relapse(&t), Some((10, 9)));
        let t = timeline("a", (0..10).filter(|&w| w != 2), vec![week_start(3), week_start(8)]);
        assert_eq!(first_eligible_relapse(&t), Some((8, 7)));
        assert_eq!(first_eligible_relapse(&timeline("a", 0..10, vec![])), None);
    }

    #[test]
    fn control_weeks() {
        let t = timeline("c", 0..52, vec![]);
        assert_eq!(eligible_control_weeks(&t).unwrap(), (1..=52).collect());
        let t = timeline("c", (0..52).filter(|&w| w != 5), vec![]);
        assert!(!eligible_control_weeks(&t).unwrap().contains(&6));
        assert!(eligible_control_weeks(&timeline("c", [], vec![])).unwrap().is_empty());
        assert!(eligible_control_weeks(&timeline("c", 0..5, vec![week_start(3)])).is_err());
    }

    fn case(id: &str, event: u32) -> CaseInstance {
        CaseInstance {
            subject_id: id.into(),
            event_week: event,
            predictor_week: event - 1,
        }
    }

    #[test]
    fn matching_respects_week_and_era() {
        let pre = week_index_of(date(2015, 1, 20)).unwrap();
        let same_woy_pre = week_index_of(date(2016, 1, 20)).unwrap();
        let same_woy_post = week_index_of(date(2019, 1, 20)).unwrap();
        assert_eq!(week_of_year(week_start(pre)), week_of_year(week_start(same_woy_pre)));
        let r = match_controls(&[case("a", pre)], &[("c".into(), [same_woy_pre].into())]);
        assert_eq!(r.pairs.len(), 1);
        assert_eq!(r.pairs[0].control_week, same_woy_pre);
        let r = match_controls(&[case("a", pre)], &[("c".into(), [same_woy_post].into())]);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched, vec!["a".to_string()]);
    }

    #[test]
    fn matching_is_order_independent() {
        let w = week_index_of(date(2015, 3, 3)).unwrap();
        let cases = vec![case("b", w), case("a", w)];
        let pool = vec![("c".to_string(), BTreeSet::from([w + 52 * 0]))];
        let r1 = match_controls(&cases, &pool);
        let mut rev = cases.clone();
        rev.reverse();
        let r2 = match_controls(&rev, &pool);
        assert_eq!(r1, r2);
        assert_eq!(r1.pairs.len(), 1);
        assert_eq!(r1.unmatched.len(), 1);
    }

    #[test]
    fn augmenting_path_beats_greedy() {
        // a can use c1 or c2, b only c1: greedy a→c1 would strand b
        let w1 = week_index_of(date(2015, 3, 3)).unwrap();
        let w2 = week_index_of(date(2015, 6, 3)).unwrap();
        let cases = vec![case("a", w1), case("b", w2)];
        let pool = vec![
            ("c1".to_string(), BTreeSet::from([w1, w2])),
            ("c2".to_string(), BTreeSet::from([w1])),
        ];
        let r = match_controls(&cases, &pool);
        assert_eq!(r.pairs.len(), 2);
        let b = r.pairs.iter().find(|p| p.case_id == "b").unwrap();
        assert_eq!(b.control_id, "c1");
    }

    #[test]
    fn features_from_dates() {
        let pred = week_index_of(date(2013, 3, 5)).unwrap();
        let mut t = timeline("a", [pred], vec![]);
        assert_eq!(week_start(pred), date(2013, 3, 5));
        let f = assemble_features(&t, pred).unwrap();
        assert_eq!(f.time_since_onset, 63.0);
        assert_eq!(f.diagnostic_delay, 31.0);
        assert_eq!(f.edss, None);
        assert_eq!(f.season, "Spring");
        t.visits = vec![
            Visit {
                date: date(2013, 2, 1),
                edss: Some(2.0),
                subscores: [Some(1.0); 8],
            },
            Visit {
                date: date(2013, 3, 11),
                edss: Some(3.5),
                subscores: [None; 8],
            },
            Visit {
                date: date(2013, 3, 12),
                edss: Some(9.0),
                subscores: [None; 8],
            },
        ];
        // the 2013-03-12 visit falls in the event week and must not be read
        assert_eq!(assemble_features(&t, pred).unwrap().edss, Some(3.5));
    }

    #[test]
    fn cohort_table_shape() {
        let config = LinkageConfig {
            variables: vec!["pm10".into()],
            ..Default::default()
        };
        let w = week_index_of(date(2015, 3, 3)).unwrap();
        let ts = vec![
            timeline("case1", w - 3..w + 2, vec![week_start(w)]),
            timeline("case2", w - 3..w + 2, vec![week_start(w)]),
            timeline("ctl", w - 3..w + 2, vec![]),
            timeline("nodata", [], vec![week_start(w)]),
        ];
        let out = build_cohort(&ts, &config).unwrap();
        assert_eq!(out.report.n_cases, 2);
        assert_eq!(out.report.n_controls, 1);
        assert_eq!(out.report.n_relapsers_ineligible, 1);
        assert_eq!(out.table.n_rows(), 3);
        assert_eq!(out.table.labels(OUTCOME).unwrap(), vec![true, false, true]);
        let ctl_pred = out.table.numeric("predictor_week").unwrap()[1].unwrap();
        assert_eq!(ctl_pred as u32, w - 1);
    }

    #[test]
    fn read_inputs() {
        let tokens = crate::table::default_missing_tokens();
        let csv = "patient_id,postcode,onset_date,diagnosis_date,follow_up_start,follow_up_end,sex,ethnicity,residence,age_at_onset,ms_pediatric,symptom_spinal_cord,symptom_brainstem,symptom_eye,symptom_supratentorial,symptom_other\n\
                   p1,27100,2014-02-01,2014-05-01,2015-01-01,2016-01-01,F,Caucasian,town,31.5,0,1,0,0,NA,0\n";
        let recs = read_static(csv.as_bytes(), &tokens).unwrap();
        assert_eq!(recs[0].age_at_onset, Some(31.5));
        assert_eq!(recs[0].symptoms[3], None);
        let bad = csv.replace("31.5", "old");
        assert!(matches!(read_static(bad.as_bytes(), &tokens), Err(Error::Cell { row: 0, .. })));
        let rel = read_relapses("patient_id,date\np1,2015-03-01\n".as_bytes(), &tokens).unwrap();
        assert_eq!(rel[0].1, date(2015, 3, 1));
        let v = read_visits(
            "patient_id,date,edss,pyramidal,cerebellar,brainstem_fs,sensory,bowel_bladder,visual,cerebral,ambulation\np1,2015-02-01,2.5,1,1,0,NA,0,0,0,1\n"
                .as_bytes(),
            &tokens,
        )
        .unwrap();
        assert_eq!(v[0].1.subscores[3], None);
        let (ts, diag) = assemble_timelines(recs, rel, v, HashMap::new());
        assert_eq!(ts[0].relapse_dates.len(), 1);
        assert_eq!(diag.len(), 1);
    }
}
