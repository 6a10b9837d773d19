//! TOML run configuration.
//!
//! Path values may contain `${VAR}`, replaced from the environment at load
//! time; relative paths resolve against the config file's directory.
//! Command-line flags (or their environment variables) override file values.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::linkage::LinkageConfig;
use crate::synthetic::{SyntheticSpec, PATIENTS_FILE, POSTCODES_FILE, RELAPSES_FILE, STATIONS_FILE, VISITS_FILE};
use crate::table::default_missing_tokens;

pub const EXPOSURE_FILE: &str = "exposure.csv";
pub const COHORT_FILE: &str = "cohort.csv";
pub const MATCHING_FILE: &str = "matching.json";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Directory holding the five input files under their default names.
    pub data_dir: Option<String>,
    pub out_dir: Option<String>,
    pub stations: Option<String>,
    pub postcodes: Option<String>,
    pub patients: Option<String>,
    pub relapses: Option<String>,
    pub visits: Option<String>,
    pub exposure: Option<String>,
    pub cohort: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsConfig,
    /// Applies to the experiment and the synthetic generator.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub missing_tokens: Vec<String>,
    pub linkage: LinkageConfig,
    pub experiment: ExperimentConfig,
    pub synthetic: SyntheticSpec,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            seed: None,
            threads: None,
            missing_tokens: default_missing_tokens(),
            linkage: LinkageConfig::default(),
            experiment: ExperimentConfig::default(),
            synthetic: SyntheticSpec::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Replaces every `${NAME}` using `lookup`; `$$` is a literal dollar.
pub fn interpolate(raw: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let tail = &rest[i + 1..];
        if let Some(t) = tail.strip_prefix('$') {
            out.push('$');
            rest = t;
        } else if let Some(t) = tail.strip_prefix('{') {
            let end = t
                .find('}')
                .ok_or_else(|| Error::Config(format!("unterminated `${{` in `{raw}`")))?;
            let name = &t[..end];
            if name.is_empty() {
                return Err(Error::Config(format!("empty variable name in `{raw}`")));
            }
            let value = lookup(name).ok_or_else(|| Error::Config(format!("environment variable `{name}` is not set")))?;
            out.push_str(&value);
            rest = &t[end + 1..];
        } else {
            out.push('$');
            rest = tail;
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn env_lookup(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        if let Some(seed) = config.seed {
            config.set_seed(seed);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.experiment.seed = seed;
        self.synthetic.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.experiment.validate().map_err(|e| Error::Config(format!("experiment: {e}")))?;
        if self.linkage.variables.is_empty() {
            return Err(Error::Config("linkage.variables is empty".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        Ok(())
    }

    fn resolve(&self, raw: &str) -> Result<PathBuf> {
        let p = PathBuf::from(interpolate(raw, env_lookup)?);
        Ok(if p.is_absolute() { p } else { self.base_dir.join(p) })
    }

    fn input(&self, explicit: &Option<String>, default_name: &str, key: &str) -> Result<PathBuf> {
        match (explicit, &self.paths.data_dir) {
            (Some(p), _) => self.resolve(p),
            (None, Some(dir)) => Ok(self.resolve(dir)?.join(default_name)),
            (None, None) => Err(Error::Config(format!("paths.{key} or paths.data_dir is required"))),
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        match &self.paths.out_dir {
            Some(d) => self.resolve(d),
            None => Ok(self.base_dir.join("out")),
        }
    }

    pub fn set_out_dir(&mut self, dir: &Path) {
        self.paths.out_dir = Some(dir.to_string_lossy().into_owned());
    }

    pub fn set_data_dir(&mut self, dir: &Path) {
        self.paths.data_dir = Some(dir.to_string_lossy().into_owned());
    }

    pub fn stations(&self) -> Result<PathBuf> {
        self.input(&self.paths.stations, STATIONS_FILE, "stations")
    }

    pub fn postcodes(&self) -> Result<PathBuf> {
        self.input(&self.paths.postcodes, POSTCODES_FILE, "postcodes")
    }

    pub fn patients(&self) -> Result<PathBuf> {
        self.input(&self.paths.patients, PATIENTS_FILE, "patients")
    }

    pub fn relapses(&self) -> Result<PathBuf> {
        self.input(&self.paths.relapses, RELAPSES_FILE, "relapses")
    }

    pub fn visits(&self) -> Result<PathBuf> {
        self.input(&self.paths.visits, VISITS_FILE, "visits")
    }

    /// Output of `link`, input of `cohort`.
    pub fn exposure(&self) -> Result<PathBuf> {
        match &self.paths.exposure {
            Some(p) => self.resolve(p),
            None => Ok(self.out_dir()?.join(EXPOSURE_FILE)),
        }
    }

    /// Output of `cohort`, input of `run`.
    pub fn cohort(&self) -> Result<PathBuf> {
        match &self.paths.cohort {
            Some(p) => self.resolve(p),
            None => Ok(self.out_dir()?.join(COHORT_FILE)),
        }
    }

    /// Resolved paths, for logging.
    pub fn describe(&self) -> BTreeMap<&'static str, String> {
        let show = |r: Result<PathBuf>| r.map_or_else(|e| format!("<{e}>"), |p| p.display().to_string());
        [
            ("stations", show(self.stations())),
            ("postcodes", show(self.postcodes())),
            ("patients", show(self.patients())),
            ("relapses", show(self.relapses())),
            ("visits", show(self.visits())),
            ("exposure", show(self.exposure())),
            ("cohort", show(self.cohort())),
            ("out_dir", show(self.out_dir())),
        ]
        .into_iter()
        .collect()
    }
}

/// Fails with a config error naming `path` when it does not exist.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} file not found: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lookup(name: &str) -> Option<String> {
        match name {
            "DATA" => Some("/srv/data".into()),
            "EMPTY" => Some(String::new()),
            _ => None,
        }
    }

    #[test]
    fn interpolation() {
        assert_eq!(interpolate("${DATA}/x.csv", lookup).unwrap(), "/srv/data/x.csv");
        assert_eq!(interpolate("a${EMPTY}b", lookup).unwrap(), "ab");
        assert_eq!(interpolate("cost $$5 $x", lookup).unwrap(), "cost $5 $x");
        assert!(matches!(interpolate("${NOPE}", lookup), Err(Error::Config(m)) if m.contains("NOPE")));
        assert!(interpolate("${DATA", lookup).is_err());
        assert!(interpolate("${}", lookup).is_err());
    }

    #[test]
    fn defaults_and_overrides() {
        let text = r#"
seed = 7
[paths]
data_dir = "data"
cohort = "/abs/cohort.csv"
[experiment]
test_fraction = 0.25
[experiment.grid]
lr_c = [0.1, 1.0]
[linkage]
variables = ["pm10"]
"#;
        let c = RunConfig::from_toml(text, Path::new("/cfg")).unwrap();
        assert_eq!(c.experiment.seed, 7);
        assert_eq!(c.synthetic.seed, 7);
        assert_eq!(c.experiment.test_fraction, 0.25);
        assert_eq!(c.experiment.grid.lr_c, vec![0.1, 1.0]);
        assert_eq!(c.experiment.grid.rf_min_samples_leaf, crate::cv::GridSpec::default().rf_min_samples_leaf);
        assert_eq!(c.linkage.thresholds, crate::linkage::default_thresholds());
        assert_eq!(c.stations().unwrap(), PathBuf::from("/cfg/data/stations.csv"));
        assert_eq!(c.cohort().unwrap(), PathBuf::from("/abs/cohort.csv"));
        assert_eq!(c.exposure().unwrap(), PathBuf::from("/cfg/out/exposure.csv"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        let bad_fraction = "[experiment]\ntest_fraction = 1.5\n";
        assert!(matches!(RunConfig::from_toml(bad_fraction, Path::new(".")), Err(Error::Config(_))));
        let unknown = "[paths]\nstation = \"x\"\n";
        assert!(matches!(RunConfig::from_toml(unknown, Path::new(".")), Err(Error::Config(_))));
        let c = RunConfig::default();
        assert!(matches!(c.stations(), Err(Error::Config(m)) if m.contains("paths.stations")));
    }

    #[test]
    fn missing_file_is_named() {
        let err = require_file(Path::new("/no/such/postcodes.csv"), "postcodes").unwrap_err();
        assert!(err.to_string().contains("/no/such/postcodes.csv"));
    }
}
