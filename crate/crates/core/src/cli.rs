//! `relapse` command line: synth, link, cohort, run, report.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cohort::{
    assemble_timelines, build_cohort, cohort_schema, exposure_by_patient, read_relapses, read_static, read_visits,
};
use crate::config::{require_file, RunConfig, MATCHING_FILE};
use crate::error::{Error, Result};
use crate::experiment::run_experiment;
use crate::io::{atomic_write, atomic_write_bytes, open};
use crate::linkage::{build_exposure_table, exposure_schema, read_postcodes, read_stations};
use crate::report::{write_artifacts, write_derived, RunArtifact, REPORT_JSON};
use crate::synthetic::{generate, link_requests, SyntheticSpec};
use crate::table::read_csv_table;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "relapse", version, about = "Environmental exposure and relapse prediction pipeline")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "RELAPSE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true, env = "RELAPSE_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "RELAPSE_THREADS")]
    pub threads: Option<usize>,
    /// Output directory (for `synth`, the dataset directory).
    #[arg(long, global = true, env = "RELAPSE_OUT")]
    pub out: Option<PathBuf>,
    /// Directory holding the input CSV files.
    #[arg(long, global = true, env = "RELAPSE_DATA")]
    pub data: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a planted signal.
    Synth {
        /// TOML synthetic spec; defaults to the `[synthetic]` table of the config.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Link patients to stations and aggregate weekly exposure.
    Link,
    /// Build the matched case-control cohort.
    Cohort,
    /// Train, select and evaluate every model cell.
    Run,
    /// Regenerate the table and curve files from a JSON report.
    Report {
        /// Report to read; defaults to `<out>/report.json`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    /// Outputs were written but some units failed.
    Partial,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Spec { .. } => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// Loads the config file (if any) and applies flag/environment overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Error::Config(format!("config file not found: {}", path.display())));
            }
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        config.threads = Some(t);
    }
    if let Some(out) = &cli.out {
        config.set_out_dir(out);
    }
    if let Some(data) = &cli.data {
        config.set_data_dir(data);
    }
    Ok(config)
}

fn spec_for(cli: &Cli, config: &RunConfig, spec: &Option<PathBuf>) -> Result<SyntheticSpec> {
    let mut s = match spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", path.display())))?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => config.synthetic.clone(),
    };
    if let Some(seed) = cli.seed.or(config.seed) {
        s.seed = seed;
    }
    Ok(s)
}

pub fn cmd_synth(cli: &Cli, config: &RunConfig, spec: &Option<PathBuf>) -> Result<Outcome> {
    let spec = spec_for(cli, config, spec)?;
    let dir = match (&cli.out, &config.paths.data_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(_)) => config.stations()?.parent().map(Path::to_path_buf).unwrap_or_default(),
        (None, None) => PathBuf::from("data"),
    };
    let data = generate(&spec)?;
    data.write_dir(&dir)?;
    let mut resolved = serde_json::to_string_pretty(&data.spec)?;
    resolved.push('\n');
    atomic_write_bytes(&dir.join("spec.json"), resolved.as_bytes())?;
    println!(
        "wrote {} patients, {} relapses, {} visits, {} stations to {}",
        data.patients.len(),
        data.relapses.len(),
        data.visits.len(),
        data.stations.len(),
        dir.display()
    );
    Ok(Outcome::Complete)
}

pub fn cmd_link(config: &RunConfig) -> Result<Outcome> {
    let (stations_path, postcodes_path, patients_path) = (config.stations()?, config.postcodes()?, config.patients()?);
    require_file(&stations_path, "stations")?;
    require_file(&postcodes_path, "postcodes")?;
    require_file(&patients_path, "patients")?;
    let stations = read_stations(open(&stations_path)?, &config.missing_tokens)?;
    if stations.is_empty() {
        log::warn!("{}: no station data; exposure will be empty", stations_path.display());
    }
    let postcodes = read_postcodes(open(&postcodes_path)?)?;
    let patients = read_static(open(&patients_path)?, &config.missing_tokens)?;
    let linked = build_exposure_table(&link_requests(&patients), &stations, &postcodes, &config.linkage)?;
    let out = config.exposure()?;
    atomic_write(&out, |w| linked.table.write_csv(w))?;
    for d in &linked.diagnostics {
        eprintln!("warning: {d}");
    }
    println!(
        "linked {} of {} patients, {} patient-weeks -> {}",
        patients.len() - linked.diagnostics.len(),
        patients.len(),
        linked.table.n_rows(),
        out.display()
    );
    Ok(if linked.diagnostics.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial
    })
}

pub fn cmd_cohort(config: &RunConfig) -> Result<Outcome> {
    let paths = [
        (config.patients()?, "patients"),
        (config.relapses()?, "relapses"),
        (config.visits()?, "visits"),
        (config.exposure()?, "exposure"),
    ];
    for (p, what) in &paths {
        require_file(p, what)?;
    }
    let tokens = &config.missing_tokens;
    let patients = read_static(open(&paths[0].0)?, tokens)?;
    let relapses = read_relapses(open(&paths[1].0)?, tokens)?;
    let visits = read_visits(open(&paths[2].0)?, tokens)?;
    let exposure_table = read_csv_table(open(&paths[3].0)?, &exposure_schema(&config.linkage), tokens)?;
    let exposure = exposure_by_patient(&exposure_table, &config.linkage)?;
    let (timelines, diagnostics) = assemble_timelines(patients, relapses, visits, exposure);
    for d in &diagnostics {
        eprintln!("warning: {d}");
    }
    let cohort = build_cohort(&timelines, &config.linkage)?;
    let out = config.cohort()?;
    atomic_write(&out, |w| cohort.table.write_csv(w))?;
    let mut report = serde_json::to_string_pretty(&cohort.report)?;
    report.push('\n');
    let matching = out.with_file_name(MATCHING_FILE);
    atomic_write_bytes(&matching, report.as_bytes())?;
    let r = &cohort.report;
    println!(
        "{} cases, {} controls, {} unmatched cases ({} patients) -> {}",
        r.n_cases,
        r.n_controls,
        r.matching.unmatched.len(),
        r.n_patients,
        out.display()
    );
    Ok(Outcome::Complete)
}

pub fn cmd_run(config: &RunConfig) -> Result<Outcome> {
    let cohort_path = config.cohort()?;
    require_file(&cohort_path, "cohort")?;
    let table = read_csv_table(
        open(&cohort_path)?,
        &cohort_schema(&config.linkage),
        &config.missing_tokens,
    )?;
    let report = run_experiment(&table, &config.experiment)?;
    let artifact = RunArtifact::new(config.experiment.clone(), report);
    let dir = config.out_dir()?;
    write_artifacts(&dir, &artifact)?;
    for c in &artifact.report.cells {
        println!(
            "{:<14} auc-roc {:.3} [{:.3}, {:.3}]  auc-pr {:.3}",
            c.cell.label(),
            c.test.auc_roc,
            c.test.auc_roc_ci.0,
            c.test.auc_roc_ci.1,
            c.test.auc_pr
        );
    }
    for f in &artifact.report.failures {
        eprintln!("error: {} failed: {}", f.cell.label(), f.error);
    }
    println!("report written to {}", dir.display());
    if artifact.report.cells.is_empty() {
        return Err(Error::InsufficientData("every cell failed".into()));
    }
    Ok(if artifact.report.is_partial() {
        Outcome::Partial
    } else {
        Outcome::Complete
    })
}

pub fn cmd_report(config: &RunConfig, input: &Option<PathBuf>) -> Result<Outcome> {
    let path = match input {
        Some(p) => p.clone(),
        None => config.out_dir()?.join(REPORT_JSON),
    };
    require_file(&path, "report")?;
    let artifact = RunArtifact::load(&path)?;
    let dir = config.out_dir()?;
    for p in write_derived(&dir, &artifact)? {
        println!("{}", p.display());
    }
    Ok(if artifact.report.is_partial() {
        Outcome::Partial
    } else {
        Outcome::Complete
    })
}

fn dispatch(cli: &Cli, config: &RunConfig) -> Result<Outcome> {
    match &cli.command {
        Command::Synth { spec } => cmd_synth(cli, config, spec),
        Command::Link => cmd_link(config),
        Command::Cohort => cmd_cohort(config),
        Command::Run => cmd_run(config),
        Command::Report { input } => cmd_report(config, input),
    }
}

/// Runs one command and maps the result to an exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = load_config(cli).and_then(|config| {
        log::debug!("paths: {:?}", config.describe());
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(t) = config.threads {
            pool = pool.num_threads(t);
        }
        let pool = pool
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        pool.install(|| dispatch(cli, &config))
    });
    match result {
        Ok(Outcome::Complete) => EXIT_OK,
        Ok(Outcome::Partial) => EXIT_PARTIAL,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}
