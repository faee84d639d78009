//! Config-driven experiment runner.
//!
//! `run` parses and validates a config, executes the requested experiment and
//! writes `report.json`, CSV data files, the resolved config (text and JSON)
//! and `manifest.json` into the output directory. Report files depend only on
//! the config and seed; wall time and timestamp live in the manifest.

pub mod experiments;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use gpcouple::config::{parse_config, write_config, ExperimentConfig};
use gpcouple::report::{compare_text, to_json, Comparison, Tolerances};
use gpcouple::Error;
use serde::Serialize;
use serde_json::{json, Value};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_THRESHOLD: i32 = 4;

/// Overrides the output directory of every run.
pub const OUTPUT_DIR_ENV: &str = "GPCOUPLE_OUTPUT_DIR";

pub const SCHEMA_VERSION: u32 = 1;

/// One pass/fail threshold evaluated by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// What an experiment produces before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub results: Value,
    pub non_paper: bool,
    /// `(file name, contents)`.
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Artifacts {
    pub fn file(&mut self, name: impl Into<String>, contents: String) {
        self.files.push((name.into(), contents));
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, pass, detail));
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dry_run: bool,
    /// Takes precedence over the environment variable and the config.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub output_dir: PathBuf,
    pub config: ExperimentConfig,
    /// `None` for dry runs.
    pub report: Option<Value>,
    pub checks: Vec<Check>,
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse { .. } | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Domain(_) => "domain",
        Error::Config(_) => "config",
        Error::SingularDesign { .. } => "singular_design",
        Error::DegeneratePosterior(_) => "degenerate_posterior",
        Error::Divergence { .. } => "divergence",
        Error::NonConvergence { .. } => "non_convergence",
        Error::Solver { .. } => "solver",
        Error::InsufficientData(_) => "insufficient_data",
        Error::ContractionViolation(_) => "contraction_violation",
        Error::HypothesisViolation(_) => "hypothesis_violation",
        Error::Parse { .. } => "parse",
        Error::ExcessiveExclusions { .. } => "excessive_exclusions",
        Error::Io(_) => "io",
    }
}

/// Machine-readable error document, one line.
pub fn error_json(err: &Error) -> String {
    let mut v = json!({
        "error": error_kind(err),
        "message": err.to_string(),
        "exit_code": exit_code_for(err),
    });
    if let Error::Parse { line, .. } = err {
        v["line"] = json!(line);
    }
    v.to_string()
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

pub fn resolve_output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(d) = &opts.output_dir {
        return d.clone();
    }
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => PathBuf::from(&cfg.experiment.output_dir),
    }
}

/// Parse, apply overrides and validate.
pub fn load_config(text: &str, opts: &RunOptions) -> Result<ExperimentConfig, Error> {
    let mut cfg = parse_config(text)?;
    if let Some(s) = opts.seed {
        cfg.experiment.master_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Run an experiment from config text. Errors are returned before anything
/// is written; a finished run with failing checks returns `EXIT_THRESHOLD`.
pub fn run_config_text(text: &str, opts: &RunOptions) -> Result<RunOutcome, Error> {
    let cfg = load_config(text, opts)?;
    let out_dir = resolve_output_dir(&cfg, opts);
    if opts.dry_run {
        return Ok(RunOutcome {
            exit_code: EXIT_OK,
            output_dir: out_dir,
            config: cfg,
            report: None,
            checks: Vec::new(),
        });
    }
    let jobs = opts.jobs.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool with {jobs} workers: {e}")))?;
    let started = Instant::now();
    let art = pool.install(|| experiments::run(&cfg))?;
    let wall = started.elapsed().as_secs_f64();

    let report = json!({
        "kind": cfg.experiment.kind.name(),
        "schema_version": SCHEMA_VERSION,
        "master_seed": cfg.experiment.master_seed,
        "non_paper": art.non_paper,
        "results": art.results,
        "checks": art.checks,
    });
    let mut files = vec![
        ("report.json".to_string(), to_json(&report)?),
        ("config.resolved.cfg".to_string(), write_config(&cfg)?),
        ("config.resolved.json".to_string(), to_json(&cfg)?),
    ];
    files.extend(art.files.iter().cloned());
    let passed = art.checks.iter().all(|c| c.pass);
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "library_version": gpcouple::VERSION,
        "kind": cfg.experiment.kind.name(),
        "master_seed": cfg.experiment.master_seed,
        "jobs": pool.current_num_threads(),
        "wall_time_s": wall,
        "timestamp": SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        "files": files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "checks_passed": passed,
    });
    files.push(("manifest.json".to_string(), to_json(&manifest)?));

    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    for (name, contents) in &files {
        let p = out_dir.join(name);
        std::fs::write(&p, contents).map_err(|e| io_err(&p, e))?;
    }
    Ok(RunOutcome {
        exit_code: if passed { EXIT_OK } else { EXIT_THRESHOLD },
        output_dir: out_dir,
        config: cfg,
        report: Some(report),
        checks: art.checks,
    })
}

pub fn run_path(path: &Path, opts: &RunOptions) -> Result<RunOutcome, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    run_config_text(&text, opts)
}

pub fn compare_paths(a: &Path, b: &Path, tol: &Tolerances) -> Result<Comparison, Error> {
    let ta = std::fs::read_to_string(a).map_err(|e| io_err(a, e))?;
    let tb = std::fs::read_to_string(b).map_err(|e| io_err(b, e))?;
    compare_text(&ta, &tb, tol)
}
