//! Experiment runner: JSON configuration in, CSV tables and a JSON summary out.
//!
//! Every CSV starts with `# config_sha256=<hex> seed=<u64> version=<semver>`;
//! the same (config, seed) pair reproduces every table byte for byte.
//! Wall time appears only in `summary.json`.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{parse_config, Experiment, ExperimentConfig, LoadedConfig, Violation};
pub use experiments::{Check, Outcome, Table};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "AVERAGING_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Config(Vec<Violation>),
    #[error("numerical failure: {0}")]
    Numeric(#[from] averaging_core::Error),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("verification failed: {0}")]
    Verify(String),
}

impl From<Violation> for RunError {
    fn from(v: Violation) -> Self {
        Self::Config(vec![v])
    }
}

impl RunError {
    /// 1 failed check or verification, 2 configuration, 3 numerics or i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Verify(_) => 1,
            Self::Config(_) => 2,
            Self::Numeric(_) | Self::Io(_) => 3,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Compare against the files already in the output directory instead
    /// of writing.
    pub verify: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Reproducibility {
    pub config_sha256: String,
    pub seed: u64,
    pub version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub experiment: Experiment,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    pub reproducibility: Reproducibility,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: Summary,
    pub out_dir: PathBuf,
    /// `(file name, full contents)` of every CSV, header included.
    pub files: Vec<(String, String)>,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.summary.pass {
            0
        } else {
            1
        }
    }
}

pub fn header(sha256: &str, seed: u64) -> String {
    format!("# config_sha256={sha256} seed={seed} version={VERSION}")
}

/// Reads the digest recorded in a CSV header line.
pub fn recorded_digest(text: &str) -> Option<&str> {
    text.lines()
        .next()?
        .strip_prefix("# ")?
        .split(' ')
        .find_map(|kv| kv.strip_prefix("config_sha256="))
}

pub fn load(path: &Path) -> Result<LoadedConfig, RunError> {
    let text = fs::read_to_string(path)
        .map_err(|e| Violation::error("$", format!("cannot read {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

/// Output directory: explicit option, then the environment variable, then
/// the config, then `out/<experiment>`.
pub fn resolve_out_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.name()))
}

/// Runs without touching the filesystem.
pub fn execute(loaded: &LoadedConfig, seed: Option<u64>) -> Result<(Summary, Vec<(String, String)>), RunError> {
    let mut cfg = loaded.config.clone();
    if let Some(s) = seed {
        cfg.seeds.base = s;
    }
    let (errors, warnings): (Vec<_>, Vec<_>) = cfg.validate().into_iter().partition(|v| !v.warning);
    if !errors.is_empty() {
        return Err(RunError::Config(errors));
    }
    let start = Instant::now();
    let outcome = experiments::dispatch(&cfg)?;
    let wall = start.elapsed().as_secs_f64();
    let head = header(&loaded.sha256, cfg.seeds.base);
    let files: Vec<(String, String)> = outcome
        .tables
        .iter()
        .map(|t| (t.file.clone(), format!("{head}\n{}", t.body)))
        .collect();
    let summary = Summary {
        experiment: cfg.experiment,
        pass: outcome.checks.iter().all(|c| c.pass),
        checks: outcome.checks,
        warnings: warnings.iter().map(ToString::to_string).collect(),
        wall_time_s: wall,
        files: files.iter().map(|f| f.0.clone()).collect(),
        reproducibility: Reproducibility {
            config_sha256: loaded.sha256.clone(),
            seed: cfg.seeds.base,
            version: VERSION,
        },
    };
    Ok((summary, files))
}

/// Runs, then writes (or with `verify`, compares) the artifacts.
pub fn run(loaded: &LoadedConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    let out_dir = resolve_out_dir(&loaded.config, opts.out_dir.as_deref());
    if opts.verify {
        // a config edited since the artifacts were written fails before any work
        let existing = read_existing(&out_dir)?;
        for (name, text) in &existing {
            match recorded_digest(text) {
                Some(d) if d == loaded.sha256 => {}
                Some(d) => {
                    return Err(RunError::Verify(format!(
                        "{name}: recorded config hash {d} does not match {}",
                        loaded.sha256
                    )))
                }
                None => return Err(RunError::Verify(format!("{name}: missing header"))),
            }
        }
    }
    let (summary, files) = execute(loaded, opts.seed)?;
    if opts.verify {
        for (name, text) in &files {
            let old = fs::read_to_string(out_dir.join(name))
                .map_err(|e| RunError::Verify(format!("{name}: cannot read previous output: {e}")))?;
            if &old != text {
                return Err(RunError::Verify(format!("{name}: output differs from the recorded run")));
            }
        }
    } else {
        fs::create_dir_all(&out_dir)?;
        for (name, text) in &files {
            fs::write(out_dir.join(name), text)?;
        }
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        fs::write(out_dir.join("summary.json"), json + "\n")?;
    }
    Ok(RunReport { summary, out_dir, files })
}

fn read_existing(dir: &Path) -> Result<Vec<(String, String)>, RunError> {
    let entries = fs::read_dir(dir).map_err(|e| RunError::Verify(format!("cannot read {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            out.push((name, fs::read_to_string(&path)?));
        }
    }
    if out.is_empty() {
        return Err(RunError::Verify(format!("no CSV files in {}", dir.display())));
    }
    out.sort();
    Ok(out)
}
