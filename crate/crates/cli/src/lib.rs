//! File-driven experiment runner for `jumpwave-core`.
//!
//! A run reads one [`ExperimentConfig`], validates all of it, computes the
//! task and writes CSV tables, optional SVG plots and `manifest.json` into the
//! output directory. Failures leave only `error.json` behind.

pub mod config;
pub mod output;
pub mod tasks;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use config::ExperimentConfig;
use output::{Plot, Table};

/// Exit code for bad input.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for a numerical procedure that failed.
pub const EXIT_NUMERIC: i32 = 3;
/// Exit code when outputs cannot be written.
pub const EXIT_IO: i32 = 1;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "JUMPWAVE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] jumpwave_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Core(e) if e.is_numeric() => EXIT_NUMERIC,
            RunError::Io(_) => EXIT_IO,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Parse(_) => "parse",
            RunError::Invalid(_) => "invalid",
            RunError::Core(e) => e.kind(),
            RunError::Io(_) => "io",
        }
    }

    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "exit_code": self.exit_code(),
            "kind": self.kind(),
            "message": self.to_string(),
        });
        if let RunError::Core(jumpwave_core::Error::Partial { best, .. }) = self {
            v["best"] = serde_json::json!({
                "cost": best.cost,
                "ratio": best.ratio,
                "penalty": best.penalty,
                "iterations": best.iterations,
            });
        }
        v
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// What a task hands back for writing.
#[derive(Debug, Default)]
pub struct TaskOutput {
    pub tables: Vec<Table>,
    pub plots: Vec<Plot>,
}

/// Files written by a successful run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
}

/// Apply the thread cap from the environment; ignores a pool that already exists.
pub fn configure_threads() -> Result<(), RunError> {
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v.trim().parse().map_err(|_| RunError::Invalid(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(RunError::Invalid(format!("{THREADS_VAR} must be positive")));
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Run a parsed config. Nothing is written until the task has succeeded.
pub fn run_config(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunSummary, RunError> {
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| config.output_dir.clone());
    let t0 = Instant::now();
    let prepared = tasks::prepare(config)?;
    let t1 = Instant::now();
    let result = tasks::compute(&prepared, config)?;
    let t2 = Instant::now();
    std::fs::create_dir_all(&out_dir)?;
    let mut files = Vec::new();
    for table in &result.tables {
        files.push(table.write(&out_dir)?);
    }
    if config.svg {
        for plot in &result.plots {
            files.push(plot.write(&out_dir)?);
        }
    }
    std::fs::write(out_dir.join("config.toml"), config.to_toml())?;
    files.push("config.toml".into());
    let t3 = Instant::now();
    let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1e3;
    let manifest = serde_json::json!({
        "task": config.task.name(),
        "seed": config.seed,
        "config": config,
        "versions": {
            "jumpwave": env!("CARGO_PKG_VERSION"),
            "jumpwave_core": jumpwave_core::VERSION,
        },
        "threads": rayon::current_num_threads(),
        "timings_ms": { "validate": ms(t0, t1), "compute": ms(t1, t2), "write": ms(t2, t3) },
        "outputs": files,
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
    std::fs::write(out_dir.join("manifest.json"), text)?;
    files.push("manifest.json".into());
    Ok(RunSummary { out_dir, files })
}

/// Where an error record goes when the config itself may be unreadable.
fn error_dir(config: Option<&ExperimentConfig>, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("jumpwave-out"))
}

fn write_error(dir: &Path, err: &RunError) {
    let record = serde_json::to_string_pretty(&err.record()).unwrap_or_default();
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(dir.join("error.json"), record);
    }
}

/// `jumpwave run`: returns the process exit code.
pub fn run_path(path: &Path, out: Option<&Path>) -> i32 {
    let config = match ExperimentConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            write_error(&error_dir(None, out), &e);
            return e.exit_code();
        }
    };
    match run_config(&config, out) {
        Ok(summary) => {
            println!("wrote {} files to {}", summary.files.len(), summary.out_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            write_error(&error_dir(Some(&config), out), &e);
            e.exit_code()
        }
    }
}

/// `jumpwave validate`: parse and validate without computing or writing.
pub fn validate_path(path: &Path) -> i32 {
    match ExperimentConfig::load(path).and_then(|c| tasks::prepare(&c).map(|_| c)) {
        Ok(c) => {
            println!("ok: task {}", c.task.name());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", e.record());
            e.exit_code()
        }
    }
}
