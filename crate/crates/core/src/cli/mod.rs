//! Config-driven experiment runner behind the `pdeinfo` binary.

pub mod config;
mod tasks;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

pub use config::{load_config, parse_config, ExperimentConfig, ModelConfig, Numerics, Target, Task, SCHEMA_VERSION};

use crate::error::{Error, Result};
use crate::inference::Check;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub task: String,
    /// The config as run, with defaults and derived values filled in.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub results: Value,
    pub timing: Timing,
    pub pass: bool,
}

/// Exit code for an error: 3 for numerical failures, 2 for everything
/// else (schema, config, IO).
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_CONFIG
    }
}

/// Payload printed on stderr when a run fails.
pub fn error_payload(e: &Error) -> Value {
    serde_json::json!({
        "error": match exit_code(e) {
            EXIT_NUMERICAL => "numerical",
            _ => "config",
        },
        "message": e.to_string(),
        "exit_code": exit_code(e),
    })
}

/// Fills in the solver box and θ₀ so that the written config reruns
/// identically without relying on defaults.
pub fn resolve(cfg: &ExperimentConfig) -> Result<ExperimentConfig> {
    let mut r = cfg.clone();
    r.numerics.kmax = Some(cfg.kmax()?);
    let theta0 = Some(cfg.model.theta0());
    match &mut r.model {
        ModelConfig::Heat { theta0: t, .. } | ModelConfig::Rd { theta0: t, .. } | ModelConfig::Ns { theta0: t, .. } => {
            *t = theta0
        }
    }
    Ok(r)
}

fn staging_dir(out: &Path) -> PathBuf {
    let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    out.with_file_name(format!(".{name}.staging-{}", std::process::id()))
}

/// Runs the task into `out`. Files are written to a sibling staging
/// directory that is renamed into place only on success, so a failed run
/// leaves nothing behind. An existing nonempty `out` is an error unless
/// `force` is set.
pub fn run(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<Report> {
    cfg.validate()?;
    if out.exists() && !force && fs::read_dir(out)?.next().is_some() {
        return Err(Error::Config(format!("{} exists and is not empty (use --force)", out.display())));
    }
    let resolved = resolve(cfg)?;
    let stage = staging_dir(out);
    if stage.exists() {
        fs::remove_dir_all(&stage)?;
    }
    fs::create_dir_all(&stage)?;
    let result = run_in(&resolved, &stage);
    match result {
        Ok(report) => {
            if out.exists() {
                fs::remove_dir_all(out)?;
            }
            fs::rename(&stage, out)?;
            Ok(report)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&stage);
            Err(e)
        }
    }
}

fn run_in(cfg: &ExperimentConfig, dir: &Path) -> Result<Report> {
    let start = Instant::now();
    let kmax = cfg.numerics.kmax.expect("resolved config");
    let ctx = tasks::Context { cfg, kmax, out: dir };
    let output = match cfg.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| tasks::run_task(&ctx))?,
        None => tasks::run_task(&ctx)?,
    };
    let pass = output.checks.iter().all(|c| c.pass);
    let report = Report {
        schema_version: SCHEMA_VERSION,
        task: cfg.task.name().into(),
        config: cfg.clone(),
        seed: cfg.seed,
        checks: output.checks,
        results: output.results,
        timing: Timing { elapsed_seconds: start.elapsed().as_secs_f64() },
        pass,
    };
    fs::write(dir.join("config.resolved.json"), serde_json::to_vec_pretty(cfg)?)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}
