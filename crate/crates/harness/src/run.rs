//! Executes an experiment and writes its artifacts.
//!
//! An output directory receives `resolved_config.toml`, `metrics.jsonl`,
//! one `<name>.csv` per plot table, one `<name>.ckpt` per checkpoint and
//! `summary.json`. All computation finishes before the first file is
//! written; if writing fails, every file written so far is removed.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::checkpoint::save_checkpoint;
use crate::config::{load_config, ExperimentConfig};
use crate::error::{io_err, HarnessError, Result};
use crate::experiments::{run_experiment, Artifacts, Outcome};
use crate::metrics::append_metrics;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug)]
pub struct RunReport {
    pub outcome: Outcome,
    pub files: Vec<PathBuf>,
}

pub fn run_config_file(path: &Path) -> Result<RunReport> {
    run(&load_config(path)?)
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let resolved = cfg.to_toml()?;
    info!("running {} into {}", cfg.experiment_id(), cfg.output_dir.display());
    let (outcome, art) = run_experiment(cfg)?;
    let mut written = Vec::new();
    let created_dir = !cfg.output_dir.exists();
    match write_all(&cfg.output_dir, &resolved, &outcome, &art, &mut written) {
        Ok(()) => Ok(RunReport { outcome, files: written }),
        Err(e) => {
            for f in &written {
                let _ = fs::remove_file(f);
            }
            if created_dir {
                let _ = fs::remove_dir(&cfg.output_dir);
            }
            Err(e)
        }
    }
}

fn write_all(
    dir: &Path,
    resolved: &str,
    outcome: &Outcome,
    art: &Artifacts,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let put = |name: &str, bytes: &[u8], written: &mut Vec<PathBuf>| -> Result<()> {
        let p = dir.join(name);
        written.push(p.clone());
        fs::write(&p, bytes).map_err(io_err(&p))
    };
    put(RESOLVED_CONFIG, resolved.as_bytes(), written)?;

    let mp = dir.join(METRICS_FILE);
    written.push(mp.clone());
    // each run starts its own record stream
    fs::write(&mp, b"").map_err(io_err(&mp))?;
    let mut w = append_metrics(&mp)?;
    for rec in &art.metrics {
        w.write(rec)?;
    }
    w.finish()?;

    for (name, table) in &art.tables {
        put(&format!("{name}.csv"), table.to_csv()?.as_bytes(), written)?;
    }
    for (name, ckpt) in &art.checkpoints {
        let p = dir.join(format!("{name}.ckpt"));
        written.push(p.clone());
        save_checkpoint(&p, ckpt)?;
    }
    let summary = serde_json::to_string_pretty(outcome).map_err(|e| HarnessError::Metrics(e.to_string()))?;
    put(SUMMARY_FILE, summary.as_bytes(), written)?;
    Ok(())
}
