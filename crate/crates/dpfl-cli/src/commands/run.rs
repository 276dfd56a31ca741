//! `dpfl run`: execute one experiment into a self-describing directory.

use std::path::{Path, PathBuf};

use dpfl_core::attacks;
use dpfl_core::federation::{run, RunOptions};

use crate::config::ExperimentConfig;
use crate::persist;
use crate::CliError;

/// Run an experiment from a parsed config. Returns the experiment directory.
pub fn execute_run(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = persist::experiment_dir(config);
    if persist::is_complete(&dir) {
        return Err(CliError::Config(format!(
            "{} already holds a completed experiment; choose another output.dir or remove it",
            dir.display()
        )));
    }
    let world = config.resolve()?;
    let needs_reports = config.output.retain_gradients || config.attack.enable;
    let options = RunOptions {
        retain_reports: needs_reports,
        ..Default::default()
    };

    let trace = match run(
        &world.spec,
        &world.pair,
        &world.partition,
        &world.target_test,
        &world.federation,
        &world.privacy,
        &options,
    ) {
        Ok(trace) => trace,
        Err(failure) => {
            // Preserve whatever was recorded, marked as failed.
            std::fs::create_dir_all(&dir)
                .map_err(|e| CliError::Other(format!("creating experiment dir: {e}")))?;
            let _ = std::fs::write(
                dir.join(persist::METRICS_FILE),
                dpfl_core::analysis::metrics_csv(&failure.partial.metrics),
            );
            let _ = std::fs::write(dir.join(persist::CONFIG_FILE), config.to_canonical_toml());
            persist::write_status(&dir, &format!("failed: {}", failure.error))?;
            return Err(CliError::Training(failure.error.to_string()));
        }
    };

    persist::write_run(&dir, config, &world.spec, &trace)?;

    if config.attack.enable {
        let split = world
            .attack_split
            .as_ref()
            .expect("attack split resolved when attacks are enabled");
        let report = attacks::audit_trace(
            &trace,
            split,
            &world.spec,
            &world.pair.target,
            &world.target_test,
        )
        .map_err(|e| CliError::Audit(e.to_string()))?;
        persist::write_attack_report(&dir, &report)?;
    }

    persist::write_status(&dir, "ok")?;
    Ok(dir)
}

/// CLI entry: parse the config file, apply overrides, run.
pub fn cmd_run(
    config_path: &Path,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let mut config = ExperimentConfig::load(config_path, overrides)?;
    if let Some(dir) = out {
        config.output.dir = Some(dir.to_path_buf());
    }
    let dir = execute_run(&config)?;
    println!("experiment complete: {}", dir.display());
    Ok(dir)
}
