//! `dpfl sweep`: run a grid of experiments with resumption and a summary.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use dpfl_core::analysis::{self, RunSummary};

use crate::commands::run::execute_run;
use crate::config::{SweepCell, SweepSpec};
use crate::persist;
use crate::CliError;

/// Expand the sweep, run incomplete cells in a worker pool, and summarize.
///
/// Completed cells (status `ok`) are skipped untouched, so an interrupted
/// sweep can simply be rerun. Failed cells are recorded and do not stop the
/// rest of the grid.
pub fn cmd_sweep(spec_path: &Path, out: Option<&Path>, jobs: Option<usize>) -> Result<PathBuf, CliError> {
    let spec = SweepSpec::load(spec_path)?;
    let cells = spec.expand()?;
    let sweep_dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => persist::output_root().join(format!("sweep-{}", sweep_hash(&spec))),
    };
    let cells_dir = sweep_dir.join("cells");
    std::fs::create_dir_all(&cells_dir)
        .map_err(|e| CliError::Other(format!("creating sweep directory: {e}")))?;

    if let Some(workers) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Other(format!("building worker pool: {e}")))?
            .install(|| run_cells(&cells, &cells_dir));
    } else {
        run_cells(&cells, &cells_dir);
    }

    summarize_sweep(&cells, &cells_dir, &sweep_dir)?;
    println!("sweep complete: {}", sweep_dir.display());
    Ok(sweep_dir)
}

fn sweep_hash(spec: &SweepSpec) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(toml::to_string(spec).expect("sweep serializes").as_bytes());
    digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
}

fn cell_dir(cells_dir: &Path, cell: &SweepCell) -> PathBuf {
    cells_dir.join(cell.config.content_hash())
}

fn run_cells(cells: &[SweepCell], cells_dir: &Path) {
    cells.par_iter().for_each(|cell| {
        let dir = cell_dir(cells_dir, cell);
        if persist::is_complete(&dir) {
            return;
        }
        let mut config = cell.config.clone();
        config.output.dir = Some(dir.clone());
        if let Err(error) = execute_run(&config) {
            // Leave a marker; the summary will list the cell as failed.
            let _ = std::fs::create_dir_all(&dir);
            let _ = persist::write_status(&dir, &format!("failed: {error}"));
            log::warn!("sweep cell {} failed: {error}", dir.display());
        }
    });
}

fn summarize_sweep(cells: &[SweepCell], cells_dir: &Path, sweep_dir: &Path) -> Result<(), CliError> {
    let mut rows = Vec::new();
    let mut cell_lines = String::from("# schema: dpfl.sweep-cells.v1\ncell,status,strategy,seed,axes\n");
    for cell in cells {
        let dir = cell_dir(cells_dir, cell);
        let status = persist::read_status(&dir).unwrap_or_else(|| "missing".into());
        let axes_text: Vec<String> =
            cell.axes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        cell_lines.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.config.content_hash(),
            if status == "ok" { "ok" } else { "failed" },
            cell.config.federation.strategy,
            cell.seed,
            axes_text.join(";")
        ));
        if status != "ok" {
            continue;
        }
        let best_accuracy = persist::read_best_accuracy(&dir)?;
        let (best_auc, best_asr) = match persist::read_attack_summary(&dir) {
            Some((auc, asr)) => (Some(auc), Some(asr)),
            None => (None, None),
        };
        rows.push(RunSummary {
            axes: cell.axes.clone(),
            strategy: cell
                .config
                .strategy()
                .expect("cell config was validated during expansion"),
            seed: cell.seed,
            best_accuracy,
            best_auc,
            best_asr,
        });
    }

    std::fs::write(sweep_dir.join("cells.csv"), cell_lines)
        .map_err(|e| CliError::Other(format!("writing cells.csv: {e}")))?;
    if !rows.is_empty() {
        let table = analysis::summarize(&rows).map_err(|e| CliError::Other(e.to_string()))?;
        std::fs::write(sweep_dir.join("summary.csv"), analysis::summary_csv(&table))
            .map_err(|e| CliError::Other(format!("writing summary.csv: {e}")))?;
    }
    Ok(())
}
