//! `dpfl domain-gap`: LDA projections and the centroid-gap statistic for a
//! config's source/target pair, optionally swept over shift magnitudes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dpfl_core::analysis::lda_project;
use dpfl_core::LabeledDataset;

use crate::config::ExperimentConfig;
use crate::persist;
use crate::CliError;

fn write_projection(path: &Path, projection: &ndarray::Array2<f64>) -> Result<(), CliError> {
    let mut text = String::from("# schema: dpfl.lda-projection.v1\nx,y\n");
    for row in projection.rows() {
        let _ = writeln!(text, "{},{}", row[0], row[1]);
    }
    std::fs::write(path, text).map_err(|e| CliError::Other(format!("writing projection: {e}")))
}

/// Compute the gap for the configured pair (and any extra magnitudes), and
/// write per-dataset projections plus a gap table.
pub fn cmd_domain_gap(
    config_path: &Path,
    overrides: &[String],
    magnitudes: &[f64],
    out: Option<&Path>,
) -> Result<PathBuf, CliError> {
    let config = ExperimentConfig::load(config_path, overrides)?;
    let dir = match out {
        Some(dir) => dir.to_path_buf(),
        None => persist::output_root().join(format!("domain-gap-{}", config.content_hash())),
    };
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Other(format!("creating output directory: {e}")))?;

    let mut gap_table = String::from("# schema: dpfl.domain-gap.v1\nmagnitude,gap\n");
    let project = |source: &LabeledDataset,
                   target: &LabeledDataset,
                   tag: &str,
                   table: &mut String,
                   magnitude: f64|
     -> Result<(), CliError> {
        let gap = lda_project(&[source, target]).map_err(|e| CliError::Other(e.to_string()))?;
        write_projection(&dir.join(format!("projection_source{tag}.csv")), &gap.projections[0])?;
        write_projection(&dir.join(format!("projection_target{tag}.csv")), &gap.projections[1])?;
        let _ = writeln!(table, "{magnitude},{}", gap.gap_statistic);
        println!("magnitude {magnitude}: gap {}", gap.gap_statistic);
        Ok(())
    };

    if magnitudes.is_empty() {
        let world = config.resolve()?;
        let magnitude = world.pair.shift.magnitude;
        project(&world.pair.source, &world.pair.target, "", &mut gap_table, magnitude)?;
    } else {
        for &magnitude in magnitudes {
            let mut swept = config.clone();
            match &mut swept.dataset {
                crate::config::DatasetConfig::Mixture { shift, .. }
                | crate::config::DatasetConfig::Idx { shift, .. } => {
                    shift.magnitude = magnitude;
                }
            }
            let world = swept.resolve()?;
            let tag = format!("_m{magnitude}");
            project(&world.pair.source, &world.pair.target, &tag, &mut gap_table, magnitude)?;
        }
    }
    std::fs::write(dir.join("gap.csv"), gap_table)
        .map_err(|e| CliError::Other(format!("writing gap.csv: {e}")))?;
    Ok(dir)
}
