//! `dpfl audit`: run the MIA/SIA audits over a persisted experiment.

use std::path::Path;

use dpfl_core::attacks::{self, AuditInputs};

use crate::config::ExperimentConfig;
use crate::persist;
use crate::CliError;

/// Audit an experiment directory that retained its gradient log. Datasets
/// and the attack split are rebuilt deterministically from the config
/// snapshot; parameters and reports come from the trace files.
pub fn cmd_audit(dir: &Path) -> Result<(), CliError> {
    let config_path = dir.join(persist::CONFIG_FILE);
    if !config_path.exists() {
        return Err(CliError::Audit(format!(
            "{} has no config snapshot; is it an experiment directory?",
            dir.display()
        )));
    }
    let mut config = ExperimentConfig::load(&config_path, &[])?;
    // The split must exist even if the original run had attacks disabled.
    config.attack.enable = true;
    let world = config.resolve()?;
    let stored = persist::read_trace(dir, &world.spec)?;
    let split = world.attack_split.as_ref().expect("attack split resolved");

    let inputs = AuditInputs {
        spec: &world.spec,
        strategy: stored.strategy,
        snapshots: &stored.snapshots,
        reports: &stored.reports,
        lrs: &stored.lrs,
        split,
        train: &world.pair.target,
        test: &world.target_test,
    };
    let report = attacks::audit(&inputs).map_err(|e| CliError::Audit(e.to_string()))?;
    persist::write_attack_report(dir, &report)?;
    println!(
        "audit complete: best AUC {:.4} (round {}), best ASR {:.4} (round {})",
        report.best_auc, report.best_auc_round, report.best_asr, report.best_asr_round
    );
    Ok(())
}
