//! Privacy-leakage audits over a training trace: gradient-similarity
//! membership inference (MIA, scored by AUC) and loss-based source inference
//! (SIA, scored by attack success rate), with best-over-training reporting.

use ndarray::Array2;

use crate::data::AttackSplit;
use crate::error::{Error, Result};
use crate::federation::{Strategy, TrainingTrace};
use crate::models::{self, GradientScope, ModelSpec, ParameterVector};
use crate::privacy::GradientReport;
use crate::LabeledDataset;

/// Which audited sample a score belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRef {
    /// A training sample: (owning client, index into the training set).
    Member { client: usize, index: usize },
    /// A held-out sample: index into the test set.
    NonMember { index: usize },
}

/// One sample's gradient-similarity score at one round.
#[derive(Debug, Clone)]
pub struct MembershipScore {
    pub sample: SampleRef,
    /// Cosine similarity rho in [-1, 1].
    pub score: f64,
    pub round: usize,
    pub is_member: bool,
}

/// Cosine similarity between an exposed update and a sample gradient.
/// Either vector having zero norm scores 0.
pub fn sample_similarity(exposed: &[f64], sample_gradient: &[f64]) -> f64 {
    debug_assert_eq!(exposed.len(), sample_gradient.len());
    let dot: f64 = exposed.iter().zip(sample_gradient).map(|(a, b)| a * b).sum();
    let norm_exposed = exposed.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_gradient = sample_gradient.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm_exposed == 0.0 || norm_gradient == 0.0 {
        log::debug!("sample_similarity saw a zero-norm vector; scoring 0");
        return 0.0;
    }
    (dot / (norm_exposed * norm_gradient)).clamp(-1.0, 1.0)
}

/// Mann-Whitney AUC of member scores against non-member scores; ties count
/// one half. Empty sides score the 0.5 baseline.
pub fn auc(member_scores: &[f64], non_member_scores: &[f64]) -> f64 {
    if member_scores.is_empty() || non_member_scores.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0;
    for &member in member_scores {
        for &non_member in non_member_scores {
            if member > non_member {
                wins += 1.0;
            } else if member == non_member {
                wins += 0.5;
            }
        }
    }
    wins / (member_scores.len() * non_member_scores.len()) as f64
}

/// The local model the server can reconstruct from one exposed update:
/// `theta_n = theta - lr * g~_n` on the exposed coordinates (body copied
/// unchanged for HT).
pub fn recover_client_model(
    params: &ParameterVector,
    report: &GradientReport,
    lr: f64,
    strategy: Strategy,
) -> Result<ParameterVector> {
    crate::federation::apply_update(params, &report.update, lr, strategy)
}

/// Everything an audit needs from a run. `snapshots[t]` holds the parameters
/// the round-t reports were computed against.
#[derive(Debug, Clone, Copy)]
pub struct AuditInputs<'a> {
    pub spec: &'a ModelSpec,
    pub strategy: Strategy,
    pub snapshots: &'a [ParameterVector],
    pub reports: &'a [Vec<GradientReport>],
    pub lrs: &'a [f64],
    pub split: &'a AttackSplit,
    /// The federated training set member indices point into.
    pub train: &'a LabeledDataset,
    /// The held-out set non-member indices point into.
    pub test: &'a LabeledDataset,
}

impl<'a> AuditInputs<'a> {
    fn rounds(&self) -> usize {
        self.reports.len()
    }

    fn validate(&self) -> Result<()> {
        if self.reports.is_empty() {
            return Err(Error::Audit("no gradient reports to audit".into()));
        }
        if self.snapshots.len() < self.reports.len() {
            return Err(Error::Audit(format!(
                "{} report rounds but only {} parameter snapshots",
                self.reports.len(),
                self.snapshots.len()
            )));
        }
        if self.lrs.len() < self.reports.len() {
            return Err(Error::Audit(format!(
                "{} report rounds but only {} learning rates",
                self.reports.len(),
                self.lrs.len()
            )));
        }
        Ok(())
    }

    fn report_of(&self, round: usize, client: usize) -> Result<&GradientReport> {
        self.reports[round]
            .iter()
            .find(|r| r.client_id == client)
            .ok_or_else(|| Error::Audit(format!("round {round} has no report from client {client}")))
    }
}

/// Gather rows of a dataset into a dense batch.
fn gather_batch(dataset: &LabeledDataset, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut features = Array2::zeros((indices.len(), dataset.dim()));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &index) in indices.iter().enumerate() {
        features.row_mut(row).assign(&dataset.features().row(index));
        labels.push(dataset.labels()[index]);
    }
    (features, labels)
}

/// Per-sample gradients at `params`, restricted to the strategy's exposed
/// coordinates, one row per requested sample.
fn exposed_sample_gradients(
    spec: &ModelSpec,
    params: &ParameterVector,
    strategy: Strategy,
    dataset: &LabeledDataset,
    indices: &[usize],
) -> Result<Array2<f64>> {
    let (features, labels) = gather_batch(dataset, indices);
    let grads = models::per_sample_gradients(spec, params, &features, &labels)?;
    let exposed = match strategy.exposed_scope() {
        GradientScope::Full => grads,
        GradientScope::Head => models::restrict(&grads, GradientScope::Head),
    };
    Ok(exposed.rows)
}

/// Membership inference for one round.
///
/// Members are scored against their own client's exposed update; non-members
/// against every client's update, keeping the maximum. Returns all scores and
/// the Mann-Whitney AUC.
pub fn mia_round(inputs: &AuditInputs<'_>, round: usize) -> Result<(Vec<MembershipScore>, f64)> {
    inputs.validate()?;
    if round >= inputs.rounds() {
        return Err(Error::Audit(format!(
            "round {round} out of range for {} audited rounds",
            inputs.rounds()
        )));
    }
    let params = &inputs.snapshots[round];
    let mut scores = Vec::new();
    let mut member_scores = Vec::new();
    let mut non_member_scores = Vec::new();

    let members = inputs.split.members();
    if !members.is_empty() {
        let indices: Vec<usize> = members.iter().map(|&(_, index)| index).collect();
        let rows = exposed_sample_gradients(inputs.spec, params, inputs.strategy, inputs.train, &indices)?;
        for (row, &(client, index)) in members.iter().enumerate() {
            let report = inputs.report_of(round, client)?;
            let score = sample_similarity(
                &report.update,
                rows.row(row).as_slice().expect("contiguous"),
            );
            member_scores.push(score);
            scores.push(MembershipScore {
                sample: SampleRef::Member { client, index },
                score,
                round,
                is_member: true,
            });
        }
    }

    let non_members = inputs.split.non_members();
    if !non_members.is_empty() {
        let rows =
            exposed_sample_gradients(inputs.spec, params, inputs.strategy, inputs.test, non_members)?;
        for (row, &index) in non_members.iter().enumerate() {
            let gradient = rows.row(row);
            let gradient = gradient.as_slice().expect("contiguous");
            let score = inputs.reports[round]
                .iter()
                .map(|report| sample_similarity(&report.update, gradient))
                .fold(f64::NEG_INFINITY, f64::max);
            non_member_scores.push(score);
            scores.push(MembershipScore {
                sample: SampleRef::NonMember { index },
                score,
                round,
                is_member: false,
            });
        }
    }

    Ok((scores, auc(&member_scores, &non_member_scores)))
}

/// Source inference for one round.
///
/// Recovers every client's local model from its exposed update and attributes
/// each member sample to the client whose recovered model yields the smallest
/// loss (ties toward the smaller client id). Returns the inferred sources and
/// the attack success rate.
pub fn sia_round(inputs: &AuditInputs<'_>, round: usize) -> Result<(Vec<usize>, f64)> {
    inputs.validate()?;
    if round >= inputs.rounds() {
        return Err(Error::Audit(format!(
            "round {round} out of range for {} audited rounds",
            inputs.rounds()
        )));
    }
    let members = inputs.split.members();
    if members.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let params = &inputs.snapshots[round];
    let lr = inputs.lrs[round];

    let mut client_ids: Vec<usize> = inputs.reports[round].iter().map(|r| r.client_id).collect();
    client_ids.sort_unstable();

    let indices: Vec<usize> = members.iter().map(|&(_, index)| index).collect();
    let (features, labels) = gather_batch(inputs.train, &indices);

    // losses[c][i]: loss of member sample i under client c's recovered model.
    let mut losses = Vec::with_capacity(client_ids.len());
    for &client in &client_ids {
        let report = inputs.report_of(round, client)?;
        let recovered = recover_client_model(params, report, lr, inputs.strategy)?;
        losses.push(models::per_sample_losses(inputs.spec, &recovered, &features, &labels)?);
    }

    let mut inferred = Vec::with_capacity(members.len());
    let mut correct = 0usize;
    for (sample, &(true_client, _)) in members.iter().enumerate() {
        let mut best = 0usize;
        for candidate in 1..client_ids.len() {
            if losses[candidate][sample] < losses[best][sample] {
                best = candidate;
            }
        }
        let predicted = client_ids[best];
        if predicted == true_client {
            correct += 1;
        }
        inferred.push(predicted);
    }
    Ok((inferred, correct as f64 / members.len() as f64))
}

/// Best-over-training attack results.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub per_round_auc: Vec<f64>,
    pub best_auc: f64,
    pub best_auc_round: usize,
    pub per_round_asr: Vec<f64>,
    pub best_asr: f64,
    pub best_asr_round: usize,
    /// Inferred source clients at the best-ASR round.
    pub inferred_sources: Vec<usize>,
}

/// Run MIA and SIA independently for every audited round and report the best
/// attack performance over the whole learning process.
pub fn audit(inputs: &AuditInputs<'_>) -> Result<AttackReport> {
    inputs.validate()?;
    let rounds = inputs.rounds();
    let mut per_round_auc = Vec::with_capacity(rounds);
    let mut per_round_asr = Vec::with_capacity(rounds);
    let mut best_sources = Vec::new();
    let mut best_asr_seen = f64::NEG_INFINITY;
    for round in 0..rounds {
        let (_, round_auc) = mia_round(inputs, round)
            .map_err(|e| Error::Audit(format!("round {round}: {e}")))?;
        let (sources, round_asr) = sia_round(inputs, round)
            .map_err(|e| Error::Audit(format!("round {round}: {e}")))?;
        per_round_auc.push(round_auc);
        per_round_asr.push(round_asr);
        if round_asr > best_asr_seen {
            best_asr_seen = round_asr;
            best_sources = sources;
        }
    }
    let (best_auc_round, best_auc) = argmax(&per_round_auc);
    let (best_asr_round, best_asr) = argmax(&per_round_asr);
    Ok(AttackReport {
        per_round_auc,
        best_auc,
        best_auc_round,
        per_round_asr,
        best_asr,
        best_asr_round,
        inferred_sources: best_sources,
    })
}

/// Audit a training trace that retained its gradient reports.
pub fn audit_trace(
    trace: &TrainingTrace,
    split: &AttackSplit,
    spec: &ModelSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<AttackReport> {
    let reports = trace.reports.as_ref().ok_or_else(|| {
        Error::Audit("trace did not retain gradient reports; rerun with report retention".into())
    })?;
    audit(&AuditInputs {
        spec,
        strategy: trace.strategy,
        snapshots: &trace.snapshots,
        reports,
        lrs: &trace.lrs,
        split,
        train,
        test,
    })
}

/// Index and value of the maximum (first index on ties).
fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    for (index, &value) in values.iter().enumerate() {
        if value > values[best] {
            best = index;
        }
    }
    (best, values[best])
}

/// Per-round attack CSV plus a best-over-training summary record.
pub fn attack_csv(report: &AttackReport) -> (String, String) {
    let mut rounds = String::from("# schema: dpfl.attack.v1\nround,auc,asr\n");
    for (round, (auc, asr)) in report
        .per_round_auc
        .iter()
        .zip(&report.per_round_asr)
        .enumerate()
    {
        rounds.push_str(&format!("{round},{auc},{asr}\n"));
    }
    let summary = format!(
        "# schema: dpfl.attack-summary.v1\nbest_auc,best_auc_round,best_asr,best_asr_round\n{},{},{},{}\n",
        report.best_auc, report.best_auc_round, report.best_asr, report.best_asr_round
    );
    (rounds, summary)
}

#[cfg(test)]
mod tests;
