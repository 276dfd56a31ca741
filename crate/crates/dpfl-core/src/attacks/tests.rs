use super::*;
use crate::data::{build_attack_split, dirichlet_partition, generate_mixture, make_transfer_pair, ShiftKind};
use crate::federation::{run, FederationConfig, RunOptions, Strategy};
use crate::models::init_params;
use crate::privacy::PrivacySpec;
use approx::assert_abs_diff_eq;

// ---------------------------------------------------------------------------
// sample_similarity / auc

#[test]
fn similarity_reference_values() {
    assert_abs_diff_eq!(sample_similarity(&[2.0, 0.0], &[5.0, 0.0]), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(sample_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(
        sample_similarity(&[1.0, 0.0], &[1.0, 1.0]),
        std::f64::consts::FRAC_1_SQRT_2,
        epsilon = 1e-15
    );
    assert_eq!(sample_similarity(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    assert_abs_diff_eq!(sample_similarity(&[1.0, 1.0], &[-1.0, -1.0]), -1.0, epsilon = 1e-15);
}

#[test]
fn auc_pair_counting() {
    // Members {0.9, 0.2} vs non-members {0.5, 0.1}: 3 of 4 pairs won.
    assert_abs_diff_eq!(auc(&[0.9, 0.2], &[0.5, 0.1]), 0.75, epsilon = 1e-15);
    assert_abs_diff_eq!(auc(&[1.0, 1.0], &[0.0, 0.0]), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(auc(&[0.3, 0.3], &[0.3, 0.3]), 0.5, epsilon = 1e-15);
    // Empty member side: baseline.
    assert_eq!(auc(&[], &[0.1]), 0.5);
}

#[test]
fn auc_is_a_rank_statistic() {
    let members = [0.9, 0.2, 0.55, -0.3];
    let non_members = [0.5, 0.1, -0.2];
    let base = auc(&members, &non_members);
    // Any strictly increasing transform leaves the AUC unchanged.
    let transform = |x: f64| (3.0 * x).exp() + 7.0;
    let tm: Vec<f64> = members.iter().map(|&x| transform(x)).collect();
    let tn: Vec<f64> = non_members.iter().map(|&x| transform(x)).collect();
    assert_abs_diff_eq!(auc(&tm, &tn), base, epsilon = 1e-15);
    // Swapping the roles complements the statistic.
    assert_abs_diff_eq!(auc(&non_members, &members), 1.0 - base, epsilon = 1e-15);
}

// ---------------------------------------------------------------------------
// recover_client_model

#[test]
fn recover_zero_update_returns_the_global_model() {
    let spec = crate::models::ModelSpec::linear(2, 2).unwrap();
    let params = init_params(&spec, 4, 1.0).unwrap();
    let report = GradientReport {
        client_id: 0,
        round: 0,
        update: vec![0.0; spec.param_dim()],
        weight: 1.0,
        audit_trace: None,
    };
    let recovered = recover_client_model(&params, &report, 0.7, Strategy::Ft).unwrap();
    assert_eq!(recovered.values(), params.values());
}

#[test]
fn recover_scalar_arithmetic() {
    // theta = 2, g~ = 0.5, lr = 1: recovered coordinate is 1.5.
    let spec = crate::models::ModelSpec::linear(1, 2).unwrap();
    let params =
        crate::models::ParameterVector::new(vec![2.0, 0.0, 0.0, 0.0], spec.layout()).unwrap();
    let report = GradientReport {
        client_id: 0,
        round: 0,
        update: vec![0.5, 0.0, 0.0, 0.0],
        weight: 1.0,
        audit_trace: None,
    };
    let recovered = recover_client_model(&params, &report, 1.0, Strategy::Ft).unwrap();
    assert_abs_diff_eq!(recovered.values()[0], 1.5, epsilon = 1e-15);
}

#[test]
fn recover_ht_copies_the_body() {
    let spec = crate::models::ModelSpec::mlp1(3, 4, 2).unwrap();
    let params = init_params(&spec, 4, 1.0).unwrap();
    let head_len = spec.layout().head_len();
    let report = GradientReport {
        client_id: 0,
        round: 0,
        update: vec![1.0; head_len],
        weight: 1.0,
        audit_trace: None,
    };
    let recovered = recover_client_model(&params, &report, 0.5, Strategy::Ht).unwrap();
    let body = params.body_range();
    assert_eq!(&recovered.values()[body.clone()], &params.values()[body]);
    for (new, old) in recovered.values()[params.head_range()]
        .iter()
        .zip(&params.values()[params.head_range()])
    {
        assert_abs_diff_eq!(*new, old - 0.5, epsilon = 1e-15);
    }
}

// ---------------------------------------------------------------------------
// end-to-end audit plumbing

struct AuditWorld {
    spec: crate::models::ModelSpec,
    trace: crate::federation::TrainingTrace,
    split: crate::data::AttackSplit,
    train: LabeledDataset,
    test: LabeledDataset,
}

fn audit_world(strategy: Strategy, epsilon: f64, alpha: f64, seed: u64, rounds: usize) -> AuditWorld {
    // Small clients on purpose: one sample contributes a visible share of
    // its client's update, which is what the similarity attack keys on.
    let base = generate_mixture(4, 6, 12, 5.0, 31).unwrap();
    let pair = make_transfer_pair(&base, ShiftKind::Rotate, 0.3, 31).unwrap();
    let test_base = generate_mixture(4, 6, 30, 5.0, 32).unwrap();
    let test = make_transfer_pair(&test_base, ShiftKind::Rotate, 0.3, 31).unwrap().target;
    let partition = dirichlet_partition(&pair.target, 4, alpha, seed).unwrap();
    let per_client = partition.client_sizes().into_iter().min().unwrap().min(4);
    let split = build_attack_split(&partition, per_client, &test, 24, seed).unwrap();
    let spec = crate::models::ModelSpec::mlp1(6, 5, 4).unwrap();
    let config = FederationConfig {
        num_clients: 4,
        total_rounds: rounds,
        lr_init: 0.4,
        lr_decay: 0.9934,
        alpha,
        strategy,
        master_seed: seed,
        twin_run: false,
        pretrain_epochs: 30,
        pretrain_lr: 0.5,
    };
    let privacy_spec = PrivacySpec::new(epsilon, 1e-5, 10.0, 1.0, 1.0, rounds).unwrap();
    let options = RunOptions { retain_reports: true, ..Default::default() };
    let trace = run(&spec, &pair, &partition, &test, &config, &privacy_spec, &options).unwrap();
    AuditWorld { spec, trace, split, train: pair.target, test }
}

impl AuditWorld {
    fn inputs(&self) -> AuditInputs<'_> {
        AuditInputs {
            spec: &self.spec,
            strategy: self.trace.strategy,
            snapshots: &self.trace.snapshots,
            reports: self.trace.reports.as_ref().unwrap(),
            lrs: &self.trace.lrs,
            split: &self.split,
            train: &self.train,
            test: &self.test,
        }
    }
}

#[test]
fn audit_requires_retained_reports() {
    let mut world = audit_world(Strategy::St, f64::INFINITY, 2.0, 5, 2);
    world.trace.reports = None;
    match audit_trace(&world.trace, &world.split, &world.spec, &world.train, &world.test) {
        Err(Error::Audit(message)) => assert!(message.contains("retain"), "{message}"),
        other => panic!("expected audit error, got {other:?}"),
    }
}

#[test]
fn audit_single_round_best_equals_that_round() {
    let world = audit_world(Strategy::St, f64::INFINITY, 0.5, 6, 1);
    let report = audit(&world.inputs()).unwrap();
    assert_eq!(report.per_round_auc.len(), 1);
    assert_eq!(report.per_round_asr.len(), 1);
    assert_eq!(report.best_auc, report.per_round_auc[0]);
    assert_eq!(report.best_asr, report.per_round_asr[0]);
    assert_eq!(report.best_auc_round, 0);
    assert_eq!(report.best_asr_round, 0);
    assert_eq!(report.inferred_sources.len(), world.split.members().len());
}

#[test]
fn audit_best_is_the_maximum_over_rounds() {
    let world = audit_world(Strategy::Ft, 5.0, 1.0, 7, 4);
    let report = audit(&world.inputs()).unwrap();
    let max_auc = report.per_round_auc.iter().cloned().fold(f64::MIN, f64::max);
    let max_asr = report.per_round_asr.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(report.best_auc, max_auc);
    assert_eq!(report.best_asr, max_asr);
    for (auc_value, asr_value) in report.per_round_auc.iter().zip(&report.per_round_asr) {
        assert!((0.0..=1.0).contains(auc_value));
        assert!((0.0..=1.0).contains(asr_value));
    }
}

#[test]
fn mia_separates_members_on_a_noise_free_heterogeneous_run() {
    // Without noise, small clients, and enough rounds for per-sample
    // gradients to become distinctive, members score above non-members.
    // Averaged over seeds because single runs are noisy.
    let mut mean_auc = 0.0;
    for seed in 0..3 {
        let world = audit_world(Strategy::St, f64::INFINITY, 0.5, seed, 20);
        let report = audit(&world.inputs()).unwrap();
        mean_auc += report.best_auc / 3.0;
    }
    assert!(mean_auc > 0.55, "mean best AUC {mean_auc}");
}

#[test]
fn sia_identical_models_fall_back_to_smallest_client() {
    // If every client reports the same update, all recovered models tie and
    // the argmin resolves to client 0 for every member.
    let world = audit_world(Strategy::St, f64::INFINITY, 2.0, 9, 1);
    let mut inputs = world.inputs();
    let reports = world.trace.reports.as_ref().unwrap().clone();
    let mut forged = reports.clone();
    let template = forged[0][0].update.clone();
    for report in &mut forged[0] {
        report.update = template.clone();
    }
    inputs.reports = &forged;
    let (inferred, asr) = sia_round(&inputs, 0).unwrap();
    assert!(inferred.iter().all(|&s| s == 0));
    // ASR then equals the share of members truly owned by client 0.
    let owned = world
        .split
        .members()
        .iter()
        .filter(|&&(client, _)| client == 0)
        .count() as f64;
    assert_abs_diff_eq!(asr, owned / world.split.members().len() as f64, epsilon = 1e-15);
}

#[test]
fn sia_asr_invariant_under_consistent_relabeling() {
    // Reversing client ids in both the reports and the ground truth leaves
    // the success rate unchanged.
    let world = audit_world(Strategy::St, f64::INFINITY, 0.5, 10, 2);
    let inputs = world.inputs();
    let (_, asr) = sia_round(&inputs, 1).unwrap();

    let relabel = |client: usize| 3 - client;
    let mut forged = world.trace.reports.as_ref().unwrap().clone();
    for round in forged.iter_mut() {
        for report in round.iter_mut() {
            report.client_id = relabel(report.client_id);
        }
    }
    let members: Vec<(usize, usize)> = world
        .split
        .members()
        .iter()
        .map(|&(client, index)| (relabel(client), index))
        .collect();
    let split = crate::data::AttackSplit::new(members, world.split.non_members().to_vec());
    let mut relabeled = world.inputs();
    relabeled.reports = &forged;
    relabeled.split = &split;
    let (_, relabeled_asr) = sia_round(&relabeled, 1).unwrap();
    assert_abs_diff_eq!(asr, relabeled_asr, epsilon = 1e-15);
}

#[test]
fn attack_csv_is_schema_versioned() {
    let world = audit_world(Strategy::St, f64::INFINITY, 0.5, 11, 2);
    let report = audit(&world.inputs()).unwrap();
    let (rounds_csv, summary_csv) = attack_csv(&report);
    assert!(rounds_csv.starts_with("# schema: dpfl.attack.v1\nround,auc,asr\n"));
    assert_eq!(rounds_csv.lines().count(), 2 + 2);
    assert!(summary_csv.starts_with("# schema: dpfl.attack-summary.v1\n"));
}
