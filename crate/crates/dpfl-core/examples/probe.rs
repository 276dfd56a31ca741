//! Empirical probe for fixture calibration: prints trend statistics
//! (strategy ordering, kappa growth, update cosine, attack baselines) for
//! the bundled fixtures across seeds.
//!
//! Usage: cargo run --release --example probe -- <mode> [args]
//!   trend  <eps> <seeds>         best-accuracy ordering per strategy
//!   kappa  <eps> <seeds>         FT twin growth exponent
//!   cosine <eps> <seeds>         mean |update cosine| per strategy
//!   attack <eps> <alpha> <seeds> best AUC/ASR per strategy
//!   mia    <n_per_class> <clients> <rounds> <alpha> <seeds>  small-world AUC

use dpfl_core::analysis;
use dpfl_core::attacks;
use dpfl_core::data::{
    build_attack_split, dirichlet_partition, fixtures, generate_mixture, make_transfer_pair,
    ShiftKind,
};
use dpfl_core::federation::{run, FederationConfig, RunOptions, Strategy};
use dpfl_core::models::ModelSpec;
use dpfl_core::privacy::PrivacySpec;

fn env_or<T: std::str::FromStr>(name: &str, fallback: T) -> T {
    std::env::var(name)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(fallback)
}

fn probe_fixture() -> fixtures::Fixture {
    if std::env::var("SEP").is_err() && std::env::var("ROT").is_err() {
        return fixtures::ten_class();
    }
    let separation: f64 = env_or("SEP", 6.0);
    let angle: f64 = env_or("ROT", 0.6);
    let per_class: usize = env_or("PC", 200);
    let dim: usize = env_or("DIM", 16);
    let train_base = generate_mixture(10, dim, per_class, separation, 7).unwrap();
    let test_base = generate_mixture(10, dim, 100, separation, 7 ^ 0x5eed).unwrap();
    let pair = make_transfer_pair(&train_base, ShiftKind::Rotate, angle, 7).unwrap();
    let test_pair = make_transfer_pair(&test_base, ShiftKind::Rotate, angle, 7).unwrap();
    fixtures::Fixture {
        pair,
        source_test: test_pair.source,
        target_test: test_pair.target,
    }
}

fn fixture_config(strategy: Strategy, seed: u64, epsilon: f64, alpha: f64) -> (ModelSpec, FederationConfig, PrivacySpec) {
    let dim: usize = env_or("DIM", 16);
    let hidden: usize = env_or("HID", 16);
    let spec = ModelSpec::mlp1(dim, hidden, 10).unwrap();
    let config = FederationConfig {
        num_clients: 10,
        total_rounds: 128,
        lr_init: env_or("LR", 0.3),
        lr_decay: 0.9934,
        alpha,
        strategy,
        master_seed: seed,
        twin_run: false,
        pretrain_epochs: env_or("PRE", 300),
        pretrain_lr: 0.5,
    };
    let privacy = PrivacySpec::new(epsilon, 1e-5, 10.0, 1.0, 1.0, 128).unwrap();
    (spec, config, privacy)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("trend");
    match mode {
        "trend" => {
            let epsilon: f64 = args[1].parse().unwrap();
            let seeds: u64 = args[2].parse().unwrap();
            let fixture = probe_fixture();
            for strategy in [Strategy::St, Strategy::Ft, Strategy::Ht] {
                let mut bests = Vec::new();
                for seed in 0..seeds {
                    let (spec, config, privacy) = fixture_config(strategy, seed, epsilon, 1.0);
                    let partition = dirichlet_partition(&fixture.pair.target, 10, 1.0, seed).unwrap();
                    let trace = run(
                        &spec, &fixture.pair, &partition, &fixture.target_test,
                        &config, &privacy, &RunOptions::default(),
                    ).unwrap();
                    bests.push(trace.best_accuracy());
                }
                let mean = bests.iter().sum::<f64>() / bests.len() as f64;
                println!("{strategy} eps={epsilon}: mean best acc {mean:.4} per-seed {bests:.3?}");
            }
        }
        "kappa" => {
            let epsilon: f64 = args[1].parse().unwrap();
            let seeds: u64 = args[2].parse().unwrap();
            let fixture = probe_fixture();
            for strategy in [Strategy::Ft, Strategy::Ht, Strategy::St] {
                let mut betas = Vec::new();
                for seed in 0..seeds {
                    let (spec, mut config, privacy) = fixture_config(strategy, seed, epsilon, 1.0);
                    config.twin_run = true;
                    let partition = dirichlet_partition(&fixture.pair.target, 10, 1.0, seed).unwrap();
                    let trace = run(
                        &spec, &fixture.pair, &partition, &fixture.target_test,
                        &config, &privacy, &RunOptions::default(),
                    ).unwrap();
                    betas.push(analysis::growth_exponent(&trace).unwrap());
                }
                let mean = betas.iter().sum::<f64>() / betas.len() as f64;
                println!("{strategy} eps={epsilon}: mean beta {mean:.4} per-seed {betas:.3?}");
            }
        }
        "cosine" => {
            let epsilon: f64 = args[1].parse().unwrap();
            let seeds: u64 = args[2].parse().unwrap();
            let fixture = probe_fixture();
            for strategy in [Strategy::St, Strategy::Ft, Strategy::Ht] {
                let mut means = Vec::new();
                for seed in 0..seeds {
                    let (spec, config, privacy) = fixture_config(strategy, seed, epsilon, 1.0);
                    let partition = dirichlet_partition(&fixture.pair.target, 10, 1.0, seed).unwrap();
                    let trace = run(
                        &spec, &fixture.pair, &partition, &fixture.target_test,
                        &config, &privacy, &RunOptions::default(),
                    ).unwrap();
                    let cosines: Vec<f64> = trace
                        .metrics
                        .iter()
                        .filter_map(|m| m.update_cosine)
                        .map(f64::abs)
                        .collect();
                    means.push(cosines.iter().sum::<f64>() / cosines.len() as f64);
                }
                let mean = means.iter().sum::<f64>() / means.len() as f64;
                println!("{strategy} eps={epsilon}: mean |cos| {mean:.4} per-seed {means:.3?}");
            }
        }
        "attack" => {
            let epsilon: f64 = args[1].parse().unwrap();
            let alpha: f64 = args[2].parse().unwrap();
            let seeds: u64 = args[3].parse().unwrap();
            let fixture = probe_fixture();
            for strategy in [Strategy::St, Strategy::Ft, Strategy::Ht] {
                let mut aucs = Vec::new();
                let mut asrs = Vec::new();
                for seed in 0..seeds {
                    let (spec, config, privacy) = fixture_config(strategy, seed, epsilon, alpha);
                    let partition =
                        dirichlet_partition(&fixture.pair.target, 10, alpha, seed).unwrap();
                    let per_client = partition.client_sizes().into_iter().min().unwrap().min(20);
                    let split =
                        build_attack_split(&partition, per_client, &fixture.target_test, 200, seed)
                            .unwrap();
                    let options = RunOptions { retain_reports: true, ..Default::default() };
                    let trace = run(
                        &spec, &fixture.pair, &partition, &fixture.target_test,
                        &config, &privacy, &options,
                    ).unwrap();
                    let report = attacks::audit_trace(
                        &trace, &split, &spec, &fixture.pair.target, &fixture.target_test,
                    ).unwrap();
                    aucs.push(report.best_auc);
                    asrs.push(report.best_asr);
                }
                let mean_auc = aucs.iter().sum::<f64>() / aucs.len() as f64;
                let mean_asr = asrs.iter().sum::<f64>() / asrs.len() as f64;
                println!("{strategy} eps={epsilon} alpha={alpha}: AUC {mean_auc:.4} {aucs:.3?} ASR {mean_asr:.4} {asrs:.3?}");
            }
        }
        "mia" => {
            let per_class: usize = args[1].parse().unwrap();
            let clients: usize = args[2].parse().unwrap();
            let rounds: usize = args[3].parse().unwrap();
            let alpha: f64 = args[4].parse().unwrap();
            let seeds: u64 = args[5].parse().unwrap();
            let mut aucs = Vec::new();
            for seed in 0..seeds {
                let base = generate_mixture(4, 6, per_class, 5.0, 31).unwrap();
                let pair = make_transfer_pair(&base, ShiftKind::Rotate, 0.3, 31).unwrap();
                let test_base = generate_mixture(4, 6, 30, 5.0, 32).unwrap();
                let test = make_transfer_pair(&test_base, ShiftKind::Rotate, 0.3, 31).unwrap().target;
                let partition = dirichlet_partition(&pair.target, clients, alpha, seed).unwrap();
                let per_client = partition.client_sizes().into_iter().min().unwrap().min(4);
                let split = build_attack_split(&partition, per_client, &test, 24, seed).unwrap();
                let spec = ModelSpec::mlp1(6, 5, 4).unwrap();
                let config = FederationConfig {
                    num_clients: clients,
                    total_rounds: rounds,
                    lr_init: 0.4,
                    lr_decay: 0.9934,
                    alpha,
                    strategy: Strategy::St,
                    master_seed: seed,
                    twin_run: false,
                    pretrain_epochs: 30,
                    pretrain_lr: 0.5,
                };
                let privacy = PrivacySpec::new(f64::INFINITY, 1e-5, 10.0, 1.0, 1.0, rounds).unwrap();
                let options = RunOptions { retain_reports: true, ..Default::default() };
                let trace = run(&spec, &pair, &partition, &test, &config, &privacy, &options).unwrap();
                let report =
                    attacks::audit_trace(&trace, &split, &spec, &pair.target, &test).unwrap();
                aucs.push((report.best_auc, report.best_asr));
            }
            println!("per_class={per_class} clients={clients} rounds={rounds} alpha={alpha}: {aucs:.3?}");
        }
        "null" => {
            // Shuffled-membership null: real scores, scrambled ground truth.
            let epsilon: f64 = args[1].parse().unwrap();
            let seeds: u64 = args[2].parse().unwrap();
            let fixture = probe_fixture();
            let mut best_aucs = Vec::new();
            let mut mean_aucs = Vec::new();
            let mut best_asrs = Vec::new();
            let mut mean_asrs = Vec::new();
            for seed in 0..seeds {
                let (spec, config, privacy) = fixture_config(Strategy::St, seed, epsilon, 1.0);
                let partition = dirichlet_partition(&fixture.pair.target, 10, 1.0, seed).unwrap();
                let per_client = partition.client_sizes().into_iter().min().unwrap().min(20);
                let split =
                    build_attack_split(&partition, per_client, &fixture.target_test, 200, seed)
                        .unwrap();
                let options = RunOptions { retain_reports: true, ..Default::default() };
                let trace = run(
                    &spec, &fixture.pair, &partition, &fixture.target_test,
                    &config, &privacy, &options,
                ).unwrap();
                let inputs = attacks::AuditInputs {
                    spec: &spec,
                    strategy: trace.strategy,
                    snapshots: &trace.snapshots,
                    reports: trace.reports.as_ref().unwrap(),
                    lrs: &trace.lrs,
                    split: &split,
                    train: &fixture.pair.target,
                    test: &fixture.target_test,
                };
                use rand::seq::SliceRandom;
                let mut rng = dpfl_core::rng::derive_rng(seed, "null-shuffle", &[]);
                let total = split.members().len() + split.non_members().len();
                let mut shuffled_membership: Vec<bool> = (0..total)
                    .map(|i| i < split.members().len())
                    .collect();
                shuffled_membership.shuffle(&mut rng);
                let mut shuffled_sources: Vec<usize> =
                    split.members().iter().map(|&(c, _)| c).collect();
                shuffled_sources.shuffle(&mut rng);

                let mut null_aucs = Vec::new();
                let mut null_asrs = Vec::new();
                for round in 0..trace.rounds() {
                    let (scores, _) = attacks::mia_round(&inputs, round).unwrap();
                    let mut member_scores = Vec::new();
                    let mut non_member_scores = Vec::new();
                    for (score, &is_member) in scores.iter().zip(&shuffled_membership) {
                        if is_member {
                            member_scores.push(score.score);
                        } else {
                            non_member_scores.push(score.score);
                        }
                    }
                    null_aucs.push(attacks::auc(&member_scores, &non_member_scores));
                    let (inferred, _) = attacks::sia_round(&inputs, round).unwrap();
                    let hits = inferred
                        .iter()
                        .zip(&shuffled_sources)
                        .filter(|(a, b)| a == b)
                        .count();
                    null_asrs.push(hits as f64 / inferred.len() as f64);
                }
                let best_auc = null_aucs.iter().cloned().fold(f64::MIN, f64::max);
                let mean_auc = null_aucs.iter().sum::<f64>() / null_aucs.len() as f64;
                let best_asr = null_asrs.iter().cloned().fold(f64::MIN, f64::max);
                let mean_asr = null_asrs.iter().sum::<f64>() / null_asrs.len() as f64;
                best_aucs.push(best_auc);
                mean_aucs.push(mean_auc);
                best_asrs.push(best_asr);
                mean_asrs.push(mean_asr);
            }
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "null eps={epsilon}: best AUC mean {:.4} {best_aucs:.3?} | mean AUC {:.4} | best ASR mean {:.4} {best_asrs:.3?} | mean ASR {:.4}",
                avg(&best_aucs), avg(&mean_aucs), avg(&best_asrs), avg(&mean_asrs)
            );
        }
        "nullsplit" => {
            // Standard audit over a split whose member attribution is shuffled.
            let epsilon: f64 = args[1].parse().unwrap();
            let seeds: u64 = args[2].parse().unwrap();
            let fixture = probe_fixture();
            let mut best_aucs = Vec::new();
            let mut best_asrs = Vec::new();
            for seed in 0..seeds {
                let (spec, config, privacy) = fixture_config(Strategy::St, seed, epsilon, 1.0);
                let partition = dirichlet_partition(&fixture.pair.target, 10, 1.0, seed).unwrap();
                let per_client = partition.client_sizes().into_iter().min().unwrap().min(20);
                let split =
                    build_attack_split(&partition, per_client, &fixture.target_test, 200, seed)
                        .unwrap();
                use rand::seq::SliceRandom;
                let mut rng = dpfl_core::rng::derive_rng(seed, "null-split", &[]);
                let mut clients: Vec<usize> = split.members().iter().map(|&(c, _)| c).collect();
                clients.shuffle(&mut rng);
                let members: Vec<(usize, usize)> = clients
                    .into_iter()
                    .zip(split.members().iter().map(|&(_, i)| i))
                    .collect();
                let shuffled =
                    dpfl_core::data::AttackSplit::new(members, split.non_members().to_vec());
                let options = RunOptions { retain_reports: true, ..Default::default() };
                let trace = run(
                    &spec, &fixture.pair, &partition, &fixture.target_test,
                    &config, &privacy, &options,
                ).unwrap();
                let report = attacks::audit_trace(
                    &trace, &shuffled, &spec, &fixture.pair.target, &fixture.target_test,
                ).unwrap();
                best_aucs.push(report.best_auc);
                best_asrs.push(report.best_asr);
            }
            let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "nullsplit eps={epsilon}: best AUC mean {:.4} {best_aucs:.3?} | best ASR mean {:.4} {best_asrs:.3?}",
                avg(&best_aucs), avg(&best_asrs)
            );
        }
        other => eprintln!("unknown mode {other}"),
    }
}
