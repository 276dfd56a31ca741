//! Randomized invariant checks.

use dpfl_core::attacks::auc;
use dpfl_core::data::{dirichlet_partition, generate_mixture};
use dpfl_core::models::{forward, init_params, ModelSpec, ParameterVector};
use dpfl_core::privacy::clip;
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_always_normalize(
        seed in 0u64..1000,
        scale in 0.01f64..8.0,
        batch in 1usize..12,
    ) {
        let spec = ModelSpec::mlp1(5, 4, 3).unwrap();
        let params = init_params(&spec, seed, 1.0).unwrap();
        let boosted: Vec<f64> = params.values().iter().map(|v| v * scale).collect();
        let params = ParameterVector::new(boosted, spec.layout()).unwrap();
        let mut rng = dpfl_core::rng::derive_rng(seed, "prop-softmax", &[]);
        let features = Array2::from_shape_fn((batch, 5), |_| {
            use rand::Rng;
            rng.random_range(-30.0..30.0)
        });
        let probs = forward(&spec, &params, &features).unwrap();
        for row in probs.rows() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "row sum {}", sum);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn partition_always_conserves(
        per_class in 3usize..40,
        clients in 1usize..8,
        alpha in 0.05f64..20.0,
        seed in 0u64..500,
    ) {
        let ds = generate_mixture(3, 2, per_class, 1.0, seed).unwrap();
        prop_assume!(ds.len() >= clients);
        let partition = dirichlet_partition(&ds, clients, alpha, seed).unwrap();
        prop_assert_eq!(partition.total(), ds.len());
        prop_assert_eq!(partition.client_sizes().iter().sum::<usize>(), ds.len());
        prop_assert!(partition.client_sizes().iter().all(|&s| s >= 1));
        let mut seen = vec![false; ds.len()];
        for list in partition.assignments() {
            for &index in list {
                prop_assert!(!seen[index], "index {} assigned twice", index);
                seen[index] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn clip_never_exceeds_the_threshold(
        values in proptest::collection::vec(-100.0f64..100.0, 1..16),
        threshold in 0.01f64..50.0,
    ) {
        let clipped = clip(&values, threshold);
        let norm = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
        let input_norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= input_norm.min(threshold) + 1e-12);
    }

    #[test]
    fn auc_complement_symmetry(
        members in proptest::collection::vec(-1.0f64..1.0, 1..20),
        non_members in proptest::collection::vec(-1.0f64..1.0, 1..20),
    ) {
        let forward_auc = auc(&members, &non_members);
        let backward_auc = auc(&non_members, &members);
        prop_assert!((forward_auc + backward_auc - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&forward_auc));
    }
}
