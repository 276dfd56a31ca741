use super::*;
use crate::data::generate_mixture;
use approx::assert_abs_diff_eq;
use ndarray::array;

fn tiny_batch(spec: &ModelSpec, samples: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let per_class = samples.div_ceil(spec.num_classes);
    let ds = generate_mixture(spec.num_classes, spec.input_dim, per_class, 3.0, seed).unwrap();
    let mut features = Array2::zeros((samples, spec.input_dim));
    let mut labels = Vec::new();
    for row in 0..samples {
        features.row_mut(row).assign(&ds.features().row(row));
        labels.push(ds.labels()[row]);
    }
    (features, labels)
}

// ---------------------------------------------------------------------------
// layout and initialization

#[test]
fn linear_param_count_is_input_times_classes_plus_bias() {
    let spec = ModelSpec::linear(784, 10).unwrap();
    assert_eq!(spec.param_dim(), 7850);
    // The linear model is all head.
    let layout = spec.layout();
    assert_eq!(layout.head_range(), 0..7850);
    assert_eq!(layout.body_range(), 0..0);
}

#[test]
fn layout_tiles_the_vector_and_head_is_last_affine_pair() {
    for spec in [
        ModelSpec::linear(5, 3).unwrap(),
        ModelSpec::mlp1(5, 4, 3).unwrap(),
        ModelSpec::mlp2(5, 4, 6, 3).unwrap(),
    ] {
        let layout = spec.layout();
        let mut expected_offset = 0;
        for entry in &layout.entries {
            assert_eq!(entry.offset, expected_offset);
            expected_offset += entry.len();
        }
        assert_eq!(expected_offset, layout.dim);
        // head = final W + final b
        let head_len = layout.entries[layout.entries.len() - 2].len()
            + layout.entries[layout.entries.len() - 1].len();
        assert_eq!(layout.head_len(), head_len);
        assert_eq!(layout.head_range().end, layout.dim);
        // body and head partition [0, d)
        assert_eq!(layout.body_range().end, layout.head_range().start);
    }
}

#[test]
fn spec_rejects_wrong_hidden_counts() {
    assert!(ModelSpec::new(ModelKind::Linear, 4, vec![3], 2).is_err());
    assert!(ModelSpec::new(ModelKind::Mlp1, 4, vec![], 2).is_err());
    assert!(ModelSpec::new(ModelKind::Mlp2, 4, vec![3], 2).is_err());
    assert!(ModelSpec::new(ModelKind::Mlp1, 4, vec![0], 2).is_err());
}

#[test]
fn init_is_deterministic_and_fan_in_bounded() {
    let spec = ModelSpec::mlp1(6, 5, 3).unwrap();
    let a = init_params(&spec, 11, 1.0).unwrap();
    let b = init_params(&spec, 11, 1.0).unwrap();
    assert_eq!(a.values(), b.values());
    let c = init_params(&spec, 12, 1.0).unwrap();
    assert_ne!(a.values(), c.values());

    let layout = spec.layout();
    // First weight block: fan-in 6.
    let bound0 = 1.0 / 6.0f64.sqrt();
    for &v in &a.values()[..layout.entries[0].len()] {
        assert!(v.abs() <= bound0);
    }
    // Biases zero.
    for entry in layout.entries.iter().skip(1).step_by(2) {
        for &v in &a.values()[entry.offset..entry.offset + entry.len()] {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn init_scale_shrinks_to_zero() {
    let spec = ModelSpec::mlp1(6, 5, 3).unwrap();
    let tiny = init_params(&spec, 11, 1e-300).unwrap();
    assert!(tiny.values().iter().all(|v| v.abs() <= 1e-300));
    assert!(init_params(&spec, 11, 0.0).is_err());
}

// ---------------------------------------------------------------------------
// forward and evaluate

#[test]
fn zero_params_give_uniform_probabilities() {
    let spec = ModelSpec::mlp1(4, 3, 5).unwrap();
    let params = ParameterVector::new(vec![0.0; spec.param_dim()], spec.layout()).unwrap();
    let (features, _) = tiny_batch(&spec, 6, 1);
    let probs = forward(&spec, &params, &features).unwrap();
    for row in probs.rows() {
        for &p in row {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-12);
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let spec = ModelSpec::mlp2(4, 3, 3, 5).unwrap();
    let params = init_params(&spec, 3, 1.0).unwrap();
    let (features, _) = tiny_batch(&spec, 8, 2);
    let probs = forward(&spec, &params, &features).unwrap();
    for row in probs.rows() {
        let sum: f64 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
        assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
    }
}

#[test]
fn hand_set_logit_gap_gives_three_quarters() {
    // 2-class linear model, w = (1, 0) for class 0, zero elsewhere, zero
    // bias; x = (ln 3, 0) gives logits (ln 3, 0), so p(class 0) = 0.75.
    let spec = ModelSpec::linear(2, 2).unwrap();
    let mut values = vec![0.0; spec.param_dim()];
    values[0] = 1.0; // W[0,0]
    let params = ParameterVector::new(values, spec.layout()).unwrap();
    let features = array![[3.0f64.ln(), 0.0]];
    let probs = forward(&spec, &params, &features).unwrap();
    assert_abs_diff_eq!(probs[[0, 0]], 0.75, epsilon = 1e-12);
    assert_abs_diff_eq!(probs[[0, 1]], 0.25, epsilon = 1e-12);
}

#[test]
fn forward_rejects_wrong_dimensions() {
    let spec = ModelSpec::linear(3, 2).unwrap();
    let params = init_params(&spec, 0, 1.0).unwrap();
    let features = Array2::zeros((2, 4));
    assert!(matches!(forward(&spec, &params, &features), Err(Error::Shape(_))));
}

#[test]
fn evaluate_zero_params_uses_smallest_index_tie_rule() {
    let spec = ModelSpec::linear(4, 10).unwrap();
    let params = ParameterVector::new(vec![0.0; spec.param_dim()], spec.layout()).unwrap();
    let ds = generate_mixture(10, 4, 30, 1.0, 7).unwrap();
    let (accuracy, loss) = evaluate(&spec, &params, &ds).unwrap();
    // Uniform predictions: argmax ties resolve to class 0, so accuracy is
    // exactly class 0's frequency, and the loss is ln K.
    let class0 = ds.labels().iter().filter(|&&l| l == 0).count() as f64 / ds.len() as f64;
    assert_abs_diff_eq!(accuracy, class0, epsilon = 1e-15);
    assert_abs_diff_eq!(loss, 10.0f64.ln(), epsilon = 1e-12);
}

#[test]
fn evaluate_perfect_labels_give_accuracy_one() {
    let spec = ModelSpec::linear(2, 2).unwrap();
    let params = init_params(&spec, 5, 1.0).unwrap();
    let ds = generate_mixture(2, 2, 50, 3.0, 9).unwrap();
    let probs = forward(&spec, &params, ds.features()).unwrap();
    let argmax: Vec<usize> = probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (class, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = class;
                }
            }
            best
        })
        .collect();
    let relabeled = LabeledDataset::new(ds.features().clone(), argmax, 2, "relabeled").unwrap();
    let (accuracy, _) = evaluate(&spec, &params, &relabeled).unwrap();
    assert_eq!(accuracy, 1.0);
}

// ---------------------------------------------------------------------------
// per-sample gradients

#[test]
fn zero_params_gradient_matches_uniform_minus_onehot() {
    // For a linear model with all-zero parameters, dL/dlogit = 1/K - onehot,
    // dW[k, :] = (1/K - 1[k=y]) x, db[k] = 1/K - 1[k=y].
    let spec = ModelSpec::linear(3, 4).unwrap();
    let params = ParameterVector::new(vec![0.0; spec.param_dim()], spec.layout()).unwrap();
    let features = array![[0.5, -1.0, 2.0]];
    let labels = vec![2usize];
    let grads = per_sample_gradients(&spec, &params, &features, &labels).unwrap();
    let layout = spec.layout();
    for class in 0..4 {
        let delta = 0.25 - if class == 2 { 1.0 } else { 0.0 };
        for (feature, &x) in [0.5, -1.0, 2.0].iter().enumerate() {
            let w_index = layout.entries[0].offset + class * 3 + feature;
            assert_abs_diff_eq!(grads.rows[[0, w_index]], delta * x, epsilon = 1e-15);
        }
        let b_index = layout.entries[1].offset + class;
        assert_abs_diff_eq!(grads.rows[[0, b_index]], delta, epsilon = 1e-15);
    }
    // Loss at uniform predictions is ln K.
    assert_abs_diff_eq!(grads.loss_values[0], 4.0f64.ln(), epsilon = 1e-12);
}

#[test]
fn duplicated_sample_rows_are_identical() {
    let spec = ModelSpec::mlp1(4, 3, 3).unwrap();
    let params = init_params(&spec, 2, 1.0).unwrap();
    let (features, labels) = tiny_batch(&spec, 2, 3);
    let mut doubled = Array2::zeros((2, 4));
    doubled.row_mut(0).assign(&features.row(0));
    doubled.row_mut(1).assign(&features.row(0));
    let grads = per_sample_gradients(&spec, &params, &doubled, &[labels[0], labels[0]]).unwrap();
    assert_eq!(grads.rows.row(0), grads.rows.row(1));
}

#[test]
fn mean_of_rows_matches_independent_batch_accumulation() {
    let spec = ModelSpec::mlp2(5, 4, 3, 3).unwrap();
    let params = init_params(&spec, 8, 1.0).unwrap();
    let (features, labels) = tiny_batch(&spec, 16, 5);
    let grads = per_sample_gradients(&spec, &params, &features, &labels).unwrap();
    let mean = grads.mean_gradient();
    // Accumulate single-sample gradients in a different order and average.
    let mut accumulated = vec![0.0; spec.param_dim()];
    for i in (0..16).rev() {
        let row = features.row(i).insert_axis(ndarray::Axis(0)).to_owned();
        let single = per_sample_gradients(&spec, &params, &row, &labels[i..i + 1]).unwrap();
        for (total, &g) in accumulated.iter_mut().zip(single.rows.row(0)) {
            *total += g / 16.0;
        }
    }
    for (a, b) in mean.iter().zip(&accumulated) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

/// Central finite differences on the per-sample loss: the independent
/// gradient oracle.
fn finite_difference_row(
    spec: &ModelSpec,
    params: &ParameterVector,
    features: &Array2<f64>,
    labels: &[usize],
    sample: usize,
    step: f64,
) -> Vec<f64> {
    let row = features.row(sample).insert_axis(ndarray::Axis(0)).to_owned();
    let label = &labels[sample..sample + 1];
    (0..params.dim())
        .map(|coordinate| {
            let mut plus = params.values().to_vec();
            plus[coordinate] += step;
            let plus = params.with_values(plus).unwrap();
            let mut minus = params.values().to_vec();
            minus[coordinate] -= step;
            let minus = params.with_values(minus).unwrap();
            let loss_plus = per_sample_losses(spec, &plus, &row, label).unwrap()[0];
            let loss_minus = per_sample_losses(spec, &minus, &row, label).unwrap()[0];
            (loss_plus - loss_minus) / (2.0 * step)
        })
        .collect()
}

/// Smallest |pre-activation| over all hidden units of a batch. Central
/// differences are only valid at parameters where no ReLU sits on its kink,
/// so fixtures must keep this comfortably above the FD step.
fn min_abs_preactivation(
    params: &ParameterVector,
    features: &Array2<f64>,
) -> f64 {
    let layers = params.num_affine_layers();
    let mut input = features.clone();
    let mut smallest = f64::INFINITY;
    for layer in 0..layers - 1 {
        let mut z = input.dot(&params.weight(layer).t());
        z += &params.bias(layer);
        for &value in z.iter() {
            smallest = smallest.min(value.abs());
        }
        z.mapv_inplace(|v| v.max(0.0));
        input = z;
    }
    smallest
}

#[test]
fn gradients_match_finite_differences_for_all_kinds() {
    for (spec, seed) in [
        (ModelSpec::linear(4, 3).unwrap(), 31),
        (ModelSpec::mlp1(4, 5, 3).unwrap(), 32),
        (ModelSpec::mlp2(4, 5, 4, 3).unwrap(), 35),
    ] {
        let params = init_params(&spec, seed, 1.0).unwrap();
        let (features, labels) = tiny_batch(&spec, 3, seed);
        assert!(
            min_abs_preactivation(&params, &features) > 1e-3,
            "{}: fixture sits on a ReLU kink; pick a different seed",
            spec.kind
        );
        let grads = per_sample_gradients(&spec, &params, &features, &labels).unwrap();
        for sample in 0..3 {
            let oracle = finite_difference_row(&spec, &params, &features, &labels, sample, 1e-6);
            for (coordinate, &expected) in oracle.iter().enumerate() {
                let actual = grads.rows[[sample, coordinate]];
                let tolerance = 1e-4 * expected.abs().max(1e-6);
                assert!(
                    (actual - expected).abs() <= tolerance,
                    "{}: sample {sample} coord {coordinate}: {actual} vs oracle {expected}",
                    spec.kind
                );
            }
        }
    }
}

#[test]
fn convex_linear_loss_decreases_under_descent() {
    let spec = ModelSpec::linear(4, 3).unwrap();
    let mut params = init_params(&spec, 3, 1.0).unwrap();
    let ds = generate_mixture(3, 4, 60, 2.0, 13).unwrap();
    let mut previous = f64::INFINITY;
    for _ in 0..50 {
        let grads = per_sample_gradients(&spec, &params, ds.features(), ds.labels()).unwrap();
        let loss = grads.loss_values.iter().sum::<f64>() / ds.len() as f64;
        assert!(loss <= previous + 1e-12, "loss rose from {previous} to {loss}");
        previous = loss;
        let mean = grads.mean_gradient();
        let values = params
            .values()
            .iter()
            .zip(&mean)
            .map(|(v, g)| v - 1e-3 * g)
            .collect();
        params = params.with_values(values).unwrap();
    }
}

// ---------------------------------------------------------------------------
// restrict

#[test]
fn restrict_full_is_identity_and_head_slices() {
    let spec = ModelSpec::mlp1(4, 5, 3).unwrap();
    let params = init_params(&spec, 2, 1.0).unwrap();
    let (features, labels) = tiny_batch(&spec, 4, 6);
    let grads = per_sample_gradients(&spec, &params, &features, &labels).unwrap();

    let full = restrict(&grads, GradientScope::Full);
    assert_eq!(full.rows, grads.rows);

    let head = restrict(&grads, GradientScope::Head);
    let head_range = spec.layout().head_range();
    assert_eq!(head.width(), head_range.len());
    assert_eq!(head.width(), 5 * 3 + 3);
    for sample in 0..4 {
        for (offset, coordinate) in head_range.clone().enumerate() {
            assert_eq!(head.rows[[sample, offset]], grads.rows[[sample, coordinate]]);
        }
    }
}

#[test]
fn restrict_head_on_linear_equals_full() {
    let spec = ModelSpec::linear(4, 3).unwrap();
    let params = init_params(&spec, 2, 1.0).unwrap();
    let (features, labels) = tiny_batch(&spec, 4, 6);
    let grads = per_sample_gradients(&spec, &params, &features, &labels).unwrap();
    let head = restrict(&grads, GradientScope::Head);
    assert_eq!(head.rows, grads.rows);
}

// ---------------------------------------------------------------------------
// checkpoints

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let spec = ModelSpec::mlp2(7, 5, 4, 3).unwrap();
    let params = init_params(&spec, 91, 1.0).unwrap();
    save_checkpoint(&path, &spec, &params).unwrap();
    let (loaded_spec, loaded) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded_spec, spec);
    assert_eq!(loaded.layout(), params.layout());
    for (a, b) in loaded.values().iter().zip(params.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}
