//! With the mechanism switched off and a single client, federated training
//! must collapse to plain centralized gradient descent. The reference
//! trajectory is recomputed here with an independent vectorized
//! implementation of batch backpropagation.

use dpfl_core::data::{generate_mixture, make_transfer_pair, ClientPartition, ShiftKind};
use dpfl_core::federation::{run, FederationConfig, RunOptions, Strategy};
use dpfl_core::models::ModelSpec;
use dpfl_core::privacy::PrivacySpec;
use ndarray::{Array1, Array2, Axis};

struct OracleMlp1 {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

impl OracleMlp1 {
    /// Unpack a flat vector laid out as (W1, b1, W2, b2), row-major weights.
    fn from_flat(values: &[f64], input: usize, hidden: usize, classes: usize) -> Self {
        let mut offset = 0;
        let mut take = |n: usize| {
            let slice = &values[offset..offset + n];
            offset += n;
            slice.to_vec()
        };
        let w1 = Array2::from_shape_vec((hidden, input), take(hidden * input)).unwrap();
        let b1 = Array1::from_vec(take(hidden));
        let w2 = Array2::from_shape_vec((classes, hidden), take(classes * hidden)).unwrap();
        let b2 = Array1::from_vec(take(classes));
        assert_eq!(offset, values.len());
        Self { w1, b1, w2, b2 }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend(self.w1.iter());
        flat.extend(self.b1.iter());
        flat.extend(self.w2.iter());
        flat.extend(self.b2.iter());
        flat
    }

    /// One full-batch gradient descent step via matrix-form backprop.
    fn descend(&mut self, features: &Array2<f64>, labels: &[usize], lr: f64) {
        let batch = features.nrows() as f64;
        let z1 = features.dot(&self.w1.t()) + &self.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let logits = a1.dot(&self.w2.t()) + &self.b2;

        // Row-wise softmax.
        let mut probs = logits.clone();
        for mut row in probs.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|p| p / sum);
        }
        let mut delta2 = probs;
        for (row, &label) in labels.iter().enumerate() {
            delta2[[row, label]] -= 1.0;
        }
        delta2.mapv_inplace(|d| d / batch);

        let grad_w2 = delta2.t().dot(&a1);
        let grad_b2 = delta2.sum_axis(Axis(0));
        let mut delta1 = delta2.dot(&self.w2);
        ndarray::Zip::from(&mut delta1).and(&z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        let grad_w1 = delta1.t().dot(features);
        let grad_b1 = delta1.sum_axis(Axis(0));

        self.w1 -= &(grad_w1 * lr);
        self.b1 -= &(grad_b1 * lr);
        self.w2 -= &(grad_w2 * lr);
        self.b2 -= &(grad_b2 * lr);
    }
}

#[test]
fn single_client_without_mechanism_is_centralized_descent() {
    let rounds = 10;
    let base = generate_mixture(3, 6, 40, 3.0, 51).unwrap();
    let pair = make_transfer_pair(&base, ShiftKind::Rotate, 0.0, 0).unwrap();
    let test = generate_mixture(3, 6, 20, 3.0, 52).unwrap();
    let partition = ClientPartition::new(vec![(0..pair.target.len()).collect()], pair.target.len()).unwrap();
    let spec = ModelSpec::mlp1(6, 5, 3).unwrap();
    let config = FederationConfig {
        num_clients: 1,
        total_rounds: rounds,
        lr_init: 0.4,
        lr_decay: 0.9934,
        alpha: 1.0,
        strategy: Strategy::St,
        master_seed: 77,
        twin_run: false,
        pretrain_epochs: 0,
        pretrain_lr: 0.5,
    };
    // sigma = 0 (epsilon = +inf) and C = +inf: the mechanism is inert.
    let privacy = PrivacySpec::new(f64::INFINITY, 1e-5, f64::INFINITY, 1.0, 1.0, rounds).unwrap();
    let trace = run(&spec, &pair, &partition, &test, &config, &privacy, &RunOptions::default())
        .unwrap();

    // Oracle: same theta^0, independent matrix-form descent with the same
    // learning-rate schedule.
    let mut oracle = OracleMlp1::from_flat(trace.snapshots[0].values(), 6, 5, 3);
    for round in 0..rounds {
        let lr = 0.4 * 0.9934f64.powi(round as i32);
        oracle.descend(pair.target.features(), pair.target.labels(), lr);
        let expected = oracle.to_flat();
        let actual = trace.snapshots[round + 1].values();
        let mut worst = 0.0f64;
        for (a, b) in actual.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
        assert!(
            worst <= 1e-10,
            "round {round}: trajectory diverged from the oracle by {worst}"
        );
    }
}
