use super::*;
use crate::models::{GradientScope, PerSampleGradients};
use crate::rng::derive_rng;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::Rng;

fn spec(epsilon: f64, delta: f64, clip: f64, total_rounds: usize) -> PrivacySpec {
    PrivacySpec::new(epsilon, delta, clip, 1.0, 1.0, total_rounds).unwrap()
}

fn grads_from(rows: Array2<f64>) -> PerSampleGradients {
    let width = rows.ncols();
    PerSampleGradients {
        loss_values: vec![0.0; rows.nrows()],
        rows,
        scope: GradientScope::Full,
        head_cols: 0..width,
    }
}

// ---------------------------------------------------------------------------
// clip

#[test]
fn clip_below_threshold_is_identity() {
    let g = vec![3.0, 4.0]; // norm 5
    assert_eq!(clip(&g, 10.0), g);
    assert_eq!(clip(&g, 5.0), g); // boundary inclusive
}

#[test]
fn clip_rescales_to_the_threshold() {
    // ||(3,4)|| = 5, C = 1: scale by 0.2.
    let clipped = clip(&[3.0, 4.0], 1.0);
    assert_abs_diff_eq!(clipped[0], 0.6, epsilon = 1e-15);
    assert_abs_diff_eq!(clipped[1], 0.8, epsilon = 1e-15);
}

#[test]
fn clip_zero_vector_and_infinite_threshold() {
    assert_eq!(clip(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    let g = vec![1e3, -2e3];
    assert_eq!(clip(&g, f64::INFINITY), g);
}

#[test]
fn clip_is_idempotent_and_contractive_on_random_vectors() {
    let mut rng = derive_rng(0, "clip-test", &[]);
    for _ in 0..10_000 {
        let dim = rng.random_range(1..8);
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c = rng.random_range(0.1..5.0);
        let once = clip(&g, c);
        let twice = clip(&once, c);
        // Idempotent up to one re-scaling ulp when the clipped norm lands
        // marginally above C.
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
        }
        let norm_in = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let norm_out = once.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm_out <= norm_in.min(c) + 1e-12);
        // Direction preserved: g and clip(g) are positively collinear.
        let dot: f64 = g.iter().zip(&once).map(|(a, b)| a * b).sum();
        assert!(dot >= 0.0);
    }
}

// ---------------------------------------------------------------------------
// noise_scale

#[test]
fn noise_scale_collapses_to_one() {
    // c1 = q = 1, T = 1, delta = e^-1, epsilon = 1: every factor is 1.
    let s = PrivacySpec::new(1.0, (-1.0f64).exp(), 1.0, 1.0, 1.0, 1).unwrap();
    assert_abs_diff_eq!(s.noise_scale(), 1.0, epsilon = 1e-15);
}

#[test]
fn noise_scale_matches_high_precision_value() {
    // c1 = q = 1, T = 128, delta = 1e-5, epsilon = 5:
    // sigma = sqrt(128 * ln(1e5)) / 5 = 7.67764145950093 (30-digit oracle).
    let s = spec(5.0, 1e-5, 10.0, 128);
    assert_abs_diff_eq!(s.noise_scale(), 7.677_641_459_500_93, epsilon = 1e-9);
}

#[test]
fn noise_scale_homogeneity() {
    let base = spec(2.0, 1e-5, 1.0, 64);
    let double_rounds = spec(2.0, 1e-5, 1.0, 128);
    assert_abs_diff_eq!(
        double_rounds.noise_scale(),
        base.noise_scale() * 2f64.sqrt(),
        epsilon = 1e-12
    );
    let double_epsilon = spec(4.0, 1e-5, 1.0, 64);
    assert_abs_diff_eq!(double_epsilon.noise_scale(), base.noise_scale() / 2.0, epsilon = 1e-12);
}

#[test]
fn noise_scale_monotone_in_epsilon_and_rounds() {
    let epsilons = [0.5, 1.0, 2.0, 4.0, 8.0];
    for window in epsilons.windows(2) {
        let tighter = spec(window[0], 1e-5, 1.0, 64).noise_scale();
        let looser = spec(window[1], 1e-5, 1.0, 64).noise_scale();
        assert!(tighter > looser);
    }
    let rounds = [1usize, 8, 64, 256, 1024];
    for window in rounds.windows(2) {
        let shorter = spec(1.0, 1e-5, 1.0, window[0]).noise_scale();
        let longer = spec(1.0, 1e-5, 1.0, window[1]).noise_scale();
        assert!(longer > shorter);
    }
}

#[test]
fn privacy_spec_rejects_bad_ranges() {
    assert!(PrivacySpec::new(-1.0, 1e-5, 1.0, 1.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(0.0, 1e-5, 1.0, 1.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 1.0, 1.0, 1.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 0.0, 1.0, 1.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 1e-5, 0.0, 1.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 1e-5, 1.0, 0.0, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 1e-5, 1.0, 1.1, 1.0, 1).is_err());
    assert!(PrivacySpec::new(1.0, 1e-5, 1.0, 1.0, 0.0, 1).is_err());
}

// ---------------------------------------------------------------------------
// privatize

#[test]
fn privatize_zero_sigma_is_exact_mean_of_clipped_rows() {
    let rows = array![[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]];
    let grads = grads_from(rows);
    // sigma = 0 via epsilon = +inf; C = 1 clips only the first row.
    let s = spec(f64::INFINITY, 1e-5, 1.0, 10);
    assert_eq!(s.noise_scale(), 0.0);
    let mut stream = NoiseStream::for_client_round(1, 0, 0);
    let update = privatize(&grads, &s, &mut stream).unwrap();
    assert_abs_diff_eq!(update[0], (0.6 + 0.3 + 0.0) / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(update[1], (0.8 + 0.4 + 0.0) / 3.0, epsilon = 1e-15);
}

#[test]
fn privatize_zero_sigma_infinite_clip_is_plain_mean_bitwise() {
    let mut rng = derive_rng(3, "privatize-test", &[]);
    let rows = Array2::from_shape_fn((7, 5), |_| rng.random_range(-4.0..4.0));
    let grads = grads_from(rows);
    let expected = grads.mean_gradient();
    let s = spec(f64::INFINITY, 1e-5, f64::INFINITY, 10);
    let mut stream = NoiseStream::for_client_round(1, 0, 0);
    let update = privatize(&grads, &s, &mut stream).unwrap();
    for (a, b) in update.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn privatize_monte_carlo_mean_and_variance() {
    // Fixed gradients, 1e5 repeated draws: the coordinate-wise sample mean of
    // (update - mean clipped gradient) sits within 4 standard errors of 0 and
    // the sample variance within 5% of sigma^2 / D_n.
    let rows = array![[1.0, -2.0, 0.5], [0.0, 1.0, -1.0]];
    let grads = grads_from(rows);
    let s = spec(1.0, 1e-2, 10.0, 4); // sigma = sqrt(4 ln 100) / 1 = 4.292...
    let sigma = s.noise_scale();
    let samples = grads.num_samples() as f64;
    let noise_std = sigma / samples.sqrt();
    let baseline = grads.mean_gradient();

    let trials = 100_000;
    let mut sums = [0.0f64; 3];
    let mut squares = [0.0f64; 3];
    for trial in 0..trials {
        let mut stream = NoiseStream::for_client_round(99, 0, trial);
        let update = privatize(&grads, &s, &mut stream).unwrap();
        for (c, (value, base)) in update.iter().zip(&baseline).enumerate() {
            let noise = value - base;
            sums[c] += noise;
            squares[c] += noise * noise;
        }
    }
    let n = trials as f64;
    for c in 0..3 {
        let mean = sums[c] / n;
        let variance = squares[c] / n - mean * mean;
        let standard_error = noise_std / n.sqrt();
        assert!(
            mean.abs() < 4.0 * standard_error,
            "coordinate {c}: mean {mean} exceeds 4 SE {standard_error}"
        );
        let expected = noise_std * noise_std;
        assert!(
            (variance - expected).abs() < 0.05 * expected,
            "coordinate {c}: variance {variance} vs expected {expected}"
        );
    }
}

#[test]
fn noise_streams_differ_by_key_and_replay_exactly() {
    let rows = array![[1.0, 2.0, 3.0, 4.0]];
    let grads = grads_from(rows);
    let s = spec(1.0, 1e-5, 10.0, 8);
    let draw = |client: usize, round: usize| {
        let mut stream = NoiseStream::for_client_round(7, client, round);
        privatize(&grads, &s, &mut stream).unwrap()
    };
    let a = draw(0, 0);
    let b = draw(0, 1);
    let c = draw(1, 0);
    let replay = draw(0, 0);
    assert_eq!(a, replay);
    assert_ne!(a, b);
    assert_ne!(a, c);
    assert_ne!(b, c);
}

#[test]
fn privatize_rejects_empty_batches() {
    let grads = grads_from(Array2::zeros((0, 3)));
    let s = spec(1.0, 1e-5, 1.0, 4);
    let mut stream = NoiseStream::for_client_round(0, 0, 0);
    assert!(matches!(
        privatize(&grads, &s, &mut stream),
        Err(Error::Parameter(_))
    ));
}

// ---------------------------------------------------------------------------
// budget

#[test]
fn budget_boundary_is_inclusive() {
    let s = spec(1.0, 1e-5, 1.0, 16);
    assert_eq!(effective_budget_check(&s, 0), BudgetStatus::Ok);
    assert_eq!(effective_budget_check(&s, 16), BudgetStatus::Ok);
    assert_eq!(effective_budget_check(&s, 17), BudgetStatus::Violation);
}

#[test]
fn zero_round_budget_forbids_any_exposure() {
    let s = spec(1.0, 1e-5, 1.0, 0);
    assert_eq!(effective_budget_check(&s, 0), BudgetStatus::Ok);
    assert_eq!(effective_budget_check(&s, 1), BudgetStatus::Violation);
}

#[test]
fn zero_noise_variant_keeps_clipping() {
    let s = spec(2.0, 1e-5, 3.5, 16);
    let silent = s.with_zero_noise();
    assert_eq!(silent.noise_scale(), 0.0);
    assert_eq!(silent.clip_norm(), 3.5);
    assert_eq!(silent.total_rounds(), 16);
}
