//! The DP mechanism: per-sample clipping, noise calibration, Gaussian
//! perturbation, and the exposed-update construction.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::models::PerSampleGradients;
use crate::rng::{derive_rng, fill_gaussian};

/// Privacy budget and mechanism parameters. The noise scale is always
/// recomputed from the closed form, never cached.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacySpec {
    epsilon: f64,
    delta: f64,
    clip_norm: f64,
    sampling_prob: f64,
    calib_const: f64,
    total_rounds: usize,
}

impl PrivacySpec {
    pub fn new(
        epsilon: f64,
        delta: f64,
        clip_norm: f64,
        sampling_prob: f64,
        calib_const: f64,
        total_rounds: usize,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::Parameter(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(clip_norm > 0.0) {
            return Err(Error::Parameter(format!("clip_norm must be > 0, got {clip_norm}")));
        }
        if !(sampling_prob > 0.0 && sampling_prob <= 1.0) {
            return Err(Error::Parameter(format!(
                "sampling_prob must lie in (0, 1], got {sampling_prob}"
            )));
        }
        if !(calib_const > 0.0 && calib_const.is_finite()) {
            return Err(Error::Parameter(format!(
                "calib_const must be a positive finite real, got {calib_const}"
            )));
        }
        Ok(Self {
            epsilon,
            delta,
            clip_norm,
            sampling_prob,
            calib_const,
            total_rounds,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Per-sample clipping threshold C.
    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }

    pub fn sampling_prob(&self) -> f64 {
        self.sampling_prob
    }

    pub fn calib_const(&self) -> f64 {
        self.calib_const
    }

    /// The iteration count T the noise was calibrated for.
    pub fn total_rounds(&self) -> usize {
        self.total_rounds
    }

    /// Calibrated noise scale `sigma = c1 * q * sqrt(T * ln(1/delta)) / epsilon`.
    pub fn noise_scale(&self) -> f64 {
        self.calib_const * self.sampling_prob * (self.total_rounds as f64 * (1.0 / self.delta).ln()).sqrt()
            / self.epsilon
    }

    /// The same spec with the noise switched off (`epsilon = +inf`, so the
    /// closed form yields sigma = 0); clipping is unchanged. Used by the
    /// noise-free twin run.
    pub fn with_zero_noise(&self) -> Self {
        Self { epsilon: f64::INFINITY, ..self.clone() }
    }
}

/// Free-function form of the calibration rule.
pub fn noise_scale(spec: &PrivacySpec) -> f64 {
    spec.noise_scale()
}

/// `clip_C(g) = g / max(1, ||g||_2 / C)`: cap the L2 norm at `clip_norm`
/// without changing direction. Vectors at or below the cap pass through
/// unchanged; the zero vector maps to itself.
pub fn clip(gradient: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = 1.0 / (norm / clip_norm).max(1.0);
    if scale >= 1.0 {
        gradient.to_vec()
    } else {
        gradient.iter().map(|g| g * scale).collect()
    }
}

/// A per-(client, round) noise stream.
///
/// Streams are derived from (master seed, client id, round), so clients can
/// be privatized concurrently and in any order with identical results, and
/// replaying a key replays its noise exactly.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn for_client_round(master_seed: u64, client_id: usize, round: usize) -> Self {
        Self {
            rng: derive_rng(master_seed, "dp-noise", &[client_id as u64, round as u64]),
        }
    }

    fn fill(&mut self, out: &mut [f64], std: f64) {
        fill_gaussian(&mut self.rng, out, 0.0, std);
    }
}

/// Build the exposed update `g~ = (1/D_n) sum_i clip_C(g_i) + z` with
/// `z ~ N(0, sigma^2 / D_n)` per coordinate.
///
/// Drawing one Gaussian vector with variance `sigma^2 / D_n` is
/// distributionally identical to averaging a fresh `N(0, sigma^2)` draw per
/// sample, at 1/D_n of the cost. With `sigma = 0` the result is exactly the
/// mean clipped gradient (no draw is made).
pub fn privatize(per_sample: &PerSampleGradients, spec: &PrivacySpec, stream: &mut NoiseStream) -> Result<Vec<f64>> {
    privatize_with(per_sample, spec.clip_norm(), spec.noise_scale(), stream)
}

/// `privatize` with the clip threshold and noise scale supplied directly.
pub fn privatize_with(
    per_sample: &PerSampleGradients,
    clip_norm: f64,
    sigma: f64,
    stream: &mut NoiseStream,
) -> Result<Vec<f64>> {
    let samples = per_sample.num_samples();
    if samples == 0 {
        return Err(Error::Parameter("per-sample gradients must not be empty".into()));
    }
    if !(clip_norm > 0.0) {
        return Err(Error::Parameter(format!("clip_norm must be > 0, got {clip_norm}")));
    }
    let width = per_sample.width();
    let mut update = vec![0.0; width];
    for row in per_sample.rows.rows() {
        let row = row.as_slice().expect("gradient rows are contiguous");
        let clipped = clip(row, clip_norm);
        for (total, value) in update.iter_mut().zip(&clipped) {
            *total += value;
        }
    }
    let inv = 1.0 / samples as f64;
    for total in update.iter_mut() {
        *total *= inv;
    }
    if sigma > 0.0 {
        let mut noise = vec![0.0; width];
        stream.fill(&mut noise, sigma / (samples as f64).sqrt());
        for (total, z) in update.iter_mut().zip(&noise) {
            *total += z;
        }
    }
    Ok(update)
}

/// Outcome of comparing executed exposures against the calibrated budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetStatus {
    Ok,
    Violation,
}

/// The budget is fixed in advance: a client may expose gradients at most `T`
/// times, where `T` is the round count sigma was calibrated for.
pub fn effective_budget_check(spec: &PrivacySpec, rounds_executed: usize) -> BudgetStatus {
    if rounds_executed > spec.total_rounds {
        BudgetStatus::Violation
    } else {
        BudgetStatus::Ok
    }
}

/// One client's exposed update for one round.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub client_id: usize,
    /// The loop index t at which the update was computed.
    pub round: usize,
    /// The exposed vector: dimension d for ST/FT, |head| for HT.
    pub update: Vec<f64>,
    /// Aggregation weight D_n / D.
    pub weight: f64,
    /// Per-sample clipped gradients, retained only by test and audit builds.
    pub audit_trace: Option<ndarray::Array2<f64>>,
}

#[cfg(test)]
mod tests;
