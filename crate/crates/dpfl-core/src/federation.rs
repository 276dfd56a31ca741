//! The federated training loop: strategy-dependent initialization, private
//! client updates, weighted aggregation, and the optional noise-free twin.

use ndarray::Array2;

use crate::analysis::{self, RoundMetrics};
use crate::data::{ClientPartition, TransferPair};
use crate::error::{Error, Result};
use crate::models::{
    self, init_params, GradientScope, ModelSpec, ParameterVector, PerSampleGradients,
};
use crate::privacy::{self, BudgetStatus, GradientReport, NoiseStream, PrivacySpec};
use crate::rng::derive_seed;
use crate::LabeledDataset;

/// Training strategy: scratch, full fine-tuning, or head fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    St,
    Ft,
    Ht,
}

impl Strategy {
    /// Coordinates a client exposes each round.
    pub fn exposed_scope(self) -> GradientScope {
        match self {
            Strategy::St | Strategy::Ft => GradientScope::Full,
            Strategy::Ht => GradientScope::Head,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::St => write!(f, "ST"),
            Strategy::Ft => write!(f, "FT"),
            Strategy::Ht => write!(f, "HT"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ST" | "st" => Ok(Strategy::St),
            "FT" | "ft" => Ok(Strategy::Ft),
            "HT" | "ht" => Ok(Strategy::Ht),
            other => Err(Error::Parameter(format!("unknown strategy `{other}`"))),
        }
    }
}

/// Hyper-parameters of one federated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub total_rounds: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Dirichlet concentration used when partitioning (kept with the run
    /// configuration; partitioning itself happens in `data`).
    pub alpha: f64,
    pub strategy: Strategy,
    pub master_seed: u64,
    /// Advance a coupled noise-free replica for kappa diagnostics.
    pub twin_run: bool,
    /// Centralized pre-training budget for FT/HT initialization.
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Parameter("num_clients must be >= 1".into()));
        }
        if self.total_rounds == 0 {
            return Err(Error::Parameter("total_rounds must be >= 1".into()));
        }
        if !(self.lr_init > 0.0) {
            return Err(Error::Parameter(format!("lr_init must be > 0, got {}", self.lr_init)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Parameter(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.pretrain_lr > 0.0) {
            return Err(Error::Parameter(format!(
                "pretrain_lr must be > 0, got {}",
                self.pretrain_lr
            )));
        }
        Ok(())
    }
}

/// One client's local view: its samples and aggregation weight.
#[derive(Debug, Clone)]
pub struct Client {
    pub id: usize,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    /// D_n / D.
    pub weight: f64,
}

impl Client {
    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }
}

/// Materialize per-client datasets from a partition.
pub fn build_clients(dataset: &LabeledDataset, partition: &ClientPartition) -> Result<Vec<Client>> {
    if partition.total() != dataset.len() {
        return Err(Error::Parameter(format!(
            "partition covers {} samples but the dataset has {}",
            partition.total(),
            dataset.len()
        )));
    }
    let total = partition.total() as f64;
    partition
        .assignments()
        .iter()
        .enumerate()
        .map(|(id, indices)| {
            let mut features = Array2::zeros((indices.len(), dataset.dim()));
            let mut labels = Vec::with_capacity(indices.len());
            for (row, &index) in indices.iter().enumerate() {
                features.row_mut(row).assign(&dataset.features().row(index));
                labels.push(dataset.labels()[index]);
            }
            Ok(Client {
                id,
                features,
                labels,
                weight: indices.len() as f64 / total,
            })
        })
        .collect()
}

/// Learning rate at round `t`: `lr_init * lr_decay^t`.
pub fn lr_at(config: &FederationConfig, round: usize) -> Result<f64> {
    if round >= config.total_rounds {
        return Err(Error::Parameter(format!(
            "round {round} out of range for {} total rounds",
            config.total_rounds
        )));
    }
    Ok(config.lr_init * config.lr_decay.powi(round as i32))
}

/// Centralized full-batch gradient descent on the source dataset.
///
/// This is the pre-training stage: non-private, non-federated. With
/// `epochs = 0` the fan-in initialization is returned unchanged.
pub fn pretrain(
    spec: &ModelSpec,
    source: &LabeledDataset,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<ParameterVector> {
    if !(lr > 0.0) {
        return Err(Error::Parameter(format!("pretrain lr must be > 0, got {lr}")));
    }
    let mut params = init_params(spec, seed, 1.0)?;
    for step in 0..epochs {
        let grads = models::per_sample_gradients(spec, &params, source.features(), source.labels())?;
        let mean_loss = grads.loss_values.iter().sum::<f64>() / grads.loss_values.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("pre-training loss became {mean_loss}"),
            });
        }
        let gradient = grads.mean_gradient();
        let values = params
            .values()
            .iter()
            .zip(&gradient)
            .map(|(value, grad)| value - lr * grad)
            .collect();
        params = params.with_values(values)?;
    }
    Ok(params)
}

/// One client's round: per-sample gradients at the global parameters,
/// restriction to the exposed coordinates, clipping, and noise.
///
/// Fails with a budget violation before computing anything if this exposure
/// would exceed the calibrated round count.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    client: &Client,
    spec: &ModelSpec,
    params: &ParameterVector,
    strategy: Strategy,
    privacy_spec: &PrivacySpec,
    master_seed: u64,
    round: usize,
    retain_audit_trace: bool,
) -> Result<GradientReport> {
    let exposures = round + 1;
    if privacy::effective_budget_check(privacy_spec, exposures) == BudgetStatus::Violation {
        return Err(Error::BudgetViolation {
            exposures,
            total_rounds: privacy_spec.total_rounds(),
        });
    }
    let full = models::per_sample_gradients(spec, params, &client.features, &client.labels)?;
    let exposed = models::restrict(&full, strategy.exposed_scope());
    let mut stream = NoiseStream::for_client_round(master_seed, client.id, round);
    let update = privacy::privatize(&exposed, privacy_spec, &mut stream)?;
    let audit_trace = retain_audit_trace.then(|| clipped_rows(&exposed, privacy_spec.clip_norm()));
    Ok(GradientReport {
        client_id: client.id,
        round,
        update,
        weight: client.weight,
        audit_trace,
    })
}

fn clipped_rows(grads: &PerSampleGradients, clip_norm: f64) -> Array2<f64> {
    let mut rows = grads.rows.clone();
    for mut row in rows.rows_mut() {
        let clipped = privacy::clip(row.as_slice().expect("contiguous"), clip_norm);
        for (slot, value) in row.iter_mut().zip(&clipped) {
            *slot = *value;
        }
    }
    rows
}

/// Dataset-size weighted mean of client updates.
///
/// Reports are summed in client-id order regardless of arrival order, so the
/// result is independent of client scheduling.
pub fn aggregate(reports: &[GradientReport]) -> Result<Vec<f64>> {
    let Some(first) = reports.first() else {
        return Err(Error::Aggregation("no reports to aggregate".into()));
    };
    let dim = first.update.len();
    let round = first.round;
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].client_id);
    for pair in order.windows(2) {
        if reports[pair[0]].client_id == reports[pair[1]].client_id {
            return Err(Error::Aggregation(format!(
                "duplicate report from client {}",
                reports[pair[0]].client_id
            )));
        }
    }

    let mut weight_sum = 0.0;
    for report in reports {
        if report.update.len() != dim {
            return Err(Error::Aggregation(format!(
                "client {} reported {} coordinates, expected {dim}",
                report.client_id,
                report.update.len()
            )));
        }
        if report.round != round {
            return Err(Error::Aggregation(format!(
                "client {} reported round {}, expected {round}",
                report.client_id, report.round
            )));
        }
        weight_sum += report.weight;
    }
    if (weight_sum - 1.0).abs() > 1e-12 {
        return Err(Error::Aggregation(format!(
            "client weights sum to {weight_sum}, expected 1"
        )));
    }

    let mut combined = vec![0.0; dim];
    for &index in &order {
        let report = &reports[index];
        for (total, value) in combined.iter_mut().zip(&report.update) {
            *total += report.weight * value;
        }
    }
    Ok(combined)
}

/// Gradient step on the exposed coordinates: all of them for ST/FT, the head
/// only for HT (body coordinates are copied bit for bit).
pub fn apply_update(
    params: &ParameterVector,
    update: &[f64],
    lr: f64,
    strategy: Strategy,
) -> Result<ParameterVector> {
    let mut values = params.values().to_vec();
    match strategy {
        Strategy::St | Strategy::Ft => {
            if update.len() != params.dim() {
                return Err(Error::Shape(format!(
                    "update has {} coordinates, parameters have {}",
                    update.len(),
                    params.dim()
                )));
            }
            for (value, grad) in values.iter_mut().zip(update) {
                *value -= lr * grad;
            }
        }
        Strategy::Ht => {
            let head = params.head_range();
            if update.len() != head.len() {
                return Err(Error::Shape(format!(
                    "head update has {} coordinates, head range has {}",
                    update.len(),
                    head.len()
                )));
            }
            for (value, grad) in values[head].iter_mut().zip(update) {
                *value -= lr * grad;
            }
        }
    }
    params.with_values(values)
}

/// Everything recorded about one training run.
#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub strategy: Strategy,
    pub sigma: f64,
    /// Parameter snapshots theta^0 .. theta^T (T+1 entries).
    pub snapshots: Vec<ParameterVector>,
    /// Noise-free twin trajectory, when requested.
    pub twin_snapshots: Option<Vec<ParameterVector>>,
    /// Aggregated update per round, in the exposed dimension.
    pub updates: Vec<Vec<f64>>,
    /// Learning rate used at each round.
    pub lrs: Vec<f64>,
    /// Per-round client reports, when retention was requested.
    pub reports: Option<Vec<Vec<GradientReport>>>,
    pub metrics: Vec<RoundMetrics>,
}

impl TrainingTrace {
    pub fn rounds(&self) -> usize {
        self.metrics.len()
    }

    pub fn final_params(&self) -> &ParameterVector {
        self.snapshots.last().expect("trace holds theta^0")
    }

    /// Maximum test accuracy over all recorded rounds.
    pub fn best_accuracy(&self) -> f64 {
        self.metrics
            .iter()
            .map(|m| m.test_accuracy)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A failed run carrying everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct RunFailure {
    pub error: Error,
    pub partial: Box<TrainingTrace>,
}

/// Execution knobs that do not change the trained model.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep every client report in the trace (needed for audits).
    pub retain_reports: bool,
    /// Retain per-sample clipped gradients inside each report.
    pub retain_audit_traces: bool,
    /// Client evaluation order; results are identical for any permutation.
    pub visit_order: Option<Vec<usize>>,
}

fn empty_trace(strategy: Strategy, sigma: f64) -> TrainingTrace {
    TrainingTrace {
        strategy,
        sigma,
        snapshots: Vec::new(),
        twin_snapshots: None,
        updates: Vec::new(),
        lrs: Vec::new(),
        reports: None,
        metrics: Vec::new(),
    }
}

/// Strategy-dependent initialization.
///
/// ST draws theta^0 at random. FT/HT pre-train the same backbone on the
/// source dataset (with a head sized for the source classes), transplant the
/// body, and freshly initialize the target head, mirroring head replacement
/// when the source and target label spaces differ.
fn initial_params(
    spec: &ModelSpec,
    pair: &TransferPair,
    config: &FederationConfig,
) -> Result<ParameterVector> {
    match config.strategy {
        Strategy::St => init_params(spec, derive_seed(config.master_seed, "st-init", &[]), 1.0),
        Strategy::Ft | Strategy::Ht => {
            let source_spec = ModelSpec::new(
                spec.kind,
                spec.input_dim,
                spec.hidden_dims.clone(),
                pair.source.num_classes(),
            )?;
            let pretrained = pretrain(
                &source_spec,
                &pair.source,
                config.pretrain_epochs,
                config.pretrain_lr,
                derive_seed(config.master_seed, "pretrain-init", &[]),
            )?;
            let mut params =
                init_params(spec, derive_seed(config.master_seed, "head-init", &[]), 1.0)?;
            let body = params.body_range();
            debug_assert_eq!(body, pretrained.body_range());
            let mut values = params.values().to_vec();
            values[body.clone()].copy_from_slice(&pretrained.values()[body]);
            params = params.with_values(values)?;
            Ok(params)
        }
    }
}

fn run_validate(
    spec: &ModelSpec,
    pair: &TransferPair,
    partition: &ClientPartition,
    test_set: &LabeledDataset,
    config: &FederationConfig,
    privacy_spec: &PrivacySpec,
    options: &RunOptions,
) -> Result<()> {
    config.validate()?;
    if pair.target.num_classes() != spec.num_classes {
        return Err(Error::Parameter(format!(
            "target has {} classes but the model head has {}",
            pair.target.num_classes(),
            spec.num_classes
        )));
    }
    if pair.target.dim() != spec.input_dim {
        return Err(Error::Shape(format!(
            "target features have {} dimensions, model expects {}",
            pair.target.dim(),
            spec.input_dim
        )));
    }
    if test_set.dim() != spec.input_dim || test_set.num_classes() != spec.num_classes {
        return Err(Error::Shape("test set incompatible with the model".into()));
    }
    if partition.num_clients() != config.num_clients {
        return Err(Error::Parameter(format!(
            "partition has {} clients but the config says {}",
            partition.num_clients(),
            config.num_clients
        )));
    }
    if config.total_rounds > privacy_spec.total_rounds() {
        return Err(Error::BudgetViolation {
            exposures: config.total_rounds,
            total_rounds: privacy_spec.total_rounds(),
        });
    }
    if let Some(order) = &options.visit_order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..config.num_clients).collect::<Vec<_>>() {
            return Err(Error::Parameter(
                "visit_order must be a permutation of client ids".into(),
            ));
        }
    }
    Ok(())
}

/// Run the full strategy-dependent federated training loop.
///
/// Executes T rounds of client update, weighted aggregation, and decayed
/// gradient steps, evaluating on the target test split each round. With
/// `config.twin_run` a noise-free replica advances from the same theta^0 with
/// identical clipping, and kappa records the trajectories' L2 distance.
pub fn run(
    spec: &ModelSpec,
    pair: &TransferPair,
    partition: &ClientPartition,
    test_set: &LabeledDataset,
    config: &FederationConfig,
    privacy_spec: &PrivacySpec,
    options: &RunOptions,
) -> std::result::Result<TrainingTrace, RunFailure> {
    let sigma = privacy_spec.noise_scale();
    let fail = |error: Error, partial: TrainingTrace| RunFailure { error, partial: Box::new(partial) };

    if let Err(error) = run_validate(spec, pair, partition, test_set, config, privacy_spec, options)
    {
        return Err(fail(error, empty_trace(config.strategy, sigma)));
    }
    let clients = match build_clients(&pair.target, partition) {
        Ok(clients) => clients,
        Err(error) => return Err(fail(error, empty_trace(config.strategy, sigma))),
    };
    let theta0 = match initial_params(spec, pair, config) {
        Ok(params) => params,
        Err(error) => return Err(fail(error, empty_trace(config.strategy, sigma))),
    };

    let strategy = config.strategy;
    let twin_privacy = privacy_spec.with_zero_noise();
    let order: Vec<usize> = options
        .visit_order
        .clone()
        .unwrap_or_else(|| (0..clients.len()).collect());

    let mut trace = empty_trace(strategy, sigma);
    trace.snapshots.push(theta0.clone());
    if config.twin_run {
        trace.twin_snapshots = Some(vec![theta0.clone()]);
    }
    if options.retain_reports {
        trace.reports = Some(Vec::with_capacity(config.total_rounds));
    }

    let mut theta = theta0.clone();
    let mut twin = config.twin_run.then(|| theta0);

    for round in 0..config.total_rounds {
        let mut reports = Vec::with_capacity(clients.len());
        for &client_id in &order {
            let report = match client_update(
                &clients[client_id],
                spec,
                &theta,
                strategy,
                privacy_spec,
                config.master_seed,
                round,
                options.retain_audit_traces,
            ) {
                Ok(report) => report,
                Err(error) => return Err(fail(error, trace)),
            };
            reports.push(report);
        }
        let update = match aggregate(&reports) {
            Ok(update) => update,
            Err(error) => return Err(fail(error, trace)),
        };
        let lr = match lr_at(config, round) {
            Ok(lr) => lr,
            Err(error) => return Err(fail(error, trace)),
        };
        theta = match apply_update(&theta, &update, lr, strategy) {
            Ok(theta) => theta,
            Err(error) => return Err(fail(error, trace)),
        };

        let mut kappa = None;
        if let Some(twin_params) = &mut twin {
            let step = advance_twin(
                twin_params,
                &clients,
                spec,
                strategy,
                &twin_privacy,
                config.master_seed,
                round,
                lr,
                &order,
            );
            *twin_params = match step {
                Ok(params) => params,
                Err(error) => return Err(fail(error, trace)),
            };
            kappa = match analysis::kappa(&theta, twin_params) {
                Ok(value) => Some(value),
                Err(error) => return Err(fail(error, trace)),
            };
            trace
                .twin_snapshots
                .as_mut()
                .expect("twin trajectory allocated")
                .push(twin_params.clone());
        }

        let (test_accuracy, mean_loss) = match models::evaluate(spec, &theta, test_set) {
            Ok(pair) => pair,
            Err(error) => return Err(fail(error, trace)),
        };
        if !mean_loss.is_finite() {
            let error = Error::Training {
                step: round,
                message: format!("test loss became {mean_loss}"),
            };
            return Err(fail(error, trace));
        }

        let update_cosine = trace
            .updates
            .last()
            .map(|previous| analysis::update_cosine(&update, previous));
        trace.metrics.push(RoundMetrics {
            round,
            test_accuracy,
            mean_loss,
            kappa,
            update_cosine,
            sigma,
            lr,
        });
        trace.snapshots.push(theta.clone());
        trace.updates.push(update);
        if let Some(all_reports) = &mut trace.reports {
            let mut by_id = reports;
            by_id.sort_by_key(|r| r.client_id);
            all_reports.push(by_id);
        }
        trace.lrs.push(lr);
    }

    Ok(trace)
}

/// One noise-free twin round sharing data order, clipping, and schedule.
#[allow(clippy::too_many_arguments)]
fn advance_twin(
    twin: &ParameterVector,
    clients: &[Client],
    spec: &ModelSpec,
    strategy: Strategy,
    twin_privacy: &PrivacySpec,
    master_seed: u64,
    round: usize,
    lr: f64,
    order: &[usize],
) -> Result<ParameterVector> {
    let mut reports = Vec::with_capacity(clients.len());
    for &client_id in order {
        reports.push(client_update(
            &clients[client_id],
            spec,
            twin,
            strategy,
            twin_privacy,
            master_seed,
            round,
            false,
        )?);
    }
    let update = aggregate(&reports)?;
    apply_update(twin, &update, lr, strategy)
}
