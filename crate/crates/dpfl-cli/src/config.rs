//! Experiment configuration: TOML blocks with §-style defaults, dotted-path
//! overrides, canonical snapshots, and resolution into runnable objects.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dpfl_core::data::{
    build_attack_split, dirichlet_partition, generate_mixture, load_idx, make_transfer_pair,
    AttackSplit, ClientPartition, ShiftKind, TransferPair,
};
use dpfl_core::federation::{FederationConfig, Strategy};
use dpfl_core::models::{ModelKind, ModelSpec};
use dpfl_core::privacy::PrivacySpec;
use dpfl_core::LabeledDataset;

use crate::CliError;

/// Complete experiment description. Every omitted block falls back to the
/// bundled fixture defaults (N=10, T=128, eps=5.0, delta=1e-5, C=10.0,
/// alpha=1.0, decay=0.9934).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub federation: FederationBlock,
    pub privacy: PrivacyBlock,
    pub attack: AttackBlock,
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic Gaussian mixture (the bundled fixture family).
    Mixture {
        #[serde(default = "defaults::num_classes")]
        num_classes: usize,
        #[serde(default = "defaults::dim")]
        dim: usize,
        #[serde(default = "defaults::samples_per_class")]
        samples_per_class: usize,
        #[serde(default = "defaults::test_samples_per_class")]
        test_samples_per_class: usize,
        #[serde(default = "defaults::separation")]
        separation: f64,
        #[serde(default = "defaults::data_seed")]
        seed: u64,
        #[serde(default)]
        shift: ShiftConfig,
    },
    /// IDX image/label files (FMNIST-format) for train and test.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        shift: ShiftConfig,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mixture {
            num_classes: defaults::num_classes(),
            dim: defaults::dim(),
            samples_per_class: defaults::samples_per_class(),
            test_samples_per_class: defaults::test_samples_per_class(),
            separation: defaults::separation(),
            seed: defaults::data_seed(),
            shift: ShiftConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    /// rotate | affine | class_split | none
    pub kind: String,
    pub magnitude: f64,
    /// Defaults to the dataset seed.
    pub seed: Option<u64>,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { kind: "rotate".into(), magnitude: 0.8, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// linear | mlp1 | mlp2
    pub kind: String,
    /// Hidden widths; defaults per kind ([], [16], or [16, 16]).
    pub hidden_dims: Option<Vec<usize>>,
    /// Inferred from the dataset when omitted.
    pub input_dim: Option<usize>,
    pub num_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { kind: "mlp1".into(), hidden_dims: None, input_dim: None, num_classes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationBlock {
    pub num_clients: usize,
    pub total_rounds: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub alpha: f64,
    /// ST | FT | HT
    pub strategy: String,
    pub master_seed: u64,
    pub twin_run: bool,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
}

impl Default for FederationBlock {
    fn default() -> Self {
        Self {
            num_clients: 10,
            total_rounds: 128,
            lr_init: 0.3,
            lr_decay: 0.9934,
            alpha: 1.0,
            strategy: "HT".into(),
            master_seed: 0,
            twin_run: false,
            pretrain_epochs: 300,
            pretrain_lr: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyBlock {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub sampling_prob: f64,
    pub calib_const: f64,
}

impl Default for PrivacyBlock {
    fn default() -> Self {
        Self {
            epsilon: 5.0,
            delta: 1e-5,
            clip_norm: 10.0,
            sampling_prob: 1.0,
            calib_const: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    pub enable: bool,
    pub per_client: usize,
    pub non_members: usize,
    /// Defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for AttackBlock {
    fn default() -> Self {
        Self { enable: false, per_client: 20, non_members: 200, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Experiment directory; defaults to `<output root>/<config hash>`.
    pub dir: Option<PathBuf>,
    /// Parameter checkpoints every k rounds (0 = final only).
    pub checkpoint_interval: usize,
    /// Persist snapshots and client reports so audits can run later.
    pub retain_gradients: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: None, checkpoint_interval: 0, retain_gradients: false }
    }
}

mod defaults {
    pub fn num_classes() -> usize {
        10
    }
    pub fn dim() -> usize {
        16
    }
    pub fn samples_per_class() -> usize {
        200
    }
    pub fn test_samples_per_class() -> usize {
        100
    }
    pub fn separation() -> f64 {
        4.0
    }
    pub fn data_seed() -> u64 {
        7
    }
}

impl ExperimentConfig {
    /// Parse a TOML file, applying `key.path=value` overrides on top.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// Parse TOML text with overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("config is not valid TOML: {e}")))?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let config: ExperimentConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML snapshot; parsing it back yields an identical config.
    pub fn to_canonical_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short stable identifier of the fully resolved config.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Cross-field checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |message: String| Err(CliError::Config(message));
        if !(self.privacy.epsilon > 0.0) {
            return fail(format!(
                "privacy.epsilon must be positive, got {}",
                self.privacy.epsilon
            ));
        }
        if !(self.privacy.delta > 0.0 && self.privacy.delta < 1.0) {
            return fail(format!(
                "privacy.delta must lie in (0, 1), got {}",
                self.privacy.delta
            ));
        }
        if !(self.privacy.clip_norm > 0.0) {
            return fail(format!(
                "privacy.clip_norm must be positive, got {}",
                self.privacy.clip_norm
            ));
        }
        self.strategy()?;
        self.model_kind()?;
        self.shift_kind()?;
        if self.federation.num_clients == 0 {
            return fail("federation.num_clients must be >= 1".into());
        }
        if self.federation.total_rounds == 0 {
            return fail("federation.total_rounds must be >= 1".into());
        }
        if !(self.federation.lr_init > 0.0) {
            return fail(format!(
                "federation.lr_init must be positive, got {}",
                self.federation.lr_init
            ));
        }
        if !(self.federation.alpha > 0.0) {
            return fail(format!(
                "federation.alpha must be positive, got {}",
                self.federation.alpha
            ));
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        self.federation
            .strategy
            .parse()
            .map_err(|e| CliError::Config(format!("federation.strategy: {e}")))
    }

    fn model_kind(&self) -> Result<ModelKind, CliError> {
        self.model
            .kind
            .parse()
            .map_err(|e| CliError::Config(format!("model.kind: {e}")))
    }

    fn shift_kind(&self) -> Result<Option<ShiftKind>, CliError> {
        let shift = match &self.dataset {
            DatasetConfig::Mixture { shift, .. } => shift,
            DatasetConfig::Idx { shift, .. } => shift,
        };
        if shift.kind == "none" {
            return Ok(None);
        }
        shift
            .kind
            .parse()
            .map(Some)
            .map_err(|e| CliError::Config(format!("dataset.shift.kind: {e}")))
    }

    /// Materialize datasets, partition, model, and mechanism.
    pub fn resolve(&self) -> Result<ResolvedExperiment, CliError> {
        let config_err = |e: dpfl_core::Error| CliError::Config(e.to_string());

        let (train_base, test_base, data_seed) = match &self.dataset {
            DatasetConfig::Mixture {
                num_classes,
                dim,
                samples_per_class,
                test_samples_per_class,
                separation,
                seed,
                ..
            } => {
                let train =
                    generate_mixture(*num_classes, *dim, *samples_per_class, *separation, *seed)
                        .map_err(config_err)?;
                let test = generate_mixture(
                    *num_classes,
                    *dim,
                    *test_samples_per_class,
                    *separation,
                    *seed ^ 0x5eed,
                )
                .map_err(config_err)?;
                (train, test, *seed)
            }
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels, .. } => {
                let train = load_idx(train_images, train_labels).map_err(config_err)?;
                let test = load_idx(test_images, test_labels).map_err(config_err)?;
                (train, test, 0)
            }
        };

        let shift = match &self.dataset {
            DatasetConfig::Mixture { shift, .. } => shift,
            DatasetConfig::Idx { shift, .. } => shift,
        };
        let shift_seed = shift.seed.unwrap_or(data_seed);
        let (pair, target_test) = match self.shift_kind()? {
            Some(kind) => {
                let pair = make_transfer_pair(&train_base, kind, shift.magnitude, shift_seed)
                    .map_err(config_err)?;
                let test_pair = make_transfer_pair(&test_base, kind, shift.magnitude, shift_seed)
                    .map_err(config_err)?;
                (pair, test_pair.target)
            }
            None => {
                let pair = make_transfer_pair(&train_base, ShiftKind::Rotate, 0.0, shift_seed)
                    .map_err(config_err)?;
                (pair, test_base)
            }
        };

        let input_dim = match self.model.input_dim {
            Some(dim) if dim != pair.target.dim() => {
                return Err(CliError::Config(format!(
                    "model.input_dim is {dim} but the dataset has {} features",
                    pair.target.dim()
                )));
            }
            Some(dim) => dim,
            None => pair.target.dim(),
        };
        let num_classes = match self.model.num_classes {
            Some(k) if k != pair.target.num_classes() => {
                return Err(CliError::Config(format!(
                    "model.num_classes is {k} but the target has {} classes",
                    pair.target.num_classes()
                )));
            }
            Some(k) => k,
            None => pair.target.num_classes(),
        };
        let kind = self.model_kind()?;
        let hidden = match (&self.model.hidden_dims, kind) {
            (Some(dims), _) => dims.clone(),
            (None, ModelKind::Linear) => vec![],
            (None, ModelKind::Mlp1) => vec![16],
            (None, ModelKind::Mlp2) => vec![16, 16],
        };
        let spec = ModelSpec::new(kind, input_dim, hidden, num_classes)
            .map_err(|e| CliError::Config(format!("model: {e}")))?;

        let strategy = self.strategy()?;
        let federation = FederationConfig {
            num_clients: self.federation.num_clients,
            total_rounds: self.federation.total_rounds,
            lr_init: self.federation.lr_init,
            lr_decay: self.federation.lr_decay,
            alpha: self.federation.alpha,
            strategy,
            master_seed: self.federation.master_seed,
            twin_run: self.federation.twin_run,
            pretrain_epochs: self.federation.pretrain_epochs,
            pretrain_lr: self.federation.pretrain_lr,
        };
        federation.validate().map_err(config_err)?;

        let privacy = PrivacySpec::new(
            self.privacy.epsilon,
            self.privacy.delta,
            self.privacy.clip_norm,
            self.privacy.sampling_prob,
            self.privacy.calib_const,
            self.federation.total_rounds,
        )
        .map_err(config_err)?;

        let partition_seed = dpfl_core::rng::derive_seed(
            self.federation.master_seed,
            "experiment-partition",
            &[],
        );
        let partition = dirichlet_partition(
            &pair.target,
            self.federation.num_clients,
            self.federation.alpha,
            partition_seed,
        )
        .map_err(config_err)?;

        let attack_split = if self.attack.enable {
            let seed = self.attack.seed.unwrap_or(self.federation.master_seed);
            Some(
                build_attack_split(
                    &partition,
                    self.attack.per_client,
                    &target_test,
                    self.attack.non_members,
                    seed,
                )
                .map_err(config_err)?,
            )
        } else {
            None
        };

        Ok(ResolvedExperiment {
            pair,
            target_test,
            partition,
            spec,
            federation,
            privacy,
            attack_split,
        })
    }
}

/// Everything a run needs, materialized and validated.
#[derive(Debug)]
pub struct ResolvedExperiment {
    pub pair: TransferPair,
    pub target_test: LabeledDataset,
    pub partition: ClientPartition,
    pub spec: ModelSpec,
    pub federation: FederationConfig,
    pub privacy: PrivacySpec,
    pub attack_split: Option<AttackSplit>,
}

/// Set one dotted-path key in a TOML table, parsing the value as TOML when
/// possible and falling back to a string.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<(), CliError> {
    let (path, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{entry}` is not key.path=value")))?;
    let value = format!("v = {raw_value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw_value.to_string()));

    let segments: Vec<&str> = path.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(CliError::Config(format!("override path `{path}` has empty segments")));
    }
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Config(format!("override path `{path}` crosses a non-table key"))
            })?;
    }
    current.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

/// Sweep description: a base experiment, named axes, and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub cap: Option<usize>,
    pub seeds: Vec<u64>,
    pub base: ExperimentConfig,
    pub axes: SweepAxes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepAxes {
    pub epsilon: Vec<f64>,
    pub total_rounds: Vec<usize>,
    pub num_clients: Vec<usize>,
    pub alpha: Vec<f64>,
    pub strategy: Vec<String>,
    pub model_kind: Vec<String>,
}

const DEFAULT_SWEEP_CAP: usize = 512;

/// One sweep cell: the resolved config plus its axis coordinates.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub config: ExperimentConfig,
    pub axes: BTreeMap<String, String>,
    pub seed: u64,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let spec: SweepSpec = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid sweep spec: {e}")))?;
        spec.base.validate()?;
        Ok(spec)
    }

    /// Expand the Cartesian product of all non-empty axes and seeds.
    pub fn expand(&self) -> Result<Vec<SweepCell>, CliError> {
        let seeds = if self.seeds.is_empty() { vec![self.base.federation.master_seed] } else { self.seeds.clone() };
        let one_f64 = |values: &[f64], fallback: f64| -> Vec<f64> {
            if values.is_empty() { vec![fallback] } else { values.to_vec() }
        };
        let one_usize = |values: &[usize], fallback: usize| -> Vec<usize> {
            if values.is_empty() { vec![fallback] } else { values.to_vec() }
        };
        let one_string = |values: &[String], fallback: &str| -> Vec<String> {
            if values.is_empty() { vec![fallback.to_string()] } else { values.to_vec() }
        };

        let epsilons = one_f64(&self.axes.epsilon, self.base.privacy.epsilon);
        let rounds = one_usize(&self.axes.total_rounds, self.base.federation.total_rounds);
        let clients = one_usize(&self.axes.num_clients, self.base.federation.num_clients);
        let alphas = one_f64(&self.axes.alpha, self.base.federation.alpha);
        let strategies = one_string(&self.axes.strategy, &self.base.federation.strategy);
        let kinds = one_string(&self.axes.model_kind, &self.base.model.kind);

        let cap = self.cap.unwrap_or(DEFAULT_SWEEP_CAP);
        let total = epsilons.len()
            * rounds.len()
            * clients.len()
            * alphas.len()
            * strategies.len()
            * kinds.len()
            * seeds.len();
        if total > cap {
            return Err(CliError::Config(format!(
                "sweep expands to {total} cells, above the cap of {cap}"
            )));
        }

        let mut cells = Vec::with_capacity(total);
        for epsilon in &epsilons {
            for total_rounds in &rounds {
                for num_clients in &clients {
                    for alpha in &alphas {
                        for strategy in &strategies {
                            for kind in &kinds {
                                for &seed in &seeds {
                                    let mut config = self.base.clone();
                                    config.privacy.epsilon = *epsilon;
                                    config.federation.total_rounds = *total_rounds;
                                    config.federation.num_clients = *num_clients;
                                    config.federation.alpha = *alpha;
                                    config.federation.strategy = strategy.clone();
                                    config.model.kind = kind.clone();
                                    config.federation.master_seed = seed;
                                    config.output.dir = None;
                                    config.validate()?;

                                    let mut axes = BTreeMap::new();
                                    if !self.axes.epsilon.is_empty() {
                                        axes.insert("epsilon".into(), epsilon.to_string());
                                    }
                                    if !self.axes.total_rounds.is_empty() {
                                        axes.insert("total_rounds".into(), total_rounds.to_string());
                                    }
                                    if !self.axes.num_clients.is_empty() {
                                        axes.insert("num_clients".into(), num_clients.to_string());
                                    }
                                    if !self.axes.alpha.is_empty() {
                                        axes.insert("alpha".into(), alpha.to_string());
                                    }
                                    if !self.axes.model_kind.is_empty() {
                                        axes.insert("model_kind".into(), kind.clone());
                                    }
                                    cells.push(SweepCell { config, axes, seed });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}
