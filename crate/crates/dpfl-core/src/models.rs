//! Small classifier family with exact per-sample gradients.
//!
//! Parameters live in one flat vector partitioned into a frozen-able body and
//! a head (the final affine layer). Differentiation is reverse-mode by hand,
//! layer by layer, so every per-sample gradient is exact and testable against
//! finite differences.

use std::fmt;
use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::LabeledDataset;

/// Architecture family: a bare softmax layer or an MLP with one or two
/// ReLU hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp1,
    Mlp2,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Linear => write!(f, "linear"),
            ModelKind::Mlp1 => write!(f, "mlp1"),
            ModelKind::Mlp2 => write!(f, "mlp2"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelKind::Linear),
            "mlp1" => Ok(ModelKind::Mlp1),
            "mlp2" => Ok(ModelKind::Mlp2),
            other => Err(Error::Parameter(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Hidden-layer activation. Only ReLU is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
}

/// Full description of a classifier architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn new(
        kind: ModelKind,
        input_dim: usize,
        hidden_dims: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let expected_hidden = match kind {
            ModelKind::Linear => 0,
            ModelKind::Mlp1 => 1,
            ModelKind::Mlp2 => 2,
        };
        if hidden_dims.len() != expected_hidden {
            return Err(Error::Parameter(format!(
                "{kind} expects {expected_hidden} hidden layers, got {}",
                hidden_dims.len()
            )));
        }
        if input_dim == 0 || num_classes == 0 || hidden_dims.iter().any(|&h| h == 0) {
            return Err(Error::Parameter("all layer dimensions must be >= 1".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            hidden_dims,
            num_classes,
            activation: Activation::Relu,
        })
    }

    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Linear, input_dim, vec![], num_classes)
    }

    pub fn mlp1(input_dim: usize, hidden: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp1, input_dim, vec![hidden], num_classes)
    }

    pub fn mlp2(input_dim: usize, h1: usize, h2: usize, num_classes: usize) -> Result<Self> {
        Self::new(ModelKind::Mlp2, input_dim, vec![h1, h2], num_classes)
    }

    /// Layer widths from input to output.
    fn widths(&self) -> Vec<usize> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(self.num_classes);
        widths
    }

    /// The flat parameter layout for this architecture.
    pub fn layout(&self) -> ParameterLayout {
        let widths = self.widths();
        let mut entries = Vec::new();
        let mut offset = 0usize;
        for layer in 0..widths.len() - 1 {
            let (rows, cols) = (widths[layer + 1], widths[layer]);
            entries.push(LayerEntry {
                name: format!("w{layer}"),
                shape: vec![rows, cols],
                offset,
            });
            offset += rows * cols;
            entries.push(LayerEntry {
                name: format!("b{layer}"),
                shape: vec![rows],
                offset,
            });
            offset += rows;
        }
        // The head is the final affine layer: its weight and bias are the
        // last two entries and sit contiguously at the end of the vector.
        let head_start = entries[entries.len() - 2].offset;
        ParameterLayout { entries, dim: offset, head_start }
    }

    /// Total parameter count d.
    pub fn param_dim(&self) -> usize {
        self.layout().dim
    }
}

/// One named block in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayerEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How a flat vector tiles into layers, plus the head/body split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterLayout {
    pub entries: Vec<LayerEntry>,
    pub dim: usize,
    pub head_start: usize,
}

impl ParameterLayout {
    /// Index range of the final affine layer (weights and biases).
    pub fn head_range(&self) -> Range<usize> {
        self.head_start..self.dim
    }

    /// Complement of the head: every feature-extractor coordinate.
    pub fn body_range(&self) -> Range<usize> {
        0..self.head_start
    }

    pub fn head_len(&self) -> usize {
        self.dim - self.head_start
    }
}

/// Flat model parameters with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: ParameterLayout,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: ParameterLayout) -> Result<Self> {
        if values.len() != layout.dim {
            return Err(Error::Shape(format!(
                "parameter vector has {} values but the layout needs {}",
                values.len(),
                layout.dim
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn head_range(&self) -> Range<usize> {
        self.layout.head_range()
    }

    pub fn body_range(&self) -> Range<usize> {
        self.layout.body_range()
    }

    /// A copy with the same layout but different values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    fn entry_view(&self, index: usize) -> &[f64] {
        let entry = &self.layout.entries[index];
        &self.values[entry.offset..entry.offset + entry.len()]
    }

    /// Weight matrix view for affine layer `layer` (entries come in W, b pairs).
    fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let entry = &self.layout.entries[2 * layer];
        ArrayView2::from_shape((entry.shape[0], entry.shape[1]), self.entry_view(2 * layer))
            .expect("layout tiles the vector")
    }

    fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.entry_view(2 * layer + 1))
    }

    fn num_affine_layers(&self) -> usize {
        self.layout.entries.len() / 2
    }
}

/// Whether a gradient covers all coordinates or only the head slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientScope {
    Full,
    Head,
}

/// Exact per-sample gradients for one batch: row i is the flat gradient of
/// sample i's cross-entropy loss.
#[derive(Debug, Clone)]
pub struct PerSampleGradients {
    pub rows: Array2<f64>,
    pub loss_values: Vec<f64>,
    pub scope: GradientScope,
    /// Columns of `rows` holding head coordinates.
    pub head_cols: Range<usize>,
}

impl PerSampleGradients {
    pub fn num_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// Mean over rows: the plain batch gradient.
    pub fn mean_gradient(&self) -> Vec<f64> {
        let scale = 1.0 / self.num_samples() as f64;
        self.rows
            .sum_axis(Axis(0))
            .into_iter()
            .map(|total| total * scale)
            .collect()
    }
}

/// Fan-in scaled uniform initialization: weights uniform in
/// `[-scale/sqrt(fan_in), scale/sqrt(fan_in)]`, biases zero.
pub fn init_params(spec: &ModelSpec, seed: u64, scale: f64) -> Result<ParameterVector> {
    if !(scale > 0.0) {
        return Err(Error::Parameter(format!("init scale must be > 0, got {scale}")));
    }
    let layout = spec.layout();
    let mut values = vec![0.0; layout.dim];
    let mut rng = derive_rng(seed, "init-params", &[]);
    for pair in layout.entries.chunks_exact(2) {
        let weight = &pair[0];
        let fan_in = weight.shape[1] as f64;
        let bound = scale / fan_in.sqrt();
        for slot in values[weight.offset..weight.offset + weight.len()].iter_mut() {
            *slot = rng.random_range(-bound..bound);
        }
        // biases stay zero
    }
    ParameterVector::new(values, layout)
}

fn check_features(spec: &ModelSpec, features: &Array2<f64>) -> Result<()> {
    if features.ncols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "features have {} columns but the model expects {}",
            features.ncols(),
            spec.input_dim
        )));
    }
    Ok(())
}

struct ForwardPass {
    /// Post-activation outputs per layer; activations[0] is the input batch.
    activations: Vec<Array2<f64>>,
    /// Logits of the final layer (pre-softmax).
    logits: Array2<f64>,
}

fn forward_pass(params: &ParameterVector, features: &Array2<f64>) -> ForwardPass {
    let layers = params.num_affine_layers();
    let mut activations = Vec::with_capacity(layers);
    activations.push(features.clone());
    for layer in 0..layers - 1 {
        let mut z = activations[layer].dot(&params.weight(layer).t());
        z += &params.bias(layer);
        z.mapv_inplace(|v| v.max(0.0));
        activations.push(z);
    }
    let mut logits = activations[layers - 1].dot(&params.weight(layers - 1).t());
    logits += &params.bias(layers - 1);
    ForwardPass { activations, logits }
}

/// Row-wise log-softmax, numerically stabilized by the row max.
fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|z| z - log_sum);
    }
    out
}

/// Class probabilities for a batch; each output row is a softmax distribution.
pub fn forward(spec: &ModelSpec, params: &ParameterVector, features: &Array2<f64>) -> Result<Array2<f64>> {
    check_features(spec, features)?;
    let pass = forward_pass(params, features);
    let mut probs = log_softmax_rows(&pass.logits);
    probs.mapv_inplace(f64::exp);
    Ok(probs)
}

/// Per-sample cross-entropy losses without gradients.
pub fn per_sample_losses(
    spec: &ModelSpec,
    params: &ParameterVector,
    features: &Array2<f64>,
    labels: &[usize],
) -> Result<Vec<f64>> {
    check_features(spec, features)?;
    check_labels(spec, features, labels)?;
    let pass = forward_pass(params, features);
    let log_probs = log_softmax_rows(&pass.logits);
    Ok(labels
        .iter()
        .enumerate()
        .map(|(row, &label)| -log_probs[[row, label]])
        .collect())
}

fn check_labels(spec: &ModelSpec, features: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != features.nrows() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.num_classes) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

/// Exact per-sample cross-entropy gradients via manual reverse-mode
/// differentiation.
pub fn per_sample_gradients(
    spec: &ModelSpec,
    params: &ParameterVector,
    features: &Array2<f64>,
    labels: &[usize],
) -> Result<PerSampleGradients> {
    check_features(spec, features)?;
    check_labels(spec, features, labels)?;
    if features.nrows() == 0 {
        return Err(Error::Parameter("batch must not be empty".into()));
    }

    let batch = features.nrows();
    let layout = params.layout();
    let pass = forward_pass(params, features);
    let log_probs = log_softmax_rows(&pass.logits);
    let loss_values: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(row, &label)| -log_probs[[row, label]])
        .collect();

    // delta for the output layer: softmax(z) - onehot(y), one row per sample.
    let mut delta = log_probs;
    delta.mapv_inplace(f64::exp);
    for (row, &label) in labels.iter().enumerate() {
        delta[[row, label]] -= 1.0;
    }

    let mut rows = Array2::zeros((batch, layout.dim));
    let layers = params.num_affine_layers();
    for layer in (0..layers).rev() {
        let weight_entry = &layout.entries[2 * layer];
        let bias_entry = &layout.entries[2 * layer + 1];
        let input = &pass.activations[layer];
        let (out_dim, in_dim) = (weight_entry.shape[0], weight_entry.shape[1]);
        for sample in 0..batch {
            let mut grad_row = rows.row_mut(sample);
            for unit in 0..out_dim {
                let d = delta[[sample, unit]];
                let base = weight_entry.offset + unit * in_dim;
                for feature in 0..in_dim {
                    grad_row[base + feature] = d * input[[sample, feature]];
                }
                grad_row[bias_entry.offset + unit] = d;
            }
        }
        if layer > 0 {
            // delta_{l-1} = (delta_l W_l) . relu'(a_{l-1}); post-activation
            // values are positive exactly where the pre-activation was.
            let mut next = delta.dot(&params.weight(layer));
            ndarray::Zip::from(&mut next)
                .and(&pass.activations[layer])
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            delta = next;
        }
    }

    Ok(PerSampleGradients {
        rows,
        loss_values,
        scope: GradientScope::Full,
        head_cols: layout.head_range(),
    })
}

/// Accuracy (argmax with ties broken toward the smallest class index) and
/// mean cross-entropy loss over a dataset.
pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, dataset: &LabeledDataset) -> Result<(f64, f64)> {
    check_features(spec, dataset.features())?;
    check_labels(spec, dataset.features(), dataset.labels())?;
    let pass = forward_pass(params, dataset.features());
    let log_probs = log_softmax_rows(&pass.logits);

    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for (row, &label) in dataset.labels().iter().enumerate() {
        let scores = log_probs.row(row);
        let mut best = 0usize;
        for (class, &score) in scores.iter().enumerate() {
            if score > scores[best] {
                best = class;
            }
        }
        if best == label {
            correct += 1;
        }
        loss_sum += -scores[label];
    }
    let n = dataset.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Project per-sample gradients onto the exposed coordinate range.
///
/// `Head` returns only the head-coordinate slice of each row (nothing is
/// zeroed); `Full` is the identity.
pub fn restrict(gradients: &PerSampleGradients, scope: GradientScope) -> PerSampleGradients {
    match scope {
        GradientScope::Full => gradients.clone(),
        GradientScope::Head => {
            let head = gradients.head_cols.clone();
            let rows = gradients.rows.slice(ndarray::s![.., head.clone()]).to_owned();
            let width = rows.ncols();
            PerSampleGradients {
                rows,
                loss_values: gradients.loss_values.clone(),
                scope: GradientScope::Head,
                head_cols: 0..width,
            }
        }
    }
}

mod checkpoint;
pub use checkpoint::{load_checkpoint, save_checkpoint};

#[cfg(test)]
mod tests;
