//! Dataset generation, non-IID partitioning, transfer pairs, and attack splits.

mod idx;

pub mod fixtures;

pub use idx::{load_idx, write_idx};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, standard_normal};

/// A dense classification dataset: one feature row per sample.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl LabeledDataset {
    /// Build a dataset, validating the type invariants.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::Parameter("dataset must not be empty".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::Parameter(format!(
                "feature rows ({}) and label count ({}) differ",
                features.nrows(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::Parameter(format!(
                "num_classes must be >= 2, got {num_classes}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&label| label >= num_classes) {
            return Err(Error::Parameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimensionality.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Copy out the rows at `indices` as a new dataset with the same classes.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let mut features = Array2::zeros((indices.len(), self.dim()));
        let mut labels = Vec::with_capacity(indices.len());
        for (row, &index) in indices.iter().enumerate() {
            if index >= self.len() {
                return Err(Error::Parameter(format!(
                    "subset index {index} out of range for {} samples",
                    self.len()
                )));
            }
            features.row_mut(row).assign(&self.features.row(index));
            labels.push(self.labels[index]);
        }
        Self::new(features, labels, self.num_classes, name)
    }
}

/// Disjoint assignment of sample indices to clients.
#[derive(Debug, Clone)]
pub struct ClientPartition {
    assignments: Vec<Vec<usize>>,
    total: usize,
}

impl ClientPartition {
    /// Validate disjointness and exact coverage of `[0, total)`.
    pub fn new(assignments: Vec<Vec<usize>>, total: usize) -> Result<Self> {
        let mut seen = vec![false; total];
        let mut covered = 0usize;
        for (client, list) in assignments.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::Parameter(format!("client {client} received no samples")));
            }
            for &index in list {
                if index >= total {
                    return Err(Error::Parameter(format!(
                        "client {client} holds index {index} outside [0, {total})"
                    )));
                }
                if seen[index] {
                    return Err(Error::Parameter(format!(
                        "index {index} assigned to more than one client"
                    )));
                }
                seen[index] = true;
                covered += 1;
            }
        }
        if covered != total {
            return Err(Error::Parameter(format!(
                "assignments cover {covered} of {total} samples"
            )));
        }
        Ok(Self { assignments, total })
    }

    pub fn num_clients(&self) -> usize {
        self.assignments.len()
    }

    /// Index lists per client.
    pub fn assignments(&self) -> &[Vec<usize>] {
        &self.assignments
    }

    /// Per-client sample counts `D_n`.
    pub fn client_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Total sample count `D`.
    pub fn total(&self) -> usize {
        self.total
    }
}

/// The kind of distribution shift applied between source and target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    /// `x -> Ax + b` with a seeded perturbation of the identity.
    Affine,
    /// Planar rotations by a fixed angle in coordinate planes (0,1), (2,3), ...
    Rotate,
    /// Source keeps the lower half of the classes, target gets the rest relabeled.
    ClassSplit,
}

impl std::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ShiftKind::Affine => write!(f, "affine"),
            ShiftKind::Rotate => write!(f, "rotate"),
            ShiftKind::ClassSplit => write!(f, "class_split"),
        }
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "affine" => Ok(ShiftKind::Affine),
            "rotate" => Ok(ShiftKind::Rotate),
            "class_split" => Ok(ShiftKind::ClassSplit),
            other => Err(Error::Parameter(format!("unknown shift kind `{other}`"))),
        }
    }
}

/// Parameters of the shift that produced a transfer pair.
#[derive(Debug, Clone)]
pub struct ShiftDescriptor {
    pub kind: ShiftKind,
    pub magnitude: f64,
    pub seed: u64,
}

/// A pre-training source dataset paired with a shifted fine-tuning target.
#[derive(Debug, Clone)]
pub struct TransferPair {
    pub source: LabeledDataset,
    pub target: LabeledDataset,
    pub shift: ShiftDescriptor,
}

/// Ground truth for membership and source inference audits.
#[derive(Debug, Clone)]
pub struct AttackSplit {
    /// (client index, sample index into the partitioned training set).
    members: Vec<(usize, usize)>,
    /// Sample indices into the held-out test set.
    non_members: Vec<usize>,
}

impl AttackSplit {
    pub fn new(members: Vec<(usize, usize)>, non_members: Vec<usize>) -> Self {
        Self { members, non_members }
    }

    pub fn members(&self) -> &[(usize, usize)] {
        &self.members
    }

    pub fn non_members(&self) -> &[usize] {
        &self.non_members
    }
}

/// Class mean directions: orthonormal axes when the dimension allows, else
/// equally spaced on a circle in the first two coordinates. Pairwise mean
/// distances are proportional to `separation` in both layouts.
fn class_means(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let mut means = vec![vec![0.0; dim]; num_classes];
    if dim >= num_classes {
        let scale = separation / std::f64::consts::SQRT_2;
        for (class, mean) in means.iter_mut().enumerate() {
            mean[class] = scale;
        }
    } else {
        let radius = separation / 2.0;
        for (class, mean) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * class as f64 / num_classes as f64;
            mean[0] = radius * angle.cos();
            mean[1] = radius * angle.sin();
        }
    }
    means
}

/// Generate a Gaussian mixture with one unit-variance component per class.
///
/// Samples are laid out class-major and the generator is a pure function of
/// its arguments.
pub fn generate_mixture(
    num_classes: usize,
    dim: usize,
    samples_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 {
        return Err(Error::Parameter(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if dim < 2 {
        return Err(Error::Parameter(format!("dim must be >= 2, got {dim}")));
    }
    if samples_per_class == 0 {
        return Err(Error::Parameter("samples_per_class must be >= 1".into()));
    }
    if !(separation >= 0.0) {
        return Err(Error::Parameter(format!(
            "separation must be >= 0, got {separation}"
        )));
    }

    let means = class_means(num_classes, dim, separation);
    let total = num_classes * samples_per_class;
    let mut features = Array2::zeros((total, dim));
    let mut labels = Vec::with_capacity(total);
    for (class, mean) in means.iter().enumerate() {
        let mut rng = derive_rng(seed, "mixture-class", &[class as u64]);
        for sample in 0..samples_per_class {
            let row = class * samples_per_class + sample;
            for (column, &center) in mean.iter().enumerate() {
                features[[row, column]] = center + standard_normal(&mut rng);
            }
            labels.push(class);
        }
    }
    LabeledDataset::new(
        features,
        labels,
        num_classes,
        format!("mixture-k{num_classes}-d{dim}-n{samples_per_class}-seed{seed}"),
    )
}

/// Apply the planar-rotation shift: consecutive coordinate pairs rotate by `angle`.
fn rotate_features(features: &Array2<f64>, angle: f64) -> Array2<f64> {
    let mut out = features.clone();
    let (cos, sin) = (angle.cos(), angle.sin());
    let dim = features.ncols();
    for mut row in out.rows_mut() {
        for plane in 0..dim / 2 {
            let (i, j) = (2 * plane, 2 * plane + 1);
            let (x, y) = (row[i], row[j]);
            row[i] = cos * x - sin * y;
            row[j] = sin * x + cos * y;
        }
    }
    out
}

/// Build a source/target pair with a controllable domain gap.
///
/// `affine` and `rotate` keep labels and reduce to the identity at
/// `magnitude = 0`; `class_split` divides the label space instead and ignores
/// `magnitude`.
pub fn make_transfer_pair(
    base: &LabeledDataset,
    kind: ShiftKind,
    magnitude: f64,
    seed: u64,
) -> Result<TransferPair> {
    if !(magnitude >= 0.0) {
        return Err(Error::Parameter(format!(
            "magnitude must be >= 0, got {magnitude}"
        )));
    }
    let shift = ShiftDescriptor { kind, magnitude, seed };
    match kind {
        ShiftKind::Affine => {
            let dim = base.dim();
            let mut rng = derive_rng(seed, "shift-affine", &[]);
            let norm = (dim as f64).sqrt();
            let mut matrix = Array2::eye(dim);
            for element in matrix.iter_mut() {
                *element += magnitude * standard_normal(&mut rng) / norm;
            }
            let offset: Vec<f64> = (0..dim)
                .map(|_| magnitude * standard_normal(&mut rng) / norm)
                .collect();
            let mut features = base.features().dot(&matrix.t());
            for mut row in features.rows_mut() {
                for (value, shift) in row.iter_mut().zip(&offset) {
                    *value += shift;
                }
            }
            let target = LabeledDataset::new(
                features,
                base.labels().to_vec(),
                base.num_classes(),
                format!("{}-affine{magnitude}", base.name()),
            )?;
            Ok(TransferPair { source: base.clone(), target, shift })
        }
        ShiftKind::Rotate => {
            let features = rotate_features(base.features(), magnitude);
            let target = LabeledDataset::new(
                features,
                base.labels().to_vec(),
                base.num_classes(),
                format!("{}-rotate{magnitude}", base.name()),
            )?;
            Ok(TransferPair { source: base.clone(), target, shift })
        }
        ShiftKind::ClassSplit => {
            let classes = base.num_classes();
            if classes < 4 {
                return Err(Error::Parameter(format!(
                    "class_split needs at least 4 classes, got {classes}"
                )));
            }
            let source_classes = classes / 2;
            let gather = |keep: &dyn Fn(usize) -> bool, remap: usize, count: usize, tag: &str| {
                let indices: Vec<usize> =
                    (0..base.len()).filter(|&i| keep(base.labels()[i])).collect();
                let mut features = Array2::zeros((indices.len(), base.dim()));
                let mut labels = Vec::with_capacity(indices.len());
                for (row, &index) in indices.iter().enumerate() {
                    features.row_mut(row).assign(&base.features().row(index));
                    labels.push(base.labels()[index] - remap);
                }
                LabeledDataset::new(features, labels, count, format!("{}-{tag}", base.name()))
            };
            let source = gather(&|label| label < source_classes, 0, source_classes, "split-src")?;
            let target = gather(
                &|label| label >= source_classes,
                source_classes,
                classes - source_classes,
                "split-tgt",
            )?;
            Ok(TransferPair { source, target, shift })
        }
    }
}

/// Largest-remainder rounding of `proportions * total` to integer counts.
fn proportional_counts(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = proportions
        .iter()
        .map(|p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = proportions
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for &(index, _) in remainders.iter().take(total - assigned) {
        counts[index] += 1;
    }
    counts
}

/// Partition a dataset across clients with class-wise Dirichlet proportions.
///
/// For every class the per-client shares are drawn from `Dirichlet(alpha * 1)`;
/// empty clients are then repaired by moving single samples from the largest
/// client. Deterministic given the seed.
pub fn dirichlet_partition(
    dataset: &LabeledDataset,
    num_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<ClientPartition> {
    if num_clients == 0 {
        return Err(Error::Parameter("num_clients must be >= 1".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
    }
    if dataset.len() < num_clients {
        return Err(Error::Parameter(format!(
            "cannot split {} samples across {num_clients} clients",
            dataset.len()
        )));
    }

    let mut rng = derive_rng(seed, "dirichlet-partition", &[num_clients as u64]);
    let gamma = Gamma::new(alpha, 1.0)
        .map_err(|e| Error::Parameter(format!("invalid alpha for Dirichlet: {e}")))?;
    let mut assignments = vec![Vec::new(); num_clients];
    for class in 0..dataset.num_classes() {
        let mut indices: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels()[i] == class)
            .collect();
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut rng);
        // Dirichlet draw as normalized Gammas.
        let mut shares: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = shares.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            // All-zero Gamma draws can occur for tiny alpha; fall back to uniform.
            shares = vec![1.0 / num_clients as f64; num_clients];
        } else {
            for share in shares.iter_mut() {
                *share /= sum;
            }
        }
        let counts = proportional_counts(&shares, indices.len());
        let mut cursor = 0usize;
        for (client, &count) in counts.iter().enumerate() {
            assignments[client].extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }

    // Repair empty clients by moving one sample at a time from the largest.
    loop {
        let Some(empty) = assignments.iter().position(Vec::is_empty) else {
            break;
        };
        let donor = assignments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .expect("at least one client");
        if assignments[donor].len() <= 1 {
            return Err(Error::Parameter(format!(
                "cannot give every client a sample: {} samples, {num_clients} clients",
                dataset.len()
            )));
        }
        let moved = assignments[donor].pop().expect("donor nonempty");
        assignments[empty].push(moved);
    }

    for list in assignments.iter_mut() {
        list.sort_unstable();
    }
    ClientPartition::new(assignments, dataset.len())
}

/// Sample `count` distinct items from `pool` without replacement.
fn sample_without_replacement<R: Rng>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let at = rng.random_range(0..pool.len());
        picked.push(pool.swap_remove(at));
    }
    picked.sort_unstable();
    picked
}

/// Draw member samples per client and non-members from the test set.
pub fn build_attack_split(
    partition: &ClientPartition,
    per_client: usize,
    test_set: &LabeledDataset,
    non_member_count: usize,
    seed: u64,
) -> Result<AttackSplit> {
    let min_size = partition
        .client_sizes()
        .into_iter()
        .min()
        .expect("partition has at least one client");
    if per_client > min_size {
        return Err(Error::Parameter(format!(
            "per_client {per_client} exceeds the smallest client size {min_size}"
        )));
    }
    if non_member_count > test_set.len() {
        return Err(Error::Parameter(format!(
            "non_member_count {non_member_count} exceeds test set size {}",
            test_set.len()
        )));
    }

    let mut members = Vec::with_capacity(per_client * partition.num_clients());
    for (client, indices) in partition.assignments().iter().enumerate() {
        let mut rng = derive_rng(seed, "attack-members", &[client as u64]);
        for index in sample_without_replacement(indices, per_client, &mut rng) {
            members.push((client, index));
        }
    }
    let mut rng = derive_rng(seed, "attack-non-members", &[]);
    let all_test: Vec<usize> = (0..test_set.len()).collect();
    let non_members = sample_without_replacement(&all_test, non_member_count, &mut rng);
    Ok(AttackSplit::new(members, non_members))
}
