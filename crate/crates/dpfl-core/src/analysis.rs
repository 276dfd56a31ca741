//! Diagnostics computed from traces: noise-accumulation distance, update
//! direction consistency, growth-rate fits, LDA domain gap, and summary
//! tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::federation::{Strategy, TrainingTrace};
use crate::models::ParameterVector;
use crate::LabeledDataset;

/// Everything measured after one aggregation round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// Loop index t (0-based); the row describes the state after this
    /// round's update.
    pub round: usize,
    pub test_accuracy: f64,
    pub mean_loss: f64,
    /// Distance to the noise-free twin; present only on twin runs.
    pub kappa: Option<f64>,
    /// Cosine between this round's and the previous round's aggregated
    /// updates; absent at t = 0.
    pub update_cosine: Option<f64>,
    pub sigma: f64,
    pub lr: f64,
}

/// `kappa = ||theta_noisy - theta_noise_free||_2` over the full parameter
/// vector.
pub fn kappa(noisy: &ParameterVector, noise_free: &ParameterVector) -> Result<f64> {
    if noisy.layout() != noise_free.layout() {
        return Err(Error::Shape(
            "kappa needs parameter vectors with identical layouts".into(),
        ));
    }
    Ok(noisy
        .values()
        .iter()
        .zip(noise_free.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Cosine similarity between consecutive aggregated updates. Zero-norm
/// inputs score 0.
pub fn update_cosine(current: &[f64], previous: &[f64]) -> f64 {
    debug_assert_eq!(current.len(), previous.len());
    let dot: f64 = current.iter().zip(previous).map(|(a, b)| a * b).sum();
    let norm_current = current.iter().map(|a| a * a).sum::<f64>().sqrt();
    let norm_previous = previous.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm_current == 0.0 || norm_previous == 0.0 {
        log::debug!("update_cosine saw a zero-norm update; scoring 0");
        return 0.0;
    }
    (dot / (norm_current * norm_previous)).clamp(-1.0, 1.0)
}

/// Least-squares slope of `log kappa` against `log t`.
///
/// Points with nonpositive t or kappa are excluded; fewer than 10 usable
/// points is a fit error.
pub fn fit_growth(points: &[(f64, f64)]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, k)| *t > 0.0 && *k > 0.0)
        .map(|&(t, k)| (t.ln(), k.ln()))
        .collect();
    if usable.len() < 10 {
        return Err(Error::Fit(format!(
            "growth fit needs at least 10 positive points, have {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut covariance = 0.0;
    let mut variance = 0.0;
    for (x, y) in &usable {
        covariance += (x - mean_x) * (y - mean_y);
        variance += (x - mean_x) * (x - mean_x);
    }
    if variance == 0.0 {
        return Err(Error::Fit("all time points coincide".into()));
    }
    Ok(covariance / variance)
}

/// The (t, kappa_t) series of a twin run, with rounds counted from 1 so the
/// log-log fit is well defined.
pub fn kappa_series(trace: &TrainingTrace) -> Result<Vec<(f64, f64)>> {
    trace
        .metrics
        .iter()
        .map(|m| {
            m.kappa
                .map(|k| ((m.round + 1) as f64, k))
                .ok_or_else(|| Error::Fit("trace has no kappa series; rerun with twin_run".into()))
        })
        .collect()
}

/// Fitted growth exponent of a twin run's kappa series.
pub fn growth_exponent(trace: &TrainingTrace) -> Result<f64> {
    fit_growth(&kappa_series(trace)?)
}

/// Two-dimensional LDA projection of several datasets and the distance
/// between their projected centroids.
#[derive(Debug, Clone)]
pub struct DomainGap {
    /// One (n_k x 2) coordinate matrix per input dataset.
    pub projections: Vec<Array2<f64>>,
    /// Projected centroid per dataset.
    pub centroids: Vec<[f64; 2]>,
    /// Mean pairwise distance between projected centroids.
    pub gap_statistic: f64,
}

/// Fit LDA on the union of the datasets with dataset identity as the class
/// label, project onto the top two discriminant directions, and measure the
/// centroid separation.
///
/// The within-class scatter is regularized by `1e-6 * trace / dim` on the
/// diagonal before inversion.
pub fn lda_project(datasets: &[&LabeledDataset]) -> Result<DomainGap> {
    if datasets.len() < 2 {
        return Err(Error::Parameter("lda_project needs at least 2 datasets".into()));
    }
    let dim = datasets[0].dim();
    if datasets.iter().any(|d| d.dim() != dim) {
        return Err(Error::Shape("datasets must share feature dimensionality".into()));
    }

    let total: usize = datasets.iter().map(|d| d.len()).sum();
    let mut global_mean = DVector::<f64>::zeros(dim);
    let mut class_means = Vec::with_capacity(datasets.len());
    for dataset in datasets {
        let mut mean = DVector::<f64>::zeros(dim);
        for row in dataset.features().rows() {
            for (slot, &value) in mean.iter_mut().zip(row.iter()) {
                *slot += value;
            }
        }
        mean /= dataset.len() as f64;
        global_mean += &mean * (dataset.len() as f64 / total as f64);
        class_means.push(mean);
    }

    let mut within = DMatrix::<f64>::zeros(dim, dim);
    let mut between = DMatrix::<f64>::zeros(dim, dim);
    for (dataset, mean) in datasets.iter().zip(&class_means) {
        let mut centered = DVector::<f64>::zeros(dim);
        for row in dataset.features().rows() {
            for (slot, (&value, center)) in centered.iter_mut().zip(row.iter().zip(mean.iter())) {
                *slot = value - center;
            }
            within.ger(1.0, &centered, &centered, 1.0);
        }
        let offset = mean - &global_mean;
        between.ger(dataset.len() as f64, &offset, &offset, 1.0);
    }
    symmetrize(&mut within);
    symmetrize(&mut between);

    let ridge = 1e-6 * within.trace() / dim as f64;
    for i in 0..dim {
        within[(i, i)] += ridge;
    }

    let cholesky = within
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric("within-class scatter is singular despite regularization".into()))?;
    let lower = cholesky.l();
    // Whitened between-class scatter M = L^-1 S_B L^-T, solved triangularly.
    let half = lower
        .solve_lower_triangular(&between)
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    let mut whitened = lower
        .solve_lower_triangular(&half.transpose())
        .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
    symmetrize(&mut whitened);

    let eigen = SymmetricEigen::new(whitened);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // Map the top-2 whitened eigenvectors back: w = L^-T v.
    let mut axes = DMatrix::<f64>::zeros(dim, 2);
    let upper = lower.transpose();
    for (column, &index) in order.iter().take(2).enumerate() {
        let v = eigen.eigenvectors.column(index).into_owned();
        let w = upper
            .solve_upper_triangular(&v)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        axes.set_column(column, &w);
    }

    let mut projections = Vec::with_capacity(datasets.len());
    let mut centroids = Vec::with_capacity(datasets.len());
    for dataset in datasets {
        let mut projected = Array2::zeros((dataset.len(), 2));
        let mut centroid = [0.0f64; 2];
        for (row_index, row) in dataset.features().rows().into_iter().enumerate() {
            for axis in 0..2 {
                let coordinate: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(feature, &value)| value * axes[(feature, axis)])
                    .sum();
                projected[[row_index, axis]] = coordinate;
                centroid[axis] += coordinate;
            }
        }
        centroid[0] /= dataset.len() as f64;
        centroid[1] /= dataset.len() as f64;
        projections.push(projected);
        centroids.push(centroid);
    }

    let mut gap = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let dx = centroids[i][0] - centroids[j][0];
            let dy = centroids[i][1] - centroids[j][1];
            gap += (dx * dx + dy * dy).sqrt();
            pairs += 1;
        }
    }
    Ok(DomainGap {
        projections,
        centroids,
        gap_statistic: gap / pairs as f64,
    })
}

fn symmetrize(matrix: &mut DMatrix<f64>) {
    let n = matrix.nrows();
    for i in 0..n {
        for j in 0..i {
            let mean = 0.5 * (matrix[(i, j)] + matrix[(j, i)]);
            matrix[(i, j)] = mean;
            matrix[(j, i)] = mean;
        }
    }
}

/// `100 * (value - baseline) / baseline`, in percent.
pub fn relative_increase(baseline: f64, value: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::Parameter(format!(
            "relative increase needs a positive baseline, got {baseline}"
        )));
    }
    Ok(100.0 * (value - baseline) / baseline)
}

const METRICS_SCHEMA: &str = "# schema: dpfl.metrics.v1";
const SUMMARY_SCHEMA: &str = "# schema: dpfl.summary.v1";

fn push_optional(line: &mut String, value: Option<f64>) {
    match value {
        Some(v) => {
            let _ = write!(line, ",{v}");
        }
        None => line.push(','),
    }
}

/// Render per-round metrics as CSV (one row per round, schema-versioned).
pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::new();
    out.push_str(METRICS_SCHEMA);
    out.push('\n');
    out.push_str("round,test_accuracy,mean_loss,kappa,update_cosine,sigma,lr\n");
    for row in rows {
        let mut line = format!("{},{},{}", row.round, row.test_accuracy, row.mean_loss);
        push_optional(&mut line, row.kappa);
        push_optional(&mut line, row.update_cosine);
        let _ = write!(line, ",{},{}", row.sigma, row.lr);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// One experiment's result joined with its sweep coordinates.
#[derive(Debug, Clone)]
pub struct RunSummary {
    /// Sweep axes shared across strategies and seeds (epsilon, T, N, ...).
    pub axes: BTreeMap<String, String>,
    pub strategy: Strategy,
    pub seed: u64,
    pub best_accuracy: f64,
    pub best_auc: Option<f64>,
    pub best_asr: Option<f64>,
}

/// Seed-averaged statistics for one strategy within one axes group.
#[derive(Debug, Clone)]
pub struct StrategyStats {
    pub strategy: Strategy,
    pub seeds: usize,
    pub mean_best_accuracy: f64,
    pub mean_best_auc: Option<f64>,
    pub mean_best_asr: Option<f64>,
}

/// All strategies compared at one sweep coordinate.
#[derive(Debug, Clone)]
pub struct GroupSummary {
    pub axes: BTreeMap<String, String>,
    pub per_strategy: Vec<StrategyStats>,
    /// mean best accuracy HT - FT.
    pub delta_ht_ft: Option<f64>,
    /// Seeds where HT beat FT strictly, out of seeds with both present.
    pub ht_gt_ft: Option<(usize, usize)>,
    /// Relative accuracy increase vs ST, percent, for FT and HT.
    pub rel_accuracy_vs_st: BTreeMap<String, f64>,
    pub rel_auc_vs_st: BTreeMap<String, f64>,
    pub rel_asr_vs_st: BTreeMap<String, f64>,
}

/// A whole sweep reduced to per-coordinate strategy comparisons.
#[derive(Debug, Clone)]
pub struct SummaryTable {
    pub axis_names: Vec<String>,
    pub groups: Vec<GroupSummary>,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn mean_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.len() == values.len() && !present.is_empty() {
        Some(mean(&present))
    } else {
        None
    }
}

/// Collapse per-run results into per-coordinate strategy comparisons: best
/// accuracy per strategy, the HT-FT gap, relative increases over ST, and
/// attack bests.
pub fn summarize(rows: &[RunSummary]) -> Result<SummaryTable> {
    let Some(first) = rows.first() else {
        return Err(Error::Aggregation("no runs to summarize".into()));
    };
    let axis_names: Vec<String> = first.axes.keys().cloned().collect();
    for row in rows {
        let names: Vec<String> = row.axes.keys().cloned().collect();
        if names != axis_names {
            return Err(Error::Aggregation(format!(
                "runs disagree on sweep axes: {axis_names:?} vs {names:?}"
            )));
        }
    }

    let mut grouped: BTreeMap<Vec<(String, String)>, Vec<&RunSummary>> = BTreeMap::new();
    for row in rows {
        let key: Vec<(String, String)> =
            row.axes.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        grouped.entry(key).or_default().push(row);
    }

    let mut groups = Vec::with_capacity(grouped.len());
    for (key, members) in grouped {
        let axes: BTreeMap<String, String> = key.into_iter().collect();
        let mut per_strategy = Vec::new();
        for strategy in [Strategy::St, Strategy::Ft, Strategy::Ht] {
            let of_strategy: Vec<&&RunSummary> =
                members.iter().filter(|r| r.strategy == strategy).collect();
            if of_strategy.is_empty() {
                continue;
            }
            let accuracies: Vec<f64> = of_strategy.iter().map(|r| r.best_accuracy).collect();
            let aucs: Vec<Option<f64>> = of_strategy.iter().map(|r| r.best_auc).collect();
            let asrs: Vec<Option<f64>> = of_strategy.iter().map(|r| r.best_asr).collect();
            per_strategy.push(StrategyStats {
                strategy,
                seeds: of_strategy.len(),
                mean_best_accuracy: mean(&accuracies),
                mean_best_auc: mean_present(&aucs),
                mean_best_asr: mean_present(&asrs),
            });
        }

        let stat_of = |strategy: Strategy| per_strategy.iter().find(|s| s.strategy == strategy);
        let delta_ht_ft = match (stat_of(Strategy::Ht), stat_of(Strategy::Ft)) {
            (Some(ht), Some(ft)) => Some(ht.mean_best_accuracy - ft.mean_best_accuracy),
            _ => None,
        };

        // Pair HT and FT runs by seed for the per-seed ordering count.
        let mut ht_gt_ft = None;
        if stat_of(Strategy::Ht).is_some() && stat_of(Strategy::Ft).is_some() {
            let mut wins = 0usize;
            let mut comparable = 0usize;
            for ht_run in members.iter().filter(|r| r.strategy == Strategy::Ht) {
                if let Some(ft_run) = members
                    .iter()
                    .find(|r| r.strategy == Strategy::Ft && r.seed == ht_run.seed)
                {
                    comparable += 1;
                    if ht_run.best_accuracy > ft_run.best_accuracy {
                        wins += 1;
                    }
                }
            }
            ht_gt_ft = Some((wins, comparable));
        }

        let mut rel_accuracy_vs_st = BTreeMap::new();
        let mut rel_auc_vs_st = BTreeMap::new();
        let mut rel_asr_vs_st = BTreeMap::new();
        if let Some(st) = stat_of(Strategy::St) {
            for stats in &per_strategy {
                if stats.strategy == Strategy::St {
                    continue;
                }
                let name = stats.strategy.to_string();
                if st.mean_best_accuracy > 0.0 {
                    rel_accuracy_vs_st.insert(
                        name.clone(),
                        relative_increase(st.mean_best_accuracy, stats.mean_best_accuracy)?,
                    );
                }
                if let (Some(base), Some(value)) = (st.mean_best_auc, stats.mean_best_auc) {
                    if base > 0.0 {
                        rel_auc_vs_st.insert(name.clone(), relative_increase(base, value)?);
                    }
                }
                if let (Some(base), Some(value)) = (st.mean_best_asr, stats.mean_best_asr) {
                    if base > 0.0 {
                        rel_asr_vs_st.insert(name.clone(), relative_increase(base, value)?);
                    }
                }
            }
        }

        groups.push(GroupSummary {
            axes,
            per_strategy,
            delta_ht_ft,
            ht_gt_ft,
            rel_accuracy_vs_st,
            rel_auc_vs_st,
            rel_asr_vs_st,
        });
    }

    Ok(SummaryTable { axis_names, groups })
}

/// Render a summary table as schema-versioned CSV.
pub fn summary_csv(table: &SummaryTable) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_SCHEMA);
    out.push('\n');
    for name in &table.axis_names {
        let _ = write!(out, "{name},");
    }
    out.push_str(
        "st_acc,ft_acc,ht_acc,delta_ht_ft,ht_gt_ft_wins,ht_gt_ft_seeds,\
         ft_acc_incr_pct,ht_acc_incr_pct,st_auc,ft_auc,ht_auc,st_asr,ft_asr,ht_asr,\
         ft_auc_incr_pct,ht_auc_incr_pct,ft_asr_incr_pct,ht_asr_incr_pct\n",
    );
    for group in &table.groups {
        let mut line = String::new();
        for name in &table.axis_names {
            let _ = write!(line, "{},", group.axes.get(name).map(String::as_str).unwrap_or(""));
        }
        let stat_of = |strategy: Strategy| group.per_strategy.iter().find(|s| s.strategy == strategy);
        let mut cells: Vec<Option<f64>> = vec![
            stat_of(Strategy::St).map(|s| s.mean_best_accuracy),
            stat_of(Strategy::Ft).map(|s| s.mean_best_accuracy),
            stat_of(Strategy::Ht).map(|s| s.mean_best_accuracy),
            group.delta_ht_ft,
            group.ht_gt_ft.map(|(w, _)| w as f64),
            group.ht_gt_ft.map(|(_, n)| n as f64),
            group.rel_accuracy_vs_st.get("FT").copied(),
            group.rel_accuracy_vs_st.get("HT").copied(),
            stat_of(Strategy::St).and_then(|s| s.mean_best_auc),
            stat_of(Strategy::Ft).and_then(|s| s.mean_best_auc),
            stat_of(Strategy::Ht).and_then(|s| s.mean_best_auc),
            stat_of(Strategy::St).and_then(|s| s.mean_best_asr),
            stat_of(Strategy::Ft).and_then(|s| s.mean_best_asr),
            stat_of(Strategy::Ht).and_then(|s| s.mean_best_asr),
        ];
        cells.push(group.rel_auc_vs_st.get("FT").copied());
        cells.push(group.rel_auc_vs_st.get("HT").copied());
        cells.push(group.rel_asr_vs_st.get("FT").copied());
        cells.push(group.rel_asr_vs_st.get("HT").copied());
        let rendered: Vec<String> = cells
            .iter()
            .map(|cell| cell.map(|v| v.to_string()).unwrap_or_default())
            .collect();
        line.push_str(&rendered.join(","));
        out.push_str(&line);
        out.push('\n');
    }
    out
}
