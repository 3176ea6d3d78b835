//! Ranking metrics, cross-validated probability cutoffs and replicate
//! summaries.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep;
use crate::error::{Error, Result};
use crate::model::{logit, FitResult, Grouping, Hyperparams, RegressionData};

/// Scores for every candidate together with its gold-standard label.
/// Candidates the predictor did not rank should carry `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPredictions {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl RankedPredictions {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores"));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn n_star(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Candidates scoring at least this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// Starts at the empty prediction set (`threshold = +inf`, precision 1)
    /// and adds one point per distinct score.
    pub points: Vec<CurvePoint>,
    pub auroc: f64,
    pub aupr: f64,
    /// All candidates share one score.
    pub degenerate: bool,
}

/// ROC and PR curves with tied scores handled as one threshold step.
///
/// AUROC is the trapezoidal area; AUPR sums recall increments times the
/// precision reached at the end of each step.
pub fn roc_pr(preds: &RankedPredictions) -> Result<Curves> {
    let k = preds.k();
    let n_star = preds.n_star();
    if k == 0 {
        return Err(Error::param("labels", "need at least one positive"));
    }
    if n_star <= k {
        return Err(Error::param("labels", "need at least one negative"));
    }
    let negatives = (n_star - k) as f64;
    let mut order: Vec<usize> = (0..n_star).collect();
    order.sort_by(|&a, &b| preds.scores[b].total_cmp(&preds.scores[a]));

    let mut points = vec![CurvePoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
        precision: 1.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auroc = 0.0;
    let mut aupr = 0.0;
    let mut i = 0;
    while i < n_star {
        let s = preds.scores[order[i]];
        while i < n_star && preds.scores[order[i]] == s {
            if preds.labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let prev = *points.last().expect("curve starts non-empty");
        let point = CurvePoint {
            threshold: s,
            fpr: fp as f64 / negatives,
            tpr: tp as f64 / k as f64,
            precision: tp as f64 / (tp + fp) as f64,
        };
        auroc += (point.fpr - prev.fpr) * (point.tpr + prev.tpr) / 2.0;
        aupr += (point.tpr - prev.tpr) * point.precision;
        points.push(point);
    }
    let degenerate = points.len() == 2;
    Ok(Curves {
        points,
        auroc,
        aupr,
        degenerate,
    })
}

pub const CUTOFF_GRID_SIZE: usize = 101;

/// `{0, 0.01, ..., 1}`.
pub fn cutoff_grid() -> Vec<f64> {
    (0..CUTOFF_GRID_SIZE).map(|i| i as f64 / (CUTOFF_GRID_SIZE - 1) as f64).collect()
}

/// Posterior means with features below probability `cutoff` set to zero.
///
/// The comparison is done on the logit scale so that `cutoff = 1` always
/// gives the null model and `cutoff = 0` keeps every feature.
pub fn thresholded_coefficients(fit: &FitResult, cutoff: f64) -> DVector<f64> {
    let bound = if cutoff <= 0.0 {
        f64::NEG_INFINITY
    } else if cutoff >= 1.0 {
        f64::INFINITY
    } else {
        logit(cutoff).expect("cutoff inside (0, 1)")
    };
    DVector::from_iterator(
        fit.mean.len(),
        fit.mean
            .iter()
            .zip(&fit.feature_logit)
            .map(|(&m, &r)| if r >= bound { m } else { 0.0 }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvPoint {
    pub cutoff: f64,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub cutoff: f64,
    pub curve: Vec<CvPoint>,
    /// Folds whose centered test response was identically zero.
    pub skipped_folds: Vec<usize>,
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// Fold boundaries for `m` rows split into `folds` contiguous blocks whose
/// sizes differ by at most one.
fn fold_ranges(m: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    let base = m / folds;
    let extra = m % folds;
    let mut start = 0;
    (0..folds)
        .map(|f| {
            let len = base + usize::from(f < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

fn fold_errors(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
    test: std::ops::Range<usize>,
    grid: &[f64],
) -> Result<Option<Vec<f64>>> {
    let m = data.n_obs();
    let train: Vec<usize> = (0..m).filter(|i| !test.contains(i)).collect();
    let test: Vec<usize> = test.collect();
    let y_all = data.y();
    let train_y = DVector::from_iterator(train.len(), train.iter().map(|&i| y_all[i]));
    let train_data = RegressionData::centered(select_rows(data.x(), &train), train_y, false)?;
    let fit = ep::fit(&train_data, grouping, hyper)?;

    let mut x_test = select_rows(data.x(), &test);
    for j in 0..x_test.ncols() {
        x_test.column_mut(j).add_scalar_mut(-train_data.x_means()[j]);
    }
    let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| y_all[i] - train_data.y_mean()));
    let denom = y_test.norm_squared();
    if denom == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        grid.iter()
            .map(|&c| (&y_test - &x_test * thresholded_coefficients(&fit, c)).norm_squared() / denom)
            .collect(),
    ))
}

/// Probability cutoff chosen by `folds`-fold cross-validation with the
/// one-standard-error rule. Folds are contiguous row blocks, each training
/// part is re-centered, and test rows are centered with the training means.
pub fn cv_cutoff_1se(data: &RegressionData, grouping: &Grouping, hyper: &Hyperparams, folds: usize) -> Result<CvResult> {
    if folds < 2 || folds > data.n_obs() {
        return Err(Error::param("folds", format!("need 2 <= folds <= {}", data.n_obs())));
    }
    let grid = cutoff_grid();
    let per_fold = fold_ranges(data.n_obs(), folds)
        .into_par_iter()
        .map(|r| fold_errors(data, grouping, hyper, r, &grid))
        .collect::<Result<Vec<_>>>()?;

    let skipped_folds: Vec<usize> = (0..folds).filter(|&f| per_fold[f].is_none()).collect();
    let used: Vec<&Vec<f64>> = per_fold.iter().flatten().collect();
    if used.len() < 2 {
        return Err(Error::Undefined("cross-validation error with fewer than two usable folds"));
    }
    let n = used.len() as f64;
    let curve: Vec<CvPoint> = grid
        .iter()
        .enumerate()
        .map(|(ci, &cutoff)| {
            let mean = used.iter().map(|e| e[ci]).sum::<f64>() / n;
            let var = used.iter().map(|e| (e[ci] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            CvPoint {
                cutoff,
                mean_error: mean,
                std_error: var.sqrt() / n.sqrt(),
            }
        })
        .collect();
    let best = curve
        .iter()
        .min_by(|a, b| a.mean_error.total_cmp(&b.mean_error))
        .expect("grid is non-empty");
    let bound = best.mean_error + best.std_error;
    let cutoff = curve
        .iter()
        .rev()
        .find(|p| p.mean_error <= bound)
        .expect("the minimum satisfies the bound")
        .cutoff;
    Ok(CvResult {
        cutoff,
        curve,
        skipped_folds,
    })
}

/// Named metric values for one replicate of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMetrics {
    pub method: String,
    pub replicate: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub method: String,
    pub metric: String,
    /// Replicates with a finite value.
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// One summary row per (method, metric), sorted by method then metric.
/// Non-finite values (undefined metrics) are left out of the quantiles.
pub fn aggregate_replicates(results: &[ReplicateMetrics]) -> Vec<MetricSummary> {
    let mut buckets: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    for r in results {
        for (name, &v) in &r.metrics {
            let b = buckets.entry((r.method.as_str(), name.as_str())).or_default();
            if v.is_finite() {
                b.push(v);
            }
        }
    }
    buckets
        .into_iter()
        .map(|((method, metric), mut v)| {
            v.sort_by(f64::total_cmp);
            let (q1, median, q3) = if v.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75))
            };
            MetricSummary {
                method: method.to_string(),
                metric: metric.to_string(),
                n: v.len(),
                q1,
                median,
                q3,
            }
        })
        .collect()
}
