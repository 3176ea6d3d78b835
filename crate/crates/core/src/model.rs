//! Regression data, grouping, hyperparameters and the exponential-family
//! algebra (Bernoulli and Gaussian products and quotients) used by the
//! EP engine.
//!
//! Bernoulli parameters are carried as logits everywhere; probabilities only
//! appear at the API boundary ([`FitResult`]).

use std::collections::HashMap;
use std::hash::Hash;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CAP: f64 = 700.0;

pub fn clamp_logit(r: f64) -> f64 {
    r.clamp(-LOGIT_CAP, LOGIT_CAP)
}

/// `log(p / (1 - p))`.
pub fn logit(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Inverse of [`logit`], evaluated on the side that cannot overflow.
pub fn sigmoid(r: f64) -> f64 {
    if r >= 0.0 {
        1.0 / (1.0 + (-r).exp())
    } else {
        let e = r.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combine {
    Product,
    Quotient,
}

/// Product or quotient of two Bernoulli densities in logit space.
pub fn bern_combine_logit(r1: f64, r2: f64, mode: Combine) -> f64 {
    match mode {
        Combine::Product => r1 + r2,
        Combine::Quotient => r1 - r2,
    }
}

/// Product or quotient of two univariate Gaussian densities, returned as
/// `(mean, variance)`. A quotient may produce a negative variance; callers
/// decide what to do with it.
pub fn gauss_combine(m1: f64, v1: f64, m2: f64, v2: f64, mode: Combine) -> Result<(f64, f64)> {
    if v1 == 0.0 || v2 == 0.0 || !v1.is_finite() || !v2.is_finite() {
        return Err(Error::param("variance", "must be finite and nonzero"));
    }
    let (prec, shift) = match mode {
        Combine::Product => {
            if v1 < 0.0 || v2 < 0.0 {
                return Err(Error::param("variance", "product requires positive variances"));
            }
            (1.0 / v1 + 1.0 / v2, m1 / v1 + m2 / v2)
        }
        Combine::Quotient => (1.0 / v1 - 1.0 / v2, m1 / v1 - m2 / v2),
    };
    if prec == 0.0 {
        return Err(Error::DegenerateCavity);
    }
    let v = 1.0 / prec;
    Ok((v * shift, v))
}

/// Assignment of each feature to one of `n_groups` groups (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    assignments: Vec<usize>,
    n_groups: usize,
}

impl Grouping {
    /// Build from explicit 0-based indices. Groups without members are
    /// allowed; they only carry their prior.
    pub fn new(assignments: Vec<usize>, n_groups: usize) -> Result<Self> {
        if let Some(&bad) = assignments.iter().find(|&&g| g >= n_groups) {
            return Err(Error::InvalidGrouping(format!(
                "group index {bad} out of range for {n_groups} groups"
            )));
        }
        if n_groups == 0 && !assignments.is_empty() {
            return Err(Error::InvalidGrouping("no groups".into()));
        }
        Ok(Self {
            assignments,
            n_groups,
        })
    }

    /// Each feature in its own group.
    pub fn identity(n: usize) -> Self {
        Self {
            assignments: (0..n).collect(),
            n_groups: n,
        }
    }

    /// Remap arbitrary labels onto contiguous indices in order of first
    /// appearance. Returns the grouping and the label of each group index.
    pub fn from_labels<L: Clone + Eq + Hash>(labels: &[L]) -> (Self, Vec<L>) {
        let mut index: HashMap<&L, usize> = HashMap::new();
        let mut names = Vec::new();
        let assignments = labels
            .iter()
            .map(|l| {
                *index.entry(l).or_insert_with(|| {
                    names.push(l.clone());
                    names.len() - 1
                })
            })
            .collect();
        (
            Self {
                assignments,
                n_groups: names.len(),
            },
            names,
        )
    }

    /// Restrict to the given feature subset (in that order) and drop groups
    /// left without members.
    pub fn restrict(&self, features: &[usize]) -> Self {
        let labels: Vec<usize> = features.iter().map(|&f| self.assignments[f]).collect();
        Self::from_labels(&labels).0
    }

    pub fn n_features(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn group_of(&self, feature: usize) -> usize {
        self.assignments[feature]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn is_injective(&self) -> bool {
        self.n_groups == self.assignments.len() && self.assignments.iter().enumerate().all(|(i, &g)| i == g)
    }

    /// Feature indices of each group.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups];
        for (n, &g) in self.assignments.iter().enumerate() {
            out[g].push(n);
        }
        out
    }
}

/// Design matrix and response, optionally centered (and scaled) with the
/// transformation remembered for prediction on the original scale.
#[derive(Debug, Clone)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
    x_means: DVector<f64>,
    x_scales: DVector<f64>,
    y_mean: f64,
}

impl RegressionData {
    /// Use `x` and `y` exactly as given.
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response"));
        }
        let n = x.ncols();
        Ok(Self {
            x,
            y,
            x_means: DVector::zeros(n),
            x_scales: DVector::from_element(n, 1.0),
            y_mean: 0.0,
        })
    }

    /// Center `y` and every column of `x`; with `standardize`, also scale
    /// columns to unit sample standard deviation (constant columns are left
    /// unscaled).
    pub fn centered(x: DMatrix<f64>, y: DVector<f64>, standardize: bool) -> Result<Self> {
        let mut data = Self::new(x, y)?;
        let m = data.x.nrows();
        if m == 0 {
            return Ok(data);
        }
        let y_mean = data.y.mean();
        data.y.add_scalar_mut(-y_mean);
        data.y_mean = y_mean;
        for j in 0..data.x.ncols() {
            let mut col = data.x.column_mut(j);
            let mean = col.mean();
            col.add_scalar_mut(-mean);
            data.x_means[j] = mean;
            if standardize && m > 1 {
                let sd = (col.norm_squared() / (m - 1) as f64).sqrt();
                if sd > 0.0 {
                    col /= sd;
                    data.x_scales[j] = sd;
                }
            }
        }
        Ok(data)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n_obs(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn x_means(&self) -> &DVector<f64> {
        &self.x_means
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Coefficients on the scale of the raw input columns.
    pub fn unscale_coefficients(&self, beta: &DVector<f64>) -> DVector<f64> {
        beta.component_div(&self.x_scales)
    }

    /// Predict raw-scale responses for raw-scale rows `x_new`.
    pub fn predict(&self, beta: &DVector<f64>, x_new: &DMatrix<f64>) -> DVector<f64> {
        let b = self.unscale_coefficients(beta);
        let offset = self.y_mean - self.x_means.dot(&b);
        (x_new * b).add_scalar(offset)
    }
}

/// A prior probability that is either shared or given per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prior {
    Constant(f64),
    PerItem(Vec<f64>),
}

impl Prior {
    pub fn get(&self, i: usize) -> f64 {
        match self {
            Prior::Constant(p) => *p,
            Prior::PerItem(v) => v[i],
        }
    }

    pub fn validate(&self, len: usize, name: &'static str) -> Result<()> {
        let check = |p: f64| {
            if p > 0.0 && p < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidProbability(p))
            }
        };
        match self {
            Prior::Constant(p) => check(*p),
            Prior::PerItem(v) => {
                if v.len() != len {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} has {} entries, expected {len}",
                        v.len()
                    )));
                }
                v.iter().try_for_each(|&p| check(p))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Noise standard deviation, fixed during fitting.
    pub sigma0: f64,
    /// Slab standard deviation.
    pub sigma_slab: f64,
    /// Prior feature inclusion probabilities.
    pub p0: Prior,
    /// Prior group inclusion probabilities.
    pub pi0: Prior,
    /// Initial damping weight on new factor parameters.
    pub alpha0: f64,
    /// Damping decays as `alpha <- alpha * (1 - alpha_decay)` after each sweep.
    pub alpha_decay: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Variance substituted for a non-positive factor-2 variance.
    pub v_replace: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            sigma0: 1.0,
            sigma_slab: 5.0,
            p0: Prior::Constant(0.5),
            pi0: Prior::Constant(0.5),
            alpha0: 0.9,
            alpha_decay: 0.01,
            tol: 1e-5,
            max_iter: 1000,
            v_replace: 100.0,
        }
    }
}

impl Hyperparams {
    /// Looser settings used for the per-node regressions of network
    /// reconstruction.
    pub fn network_preset() -> Self {
        Self {
            sigma_slab: 1.0,
            tol: 1e-3,
            max_iter: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_features: usize, n_groups: usize) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::param("sigma0", "must be positive and finite"));
        }
        if !(self.sigma_slab > 0.0 && self.sigma_slab.is_finite()) {
            return Err(Error::param("sigma_slab", "must be positive and finite"));
        }
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(Error::param("alpha0", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.alpha_decay) {
            return Err(Error::param("alpha_decay", "must lie in [0, 1]"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::param("tol", "must be non-negative"));
        }
        if !(self.v_replace > 0.0 && self.v_replace.is_finite()) {
            return Err(Error::param("v_replace", "must be positive and finite"));
        }
        self.p0.validate(n_features, "p0")?;
        self.pi0.validate(n_groups, "pi0")
    }
}

/// Posterior summary returned by a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub mean: Vec<f64>,
    pub feature_prob: Vec<f64>,
    pub group_prob: Vec<f64>,
    pub feature_logit: Vec<f64>,
    pub group_logit: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_delta: f64,
    /// Factor-2 updates skipped because the cavity variance was not positive
    /// or the update was degenerate, summed over sweeps.
    pub skipped_updates: usize,
    /// Factor-2 variances replaced by `v_replace`, summed over sweeps.
    pub replaced_variances: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logit_sigmoid_basics() {
        assert_eq!(logit(0.5).unwrap(), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_abs_diff_eq!(sigmoid(logit(0.8).unwrap()), 0.8, epsilon = 1e-12);
        assert!(logit(0.0).is_err());
        assert!(logit(1.0).is_err());
        assert!(logit(f64::NAN).is_err());
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-700.0) > 0.0);
    }

    #[test]
    fn bernoulli_product_matches_probability_rule() {
        assert_eq!(bern_combine_logit(0.0, 0.0, Combine::Product), 0.0);
        assert_eq!(bern_combine_logit(1.3, 0.0, Combine::Product), 1.3);
        let (p1, p2) = (0.8, 0.6);
        let direct = p1 * p2 / (p1 * p2 + (1.0 - p1) * (1.0 - p2));
        assert_abs_diff_eq!(direct, 6.0 / 7.0, epsilon = 1e-15);
        let r = bern_combine_logit(logit(p1).unwrap(), logit(p2).unwrap(), Combine::Product);
        assert_abs_diff_eq!(r, logit(6.0 / 7.0).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn gaussian_product_examples() {
        assert_eq!(gauss_combine(0.0, 1.0, 0.0, 1.0, Combine::Product).unwrap(), (0.0, 0.5));
        let (m, v) = gauss_combine(1.0, 2.0, 3.0, 1.0, Combine::Product).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m, 7.0 / 3.0, epsilon = 1e-15);
        let (pm, pv) = gauss_combine(0.3, 1.7, -2.0, 0.4, Combine::Product).unwrap();
        let (qm, qv) = gauss_combine(pm, pv, -2.0, 0.4, Combine::Quotient).unwrap();
        assert_abs_diff_eq!(qm, 0.3, epsilon = 1e-10);
        assert_abs_diff_eq!(qv, 1.7, epsilon = 1e-10);
    }

    #[test]
    fn gaussian_quotient_edge_cases() {
        assert!(matches!(
            gauss_combine(0.0, 2.0, 1.0, 2.0, Combine::Quotient),
            Err(Error::DegenerateCavity)
        ));
        let (_, v) = gauss_combine(0.0, 2.0, 0.0, 1.0, Combine::Quotient).unwrap();
        assert!(v < 0.0);
        assert!(gauss_combine(0.0, -1.0, 0.0, 1.0, Combine::Product).is_err());
        assert!(gauss_combine(0.0, 0.0, 0.0, 1.0, Combine::Product).is_err());
    }

    #[test]
    fn grouping_construction() {
        let g = Grouping::identity(4);
        assert_eq!(g.n_groups(), 4);
        assert!(g.is_injective());
        assert!(g.members().iter().all(|m| m.len() == 1));

        let (g, names) = Grouping::from_labels(&[7, 3, 7, 9]);
        assert_eq!(g.assignments(), &[0, 1, 0, 2]);
        assert_eq!(names, vec![7, 3, 9]);
        assert!(!g.is_injective());

        assert!(Grouping::new(vec![0, 3], 3).is_err());
        let sparse = Grouping::new(vec![0, 2], 3).unwrap();
        assert_eq!(sparse.members()[1].len(), 0);
        assert_eq!(sparse.restrict(&[1]).assignments(), &[0]);
    }

    #[test]
    fn data_validation() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(RegressionData::new(x.clone(), DVector::zeros(2)).is_err());
        let mut bad = x.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(matches!(
            RegressionData::new(bad, DVector::zeros(3)),
            Err(Error::NonFinite(_))
        ));
        let d = RegressionData::centered(
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 9.0]),
            DVector::from_vec(vec![1.0, 2.0, 6.0]),
            false,
        )
        .unwrap();
        assert_abs_diff_eq!(d.y().sum(), 0.0, epsilon = 1e-12);
        for j in 0..2 {
            assert_abs_diff_eq!(d.x().column(j).sum(), 0.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(d.y_mean(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn standardize_scales_columns() {
        let d = RegressionData::centered(
            DMatrix::from_row_slice(4, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]),
            DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]),
            true,
        )
        .unwrap();
        let col = d.x().column(0);
        assert_abs_diff_eq!((col.norm_squared() / 3.0).sqrt(), 1.0, epsilon = 1e-12);
        // constant column stays zero and unscaled
        assert!(d.x().column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hyperparam_defaults_and_validation() {
        let h = Hyperparams::default();
        assert_eq!(h.alpha0, 0.9);
        assert_eq!(h.alpha_decay, 0.01);
        assert_eq!(h.v_replace, 100.0);
        assert_eq!(h.tol, 1e-5);
        assert_eq!(h.max_iter, 1000);
        assert_eq!(h.p0, Prior::Constant(0.5));
        assert!(h.validate(3, 2).is_ok());
        let n = Hyperparams::network_preset();
        assert_eq!((n.tol, n.max_iter), (1e-3, 100));
        let bad = Hyperparams {
            p0: Prior::PerItem(vec![0.5, 0.5]),
            ..Hyperparams::default()
        };
        assert!(bad.validate(3, 2).is_err());
        let bad = Hyperparams {
            sigma0: 0.0,
            ..Hyperparams::default()
        };
        assert!(bad.validate(3, 2).is_err());
    }

    #[test]
    fn stable_helpers() {
        assert_abs_diff_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_abs_diff_eq!(log_add_exp(0.0, 0.0), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(log_add_exp(f64::NEG_INFINITY, 3.0), 3.0);
    }
}
