//! Expectation propagation for the sparse-group spike-and-slab model.
//!
//! The approximation keeps four factors: the exact Gaussian likelihood
//! (stored as `X^T X / s0^2` and `X^T y / s0^2`), a per-feature
//! Gaussian-times-Bernoulli factor for the slab, a per-feature Bernoulli pair
//! for the within-group prior, and the exact group prior. Only factors 2 and
//! 3 are refined. Each sweep computes every factor-2 cavity from the Q at the
//! start of the sweep, applies the damped updates, refreshes the Gaussian
//! part of Q once, then does the same for factor 3 on the logits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    clamp_logit, log_add_exp, logit, sigmoid, softplus, FitResult, Grouping, Hyperparams,
    RegressionData,
};

/// Natural parameters of the approximating factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorState {
    /// `X^T X / s0^2`
    pub v1inv: DMatrix<f64>,
    /// `X^T y / s0^2`
    pub v1inv_m1: DVector<f64>,
    pub v2: DVector<f64>,
    pub m2: DVector<f64>,
    pub r2: Vec<f64>,
    pub r3: Vec<f64>,
    pub rho3: Vec<f64>,
    pub rho4: Vec<f64>,
}

/// Parameters of the approximate posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorQ {
    pub m: DVector<f64>,
    pub v: DMatrix<f64>,
    pub r: Vec<f64>,
    pub rho: Vec<f64>,
}

/// Marginal of Q for one feature with its factor-2 term divided out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityF2 {
    pub v: f64,
    pub m: f64,
    pub r: f64,
}

impl CavityF2 {
    /// A non-positive (or non-finite) cavity variance means the feature is
    /// skipped for this sweep.
    pub fn is_usable(&self) -> bool {
        self.v > 0.0 && self.v.is_finite() && self.m.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityF3 {
    pub r: f64,
    pub rho: f64,
}

/// Per-feature factor-2 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F2Params {
    pub v2: f64,
    pub m2: f64,
    pub r2: f64,
}

/// Per-feature factor-3 parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F3Params {
    pub r3: f64,
    pub rho3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F2Update {
    pub params: F2Params,
    /// The raw variance was non-positive and `v_replace` was substituted.
    pub replaced: bool,
}

/// How the Gaussian part of Q is inverted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InversionPath {
    /// Direct when `N <= M`, Woodbury otherwise.
    #[default]
    Auto,
    Direct,
    Woodbury,
}

/// Group structure seen by the engine. The ungrouped layout gives every
/// feature its own group without going through a [`Grouping`].
#[derive(Debug, Clone, Copy)]
enum Layout<'a> {
    Grouped(&'a Grouping),
    Ungrouped(usize),
}

impl Layout<'_> {
    fn n_groups(&self) -> usize {
        match self {
            Layout::Grouped(g) => g.n_groups(),
            Layout::Ungrouped(n) => *n,
        }
    }

    fn n_features(&self) -> usize {
        match self {
            Layout::Grouped(g) => g.n_features(),
            Layout::Ungrouped(n) => *n,
        }
    }

    fn group_of(&self, n: usize) -> usize {
        match self {
            Layout::Grouped(g) => g.group_of(n),
            Layout::Ungrouped(_) => n,
        }
    }

    fn group_logits(&self, rho4: &[f64], rho3: &[f64]) -> Vec<f64> {
        match self {
            Layout::Grouped(g) => {
                let mut rho = rho4.to_vec();
                for (l, &v) in rho3.iter().enumerate() {
                    rho[g.group_of(l)] += v;
                }
                rho
            }
            Layout::Ungrouped(_) => rho4.iter().zip(rho3).map(|(a, b)| a + b).collect(),
        }
    }
}

fn validate(data: &RegressionData, layout: Layout<'_>, hyper: &Hyperparams) -> Result<()> {
    if layout.n_features() != data.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "grouping covers {} features but data has {}",
            layout.n_features(),
            data.n_features()
        )));
    }
    hyper.validate(data.n_features(), layout.n_groups())
}

fn initialize_layout(
    data: &RegressionData,
    layout: Layout<'_>,
    hyper: &Hyperparams,
) -> Result<(FactorState, PosteriorQ)> {
    validate(data, layout, hyper)?;
    let n = data.n_features();
    let s2 = hyper.sigma0 * hyper.sigma0;
    let x = data.x();
    let v1inv = (x.transpose() * x) / s2;
    let v1inv_m1 = (x.transpose() * data.y()) / s2;

    let slab2 = hyper.sigma_slab * hyper.sigma_slab;
    let v2 = DVector::from_fn(n, |i, _| slab2 * hyper.p0.get(i));
    let r0: Vec<f64> = (0..n).map(|i| logit(hyper.p0.get(i))).collect::<Result<_>>()?;
    let rho0: Vec<f64> = (0..layout.n_groups())
        .map(|g| logit(hyper.pi0.get(g)))
        .collect::<Result<_>>()?;
    let rho3 = (0..n).map(|i| rho0[layout.group_of(i)]).collect();

    let fs = FactorState {
        v1inv,
        v1inv_m1,
        v2,
        m2: DVector::zeros(n),
        r2: r0.clone(),
        r3: r0.clone(),
        rho3,
        rho4: rho0.clone(),
    };
    let (m, v) = refresh_gaussian(&fs, data, hyper.sigma0, InversionPath::Auto)?;
    let q = PosteriorQ {
        m,
        v,
        r: r0,
        rho: rho0,
    };
    Ok((fs, q))
}

/// Initial factor parameters and the Q they induce.
pub fn initialize(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
) -> Result<(FactorState, PosteriorQ)> {
    initialize_layout(data, Layout::Grouped(grouping), hyper)
}

/// Divide factor 2 of feature `n` out of Q.
pub fn cavity_f2(q: &PosteriorQ, fs: &FactorState, n: usize) -> CavityF2 {
    let vnn = q.v[(n, n)];
    let prec = 1.0 / vnn - 1.0 / fs.v2[n];
    let v = 1.0 / prec;
    CavityF2 {
        v,
        m: v * (q.m[n] / vnn - fs.m2[n] / fs.v2[n]),
        r: q.r[n] - fs.r2[n],
    }
}

/// Moment-matched factor-2 parameters for one feature.
pub fn update_f2(cav: CavityF2, hyper: &Hyperparams) -> Result<F2Update> {
    let (v, m) = (cav.v, cav.m);
    let slab2 = hyper.sigma_slab * hyper.sigma_slab;
    let vs = v + slab2;
    let r2 = clamp_logit(0.5 * ((v / vs).ln() + m * m * (1.0 / v - 1.0 / vs)));
    let p = sigmoid(r2 + cav.r);
    let a = p * m / vs + (1.0 - p) * m / v;
    let b = p * (m * m - vs) / (vs * vs) + (1.0 - p) * (m * m - v) / (v * v);
    let d = a * a - b;
    if d == 0.0 {
        return Err(Error::DegenerateUpdate);
    }
    let mut v2 = 1.0 / d - v;
    let replaced = !(v2 > 0.0);
    if replaced {
        v2 = hyper.v_replace;
    }
    if !v2.is_finite() {
        return Err(Error::DegenerateUpdate);
    }
    let m2 = m - a * (v2 + v);
    if !m2.is_finite() {
        return Err(Error::DegenerateUpdate);
    }
    Ok(F2Update {
        params: F2Params { v2, m2, r2 },
        replaced,
    })
}

/// Divide factor 3 of feature `n` out of Q.
pub fn cavity_f3(q: &PosteriorQ, fs: &FactorState, grouping: &Grouping, n: usize) -> CavityF3 {
    cavity_f3_layout(q, fs, Layout::Grouped(grouping), n)
}

fn cavity_f3_layout(q: &PosteriorQ, fs: &FactorState, layout: Layout<'_>, n: usize) -> CavityF3 {
    CavityF3 {
        r: q.r[n] - fs.r3[n],
        rho: q.rho[layout.group_of(n)] - fs.rho3[n],
    }
}

/// Moment-matched factor-3 parameters `(rho3, r3)` for one feature.
pub fn update_f3(cav: CavityF3, p0: f64) -> (f64, f64) {
    let (rho3, r3) = if p0 == 0.5 {
        (
            0.5f64.ln() + softplus(cav.r),
            -softplus(std::f64::consts::LN_2 - cav.rho),
        )
    } else {
        let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
        (log_add_exp(lq, lp + cav.r), lp - log_add_exp(lq, -cav.rho))
    };
    (clamp_logit(rho3), clamp_logit(r3))
}

fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    max / min
}

fn symmetrize(v: &mut DMatrix<f64>) {
    let n = v.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (v[(i, j)] + v[(j, i)]);
            v[(i, j)] = s;
            v[(j, i)] = s;
        }
    }
}

/// Mean and covariance of the Gaussian part of Q given the current factor
/// parameters.
pub fn refresh_gaussian(
    fs: &FactorState,
    data: &RegressionData,
    sigma0: f64,
    path: InversionPath,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = fs.v2.len();
    let m_obs = data.n_obs();
    let rhs = &fs.v1inv_m1 + fs.m2.component_div(&fs.v2);
    let use_woodbury = match path {
        InversionPath::Auto => n > m_obs,
        InversionPath::Direct => false,
        InversionPath::Woodbury => true,
    };
    let mut v = if use_woodbury {
        let x = data.x();
        let xd = DMatrix::from_fn(m_obs, n, |i, j| x[(i, j)] * fs.v2[j]);
        let mut k = &xd * x.transpose();
        for i in 0..m_obs {
            k[(i, i)] += sigma0 * sigma0;
        }
        let chol = k.clone().cholesky().ok_or_else(|| Error::Singular {
            condition: condition_estimate(&k),
        })?;
        let w = chol.solve(&xd);
        let mut v = -(xd.transpose() * w);
        for i in 0..n {
            v[(i, i)] += fs.v2[i];
        }
        v
    } else {
        let mut a = fs.v1inv.clone();
        for i in 0..n {
            a[(i, i)] += 1.0 / fs.v2[i];
        }
        let chol = a.clone().cholesky().ok_or_else(|| Error::Singular {
            condition: condition_estimate(&a),
        })?;
        chol.inverse()
    };
    symmetrize(&mut v);
    let m = &v * rhs;
    if v.iter().any(|x| !x.is_finite()) || m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("posterior covariance"));
    }
    Ok((m, v))
}

/// Feature and group logits of Q from the factor logits.
pub fn refresh_logits(fs: &FactorState, grouping: &Grouping) -> (Vec<f64>, Vec<f64>) {
    refresh_logits_layout(fs, Layout::Grouped(grouping))
}

fn refresh_logits_layout(fs: &FactorState, layout: Layout<'_>) -> (Vec<f64>, Vec<f64>) {
    let r = fs.r2.iter().zip(&fs.r3).map(|(a, b)| a + b).collect();
    (r, layout.group_logits(&fs.rho4, &fs.rho3))
}

/// Full Q refresh from the factors.
pub fn refresh_q(
    fs: &FactorState,
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
) -> Result<PosteriorQ> {
    let (m, v) = refresh_gaussian(fs, data, hyper.sigma0, InversionPath::Auto)?;
    let (r, rho) = refresh_logits(fs, grouping);
    Ok(PosteriorQ { m, v, r, rho })
}

/// Damping in natural-parameter space: weight `alpha` on the new values.
pub trait Damp: Sized {
    fn damp(&self, new: &Self, alpha: f64) -> Self;
}

fn mix(old: f64, new: f64, alpha: f64) -> f64 {
    alpha * new + (1.0 - alpha) * old
}

impl Damp for F2Params {
    fn damp(&self, new: &Self, alpha: f64) -> Self {
        if alpha == 1.0 {
            return *new;
        }
        if alpha == 0.0 {
            return *self;
        }
        let prec = mix(1.0 / self.v2, 1.0 / new.v2, alpha);
        let shift = mix(self.m2 / self.v2, new.m2 / new.v2, alpha);
        F2Params {
            v2: 1.0 / prec,
            m2: shift / prec,
            r2: mix(self.r2, new.r2, alpha),
        }
    }
}

impl Damp for F3Params {
    fn damp(&self, new: &Self, alpha: f64) -> Self {
        if alpha == 1.0 {
            return *new;
        }
        if alpha == 0.0 {
            return *self;
        }
        F3Params {
            r3: mix(self.r3, new.r3, alpha),
            rho3: mix(self.rho3, new.rho3, alpha),
        }
    }
}

pub fn damp<T: Damp>(old: &T, new: &T, alpha: f64) -> T {
    old.damp(new, alpha)
}

/// Everything a fit produces, including the final factor state.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub result: FitResult,
    pub factors: FactorState,
    pub posterior: PosteriorQ,
}

fn max_change(a: &PosteriorQ, b: &PosteriorQ) -> f64 {
    let mut d = 0.0f64;
    for (x, y) in a.m.iter().zip(b.m.iter()) {
        d = d.max((x - y).abs());
    }
    for i in 0..a.v.nrows() {
        d = d.max((a.v[(i, i)] - b.v[(i, i)]).abs());
    }
    for (x, y) in a.r.iter().zip(&b.r) {
        d = d.max((x - y).abs());
    }
    for (x, y) in a.rho.iter().zip(&b.rho) {
        d = d.max((x - y).abs());
    }
    d
}

fn run(data: &RegressionData, layout: Layout<'_>, hyper: &Hyperparams) -> Result<FitOutput> {
    let (mut fs, mut q) = initialize_layout(data, layout, hyper)?;
    let n = data.n_features();
    let mut alpha = hyper.alpha0;
    let mut iterations = 0;
    let mut converged = false;
    let mut max_delta = f64::INFINITY;
    let mut skipped_updates = 0;
    let mut replaced_variances = 0;

    while iterations < hyper.max_iter {
        iterations += 1;
        let start = q.clone();

        for i in 0..n {
            let cav = cavity_f2(&q, &fs, i);
            if !cav.is_usable() {
                skipped_updates += 1;
                continue;
            }
            let upd = match update_f2(cav, hyper) {
                Ok(u) => u,
                Err(_) => {
                    skipped_updates += 1;
                    continue;
                }
            };
            replaced_variances += usize::from(upd.replaced);
            let old = F2Params {
                v2: fs.v2[i],
                m2: fs.m2[i],
                r2: fs.r2[i],
            };
            let new = old.damp(&upd.params, alpha);
            fs.v2[i] = new.v2;
            fs.m2[i] = new.m2;
            fs.r2[i] = new.r2;
        }
        let (m, v) = refresh_gaussian(&fs, data, hyper.sigma0, InversionPath::Auto)?;
        q.m = m;
        q.v = v;
        (q.r, q.rho) = refresh_logits_layout(&fs, layout);

        for i in 0..n {
            let cav = cavity_f3_layout(&q, &fs, layout, i);
            let (rho3, r3) = update_f3(cav, hyper.p0.get(i));
            let old = F3Params {
                r3: fs.r3[i],
                rho3: fs.rho3[i],
            };
            let new = old.damp(&F3Params { r3, rho3 }, alpha);
            fs.r3[i] = new.r3;
            fs.rho3[i] = new.rho3;
        }
        (q.r, q.rho) = refresh_logits_layout(&fs, layout);

        alpha *= 1.0 - hyper.alpha_decay;
        max_delta = max_change(&start, &q);
        if max_delta < hyper.tol {
            converged = true;
            break;
        }
    }

    let result = FitResult {
        mean: q.m.iter().copied().collect(),
        feature_prob: q.r.iter().map(|&r| sigmoid(r)).collect(),
        group_prob: q.rho.iter().map(|&r| sigmoid(r)).collect(),
        feature_logit: q.r.clone(),
        group_logit: q.rho.clone(),
        iterations,
        converged,
        max_delta,
        skipped_updates,
        replaced_variances,
    };
    Ok(FitOutput {
        result,
        factors: fs,
        posterior: q,
    })
}

/// Sparse-group fit.
pub fn fit(data: &RegressionData, grouping: &Grouping, hyper: &Hyperparams) -> Result<FitResult> {
    Ok(fit_detailed(data, grouping, hyper)?.result)
}

pub fn fit_detailed(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
) -> Result<FitOutput> {
    run(data, Layout::Grouped(grouping), hyper)
}

/// Plain spike-and-slab fit: every feature is its own group.
pub fn fit_ungrouped(data: &RegressionData, hyper: &Hyperparams) -> Result<FitResult> {
    Ok(fit_ungrouped_detailed(data, hyper)?.result)
}

pub fn fit_ungrouped_detailed(data: &RegressionData, hyper: &Hyperparams) -> Result<FitOutput> {
    run(data, Layout::Ungrouped(data.n_features()), hyper)
}
