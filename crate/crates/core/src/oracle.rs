//! Exact posterior by enumeration over inclusion patterns.
//!
//! With the slab integrated out, `y | S ~ N(0, s0^2 I + s_slab^2 X_S X_S^T)`
//! for active set `S`. The group indicators are summed out analytically for
//! each `S`, so the main routine walks `2^N` subsets rather than all
//! consistent `(Gamma, Z)` pairs. [`enumerate_joint`] does the literal walk
//! over `(Gamma, Z)` for cross-checking on tiny problems.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Grouping, Hyperparams, RegressionData};

pub const MAX_FEATURES: usize = 20;
const MAX_JOINT_BITS: usize = 22;
const CHUNK: usize = 1 << 10;

/// One joint assignment of group and feature indicators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub gamma: Vec<bool>,
    pub z: Vec<bool>,
}

impl ModelConfig {
    /// A feature can only be active inside an active group.
    pub fn is_consistent(&self, grouping: &Grouping) -> bool {
        self.z
            .iter()
            .enumerate()
            .all(|(n, &z)| !z || self.gamma[grouping.group_of(n)])
    }

    pub fn active_set(&self) -> Vec<usize> {
        (0..self.z.len()).filter(|&n| self.z[n]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactPosterior {
    pub feature_prob: Vec<f64>,
    pub group_prob: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_evidence: f64,
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Sufficient {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    m: usize,
}

impl Sufficient {
    fn new(data: &RegressionData) -> Self {
        let x = data.x();
        Self {
            gram: x.transpose() * x,
            xty: x.transpose() * data.y(),
            yty: data.y().norm_squared(),
            m: data.n_obs(),
        }
    }

    /// Log marginal likelihood of `y` and the conditional posterior mean of
    /// the active coefficients.
    fn evaluate(&self, subset: &[usize], sigma0: f64, slab: f64) -> Result<(f64, DVector<f64>)> {
        let k = subset.len();
        let s2 = sigma0 * sigma0;
        let slab2 = slab * slab;
        let base = self.m as f64 * (2.0 * std::f64::consts::PI * s2).ln();
        if k == 0 {
            return Ok((-0.5 * (base + self.yty / s2), DVector::zeros(0)));
        }
        let ridge = s2 / slab2;
        let a = DMatrix::from_fn(k, k, |i, j| {
            self.gram[(subset[i], subset[j])] + if i == j { ridge } else { 0.0 }
        });
        let b = DVector::from_fn(k, |i, _| self.xty[subset[i]]);
        let chol = a.cholesky().ok_or(Error::Singular {
            condition: f64::INFINITY,
        })?;
        let beta = chol.solve(&b);
        let log_det_a: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        // det(I + slab2/s2 X^T X) = (slab2/s2)^k det(A)
        let log_det = log_det_a + k as f64 * (slab2 / s2).ln();
        let quad = (self.yty - b.dot(&beta)) / s2;
        Ok((-0.5 * (base + log_det + quad), beta))
    }
}

/// `log N(y | 0, s0^2 I + s_slab^2 X_S X_S^T)` and `E[beta_S | y, S]`.
pub fn log_marginal_likelihood(
    data: &RegressionData,
    subset: &[usize],
    sigma0: f64,
    sigma_slab: f64,
) -> Result<(f64, DVector<f64>)> {
    Sufficient::new(data).evaluate(subset, sigma0, sigma_slab)
}

struct PriorTables {
    members: Vec<Vec<usize>>,
    ln_p: Vec<f64>,
    ln_q: Vec<f64>,
    /// log prior mass of "no feature of g active", summed over Gamma_g.
    ln_empty: Vec<f64>,
    /// P(Gamma_g = 1 | no feature of g active)
    on_given_empty: Vec<f64>,
    ln_pi: Vec<f64>,
}

impl PriorTables {
    fn new(grouping: &Grouping, hyper: &Hyperparams) -> Self {
        let n = grouping.n_features();
        let members = grouping.members();
        let ln_p: Vec<f64> = (0..n).map(|i| hyper.p0.get(i).ln()).collect();
        let ln_q: Vec<f64> = (0..n).map(|i| (1.0 - hyper.p0.get(i)).ln()).collect();
        let mut ln_empty = Vec::with_capacity(members.len());
        let mut on_given_empty = Vec::with_capacity(members.len());
        let mut ln_pi = Vec::with_capacity(members.len());
        for (g, mem) in members.iter().enumerate() {
            let pi = hyper.pi0.get(g);
            let all_off: f64 = mem.iter().map(|&i| ln_q[i]).sum();
            let on = pi * all_off.exp();
            let total = (1.0 - pi) + on;
            ln_empty.push(total.ln());
            on_given_empty.push(on / total);
            ln_pi.push(pi.ln());
        }
        Self {
            members,
            ln_p,
            ln_q,
            ln_empty,
            on_given_empty,
            ln_pi,
        }
    }

    fn ln_prior(&self, mask: u64) -> f64 {
        self.members
            .iter()
            .enumerate()
            .map(|(g, mem)| {
                if mem.iter().any(|&i| mask >> i & 1 == 1) {
                    self.ln_pi[g]
                        + mem
                            .iter()
                            .map(|&i| if mask >> i & 1 == 1 { self.ln_p[i] } else { self.ln_q[i] })
                            .sum::<f64>()
                } else {
                    self.ln_empty[g]
                }
            })
            .sum()
    }
}

fn subset_of(mask: u64, n: usize) -> Vec<usize> {
    (0..n).filter(|&i| mask >> i & 1 == 1).collect()
}

fn check_inputs(data: &RegressionData, grouping: &Grouping, hyper: &Hyperparams) -> Result<()> {
    let n = data.n_features();
    if n > MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: MAX_FEATURES,
            got: n,
        });
    }
    if grouping.n_features() != n {
        return Err(Error::DimensionMismatch(format!(
            "grouping covers {} features but data has {n}",
            grouping.n_features()
        )));
    }
    hyper.validate(n, grouping.n_groups())
}

#[derive(Clone)]
struct Partial {
    weight: CompensatedSum,
    feature: Vec<CompensatedSum>,
    group: Vec<CompensatedSum>,
    mean: Vec<CompensatedSum>,
}

impl Partial {
    fn new(n: usize, g: usize) -> Self {
        Self {
            weight: CompensatedSum::default(),
            feature: vec![CompensatedSum::default(); n],
            group: vec![CompensatedSum::default(); g],
            mean: vec![CompensatedSum::default(); n],
        }
    }
}

/// Exact posterior inclusion probabilities, group probabilities, posterior
/// mean and log evidence.
pub fn enumerate_posterior(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
) -> Result<ExactPosterior> {
    check_inputs(data, grouping, hyper)?;
    let n = data.n_features();
    let n_groups = grouping.n_groups();
    let suff = Sufficient::new(data);
    let priors = PriorTables::new(grouping, hyper);
    let total = 1u64 << n;

    let log_w: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mask| {
            let (ml, _) = suff.evaluate(&subset_of(mask, n), hyper.sigma0, hyper.sigma_slab)?;
            Ok(ml + priors.ln_prior(mask))
        })
        .collect::<Result<_>>()?;
    let shift = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // Fixed chunk boundaries keep the reduction order independent of the
    // thread count.
    let partials: Vec<Partial> = log_w
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut acc = Partial::new(n, n_groups);
            for (off, &lw) in chunk.iter().enumerate() {
                let mask = (c * CHUNK + off) as u64;
                let w = (lw - shift).exp();
                if w == 0.0 {
                    continue;
                }
                acc.weight.add(w);
                let subset = subset_of(mask, n);
                let (_, beta) = suff.evaluate(&subset, hyper.sigma0, hyper.sigma_slab)?;
                for (k, &i) in subset.iter().enumerate() {
                    acc.feature[i].add(w);
                    acc.mean[i].add(w * beta[k]);
                }
                for (g, mem) in priors.members.iter().enumerate() {
                    let p_on = if mem.iter().any(|&i| mask >> i & 1 == 1) {
                        1.0
                    } else {
                        priors.on_given_empty[g]
                    };
                    acc.group[g].add(w * p_on);
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut total_acc = Partial::new(n, n_groups);
    for p in &partials {
        total_acc.weight.add(p.weight.value());
        for i in 0..n {
            total_acc.feature[i].add(p.feature[i].value());
            total_acc.mean[i].add(p.mean[i].value());
        }
        for g in 0..n_groups {
            total_acc.group[g].add(p.group[g].value());
        }
    }
    let z = total_acc.weight.value();
    Ok(ExactPosterior {
        feature_prob: total_acc.feature.iter().map(|s| s.value() / z).collect(),
        group_prob: total_acc.group.iter().map(|s| s.value() / z).collect(),
        mean: total_acc.mean.iter().map(|s| s.value() / z).collect(),
        log_evidence: shift + z.ln(),
    })
}

/// Unnormalised log posterior weight of a joint configuration;
/// `-inf` for inconsistent configurations.
pub fn config_log_weight(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
    config: &ModelConfig,
) -> Result<f64> {
    if !config.is_consistent(grouping) {
        return Ok(f64::NEG_INFINITY);
    }
    let (ml, _) = log_marginal_likelihood(data, &config.active_set(), hyper.sigma0, hyper.sigma_slab)?;
    let mut prior = 0.0;
    for (g, &on) in config.gamma.iter().enumerate() {
        let pi = hyper.pi0.get(g);
        prior += if on { pi.ln() } else { (1.0 - pi).ln() };
    }
    for (i, &z) in config.z.iter().enumerate() {
        if config.gamma[grouping.group_of(i)] {
            let p = hyper.p0.get(i);
            prior += if z { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(ml + prior)
}

/// Normalised posterior weights of every `(Gamma, Z)` pair, consistent or
/// not. Only for small `N + G`.
pub fn enumerate_joint(
    data: &RegressionData,
    grouping: &Grouping,
    hyper: &Hyperparams,
) -> Result<Vec<(ModelConfig, f64)>> {
    check_inputs(data, grouping, hyper)?;
    let n = data.n_features();
    let g = grouping.n_groups();
    if n + g > MAX_JOINT_BITS {
        return Err(Error::TooManyFeatures {
            max: MAX_JOINT_BITS,
            got: n + g,
        });
    }
    let mut configs = Vec::with_capacity(1 << (n + g));
    for bits in 0u64..(1u64 << (n + g)) {
        let config = ModelConfig {
            gamma: (0..g).map(|k| bits >> k & 1 == 1).collect(),
            z: (0..n).map(|k| bits >> (g + k) & 1 == 1).collect(),
        };
        let lw = config_log_weight(data, grouping, hyper, &config)?;
        configs.push((config, lw));
    }
    let shift = configs.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut z = CompensatedSum::default();
    for c in &configs {
        z.add((c.1 - shift).exp());
    }
    let z = z.value();
    Ok(configs
        .into_iter()
        .map(|(c, lw)| {
            let w = (lw - shift).exp() / z;
            (c, w)
        })
        .collect())
}
