//! Signal-recovery benchmark instances.
//!
//! Draw order for one replicate (all from a single ChaCha8 stream seeded
//! with `seed + replicate`): group labels, training rows, coefficients,
//! training noise, test rows, test noise.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Grouping;

/// Number of groups that carry the nonzero coefficients.
pub const ACTIVE_GROUPS: usize = 3;
pub const COEFFICIENT_BOUND: f64 = 5.0;
pub const DEFAULT_TEST_ROWS: usize = 100;
/// True noise levels of the noise sweep.
pub const NOISE_SWEEP: [f64; 5] = [0.0, 0.1, 1.0, 3.0, 5.0];
/// Slab widths of the slab sweep.
pub const SLAB_SWEEP: [f64; 6] = [0.1, 1.0, 2.0, 5.0, 10.0, 100.0];
const MAX_GROUP_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    Independent,
    /// Every pair of features has correlation 0.5.
    Pairwise,
    /// Correlation 0.5 within a group, independent across groups.
    Groupwise,
}

impl FromStr for Correlation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "independent" => Ok(Self::Independent),
            "pairwise" => Ok(Self::Pairwise),
            "groupwise" => Ok(Self::Groupwise),
            other => Err(Error::param("corr", format!("unknown correlation structure `{other}`"))),
        }
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Independent => "independent",
            Self::Pairwise => "pairwise",
            Self::Groupwise => "groupwise",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub m: usize,
    pub n: usize,
    pub g: usize,
    pub k: usize,
    pub sigma0: f64,
    pub corr: Correlation,
    pub n_test: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    fn with(m: usize, n: usize, g: usize, k: usize) -> Self {
        Self {
            m,
            n,
            g,
            k,
            sigma0: 1.0,
            corr: Correlation::Independent,
            n_test: DEFAULT_TEST_ROWS,
            seed: 0,
        }
    }

    pub fn small() -> Self {
        Self::with(30, 30, 5, 5)
    }

    pub fn medium() -> Self {
        Self::with(30, 100, 20, 10)
    }

    pub fn large() -> Self {
        Self::with(100, 1000, 100, 10)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "medium" => Some(Self::medium()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::param("n", "need at least one feature and observation"));
        }
        if self.k > self.n {
            return Err(Error::param("k", "cannot exceed the number of features"));
        }
        if self.g == 0 || self.g > self.n {
            return Err(Error::param("g", "must lie in 1..=N"));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            return Err(Error::param("sigma0", "must be non-negative"));
        }
        Ok(())
    }
}

/// Generator for replicate `replicate` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, replicate: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(replicate))
}

/// Independent uniform group label per feature. Groups may end up empty.
pub fn gen_grouping<R: Rng>(n: usize, g: usize, rng: &mut R) -> Grouping {
    let labels = (0..n).map(|_| rng.random_range(0..g)).collect();
    Grouping::new(labels, g).expect("labels drawn in range")
}

fn correlation_matrix(grouping: &Grouping, corr: Correlation) -> DMatrix<f64> {
    let n = grouping.n_features();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            match corr {
                Correlation::Independent => 0.0,
                Correlation::Pairwise => 0.5,
                Correlation::Groupwise if grouping.group_of(i) == grouping.group_of(j) => 0.5,
                Correlation::Groupwise => 0.0,
            }
        }
    })
}

/// `m` rows drawn i.i.d. from `N(0, C)` with `C` set by `corr`.
pub fn sample_rows<R: Rng>(m: usize, grouping: &Grouping, corr: Correlation, rng: &mut R) -> DMatrix<f64> {
    let n = grouping.n_features();
    let z = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if corr == Correlation::Independent {
        return z;
    }
    let l = correlation_matrix(grouping, corr)
        .cholesky()
        .expect("correlation matrix is positive definite")
        .unpack();
    z * l.transpose()
}

pub fn gen_design<R: Rng>(spec: &ScenarioSpec, rng: &mut R) -> (DMatrix<f64>, Grouping) {
    let grouping = gen_grouping(spec.n, spec.g, rng);
    let x = sample_rows(spec.m, &grouping, spec.corr, rng);
    (x, grouping)
}

/// `k` nonzero coefficients, uniform on `[-5, 5]`, placed uniformly among the
/// features of three distinct random groups.
pub fn gen_coefficients<R: Rng>(spec: &ScenarioSpec, grouping: &Grouping, rng: &mut R) -> Result<DVector<f64>> {
    let n = grouping.n_features();
    let mut beta = DVector::zeros(n);
    if spec.k == 0 {
        return Ok(beta);
    }
    let members = grouping.members();
    let n_active = ACTIVE_GROUPS.min(grouping.n_groups());
    for _ in 0..MAX_GROUP_RETRIES {
        let groups = sample(rng, grouping.n_groups(), n_active);
        let mut pool: Vec<usize> = groups.iter().flat_map(|g| members[g].iter().copied()).collect();
        if pool.len() < spec.k {
            continue;
        }
        pool.sort_unstable();
        for idx in sample(rng, pool.len(), spec.k) {
            beta[pool[idx]] = rng.random_range(-COEFFICIENT_BOUND..=COEFFICIENT_BOUND);
        }
        return Ok(beta);
    }
    Err(Error::param(
        "k",
        format!("no {n_active} groups hold {} features after {MAX_GROUP_RETRIES} draws", spec.k),
    ))
}

/// `y = X beta + eps`, `eps ~ N(0, sigma0^2)`.
pub fn gen_response<R: Rng>(x: &DMatrix<f64>, beta: &DVector<f64>, sigma0: f64, rng: &mut R) -> DVector<f64> {
    let mut y = x * beta;
    for v in y.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += sigma0 * e;
    }
    y
}

/// Relative residual sum of squares on held-out data.
pub fn signal_prediction_error(beta_hat: &DVector<f64>, x_test: &DMatrix<f64>, y_test: &DVector<f64>) -> Result<f64> {
    if x_test.ncols() != beta_hat.len() || x_test.nrows() != y_test.len() {
        return Err(Error::DimensionMismatch("test data does not match coefficients".into()));
    }
    let denom = y_test.norm_squared();
    if denom == 0.0 {
        return Err(Error::Undefined("prediction error with an all-zero test response"));
    }
    Ok((y_test - x_test * beta_hat).norm_squared() / denom)
}

#[derive(Debug, Clone)]
pub struct SignalInstance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_test: DMatrix<f64>,
    pub y_test: DVector<f64>,
    pub grouping: Grouping,
    pub beta: DVector<f64>,
}

impl SignalInstance {
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&i| self.beta[i] != 0.0).collect()
    }
}

pub fn simulate(spec: &ScenarioSpec, replicate: u64) -> Result<SignalInstance> {
    spec.validate()?;
    let mut rng = replicate_rng(spec.seed, replicate);
    let (x, grouping) = gen_design(spec, &mut rng);
    let beta = gen_coefficients(spec, &grouping, &mut rng)?;
    let y = gen_response(&x, &beta, spec.sigma0, &mut rng);
    let x_test = sample_rows(spec.n_test, &grouping, spec.corr, &mut rng);
    let y_test = gen_response(&x_test, &beta, spec.sigma0, &mut rng);
    Ok(SignalInstance {
        x,
        y,
        x_test,
        y_test,
        grouping,
        beta,
    })
}
