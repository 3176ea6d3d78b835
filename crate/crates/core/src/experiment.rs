//! Replicated signal-recovery experiments.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep;
use crate::error::{Error, Result};
use crate::eval::{self, RankedPredictions, ReplicateMetrics};
use crate::model::{FitResult, Grouping, Hyperparams, RegressionData};
use crate::sim::{self, ScenarioSpec, SignalInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Grouped model using the supplied grouping.
    Dogss,
    /// Every feature in its own group.
    Ssep,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Dogss, Method::Ssep];

    pub fn fit(self, data: &RegressionData, grouping: &Grouping, hyper: &Hyperparams) -> Result<FitResult> {
        match self {
            Method::Dogss => ep::fit(data, grouping, hyper),
            Method::Ssep => ep::fit_ungrouped(data, hyper),
        }
    }

    pub fn grouping_for(self, grouping: &Grouping) -> Grouping {
        match self {
            Method::Dogss => grouping.clone(),
            Method::Ssep => Grouping::identity(grouping.n_features()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dogss" => Ok(Method::Dogss),
            "ssep" => Ok(Method::Ssep),
            other => Err(Error::param("method", format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dogss => "dogss",
            Method::Ssep => "ssep",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRun {
    pub replicate: u64,
    pub method: Method,
    pub auroc: f64,
    pub aupr: f64,
    /// Held-out relative squared error; `None` when undefined.
    pub prediction_error: Option<f64>,
    pub cutoff: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SignalRun {
    pub fn to_metrics(&self) -> ReplicateMetrics {
        let mut metrics = BTreeMap::from([("auroc".to_string(), self.auroc), ("aupr".to_string(), self.aupr)]);
        metrics.insert("e".to_string(), self.prediction_error.unwrap_or(f64::NAN));
        ReplicateMetrics {
            method: self.method.to_string(),
            replicate: self.replicate,
            metrics,
        }
    }
}

/// Feature ranking by posterior inclusion logit against the true support.
pub fn support_predictions(fit: &FitResult, instance: &SignalInstance) -> Result<RankedPredictions> {
    RankedPredictions::new(
        fit.feature_logit.clone(),
        instance.beta.iter().map(|&b| b != 0.0).collect(),
    )
}

/// Fit one method on one instance. With `cv_folds`, the prediction error uses
/// coefficients thresholded at the cross-validated cutoff; otherwise the full
/// posterior mean.
pub fn evaluate_instance(
    instance: &SignalInstance,
    replicate: u64,
    method: Method,
    hyper: &Hyperparams,
    cv_folds: Option<usize>,
) -> Result<SignalRun> {
    let data = RegressionData::centered(instance.x.clone(), instance.y.clone(), false)?;
    let fit = method.fit(&data, &instance.grouping, hyper)?;
    let curves = eval::roc_pr(&support_predictions(&fit, instance)?)?;
    let (beta, cutoff) = match cv_folds {
        Some(folds) => {
            let cv = eval::cv_cutoff_1se(&data, &method.grouping_for(&instance.grouping), hyper, folds)?;
            (eval::thresholded_coefficients(&fit, cv.cutoff), Some(cv.cutoff))
        }
        None => (nalgebra::DVector::from_vec(fit.mean.clone()), None),
    };
    let prediction_error = match sim::signal_prediction_error(&beta, &instance.x_test, &instance.y_test) {
        Ok(e) => Some(e),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SignalRun {
        replicate,
        method,
        auroc: curves.auroc,
        aupr: curves.aupr,
        prediction_error,
        cutoff,
        iterations: fit.iterations,
        converged: fit.converged,
    })
}

/// Replicates `0..replicates` of `spec` for each method, ordered by
/// replicate then method. Replicates run in parallel; results do not depend
/// on the thread count.
pub fn run_signal(
    spec: &ScenarioSpec,
    replicates: u64,
    methods: &[Method],
    hyper: &Hyperparams,
    cv_folds: Option<usize>,
) -> Result<Vec<SignalRun>> {
    let per_rep = (0..replicates)
        .into_par_iter()
        .map(|rep| {
            let instance = sim::simulate(spec, rep)?;
            methods
                .iter()
                .map(|&m| evaluate_instance(&instance, rep, m, hyper, cv_folds))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}
