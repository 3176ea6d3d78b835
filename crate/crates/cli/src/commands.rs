use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use spikeslab_ep::eval::{self, Curves, RankedPredictions};
use spikeslab_ep::experiment::{self, SignalRun};
use spikeslab_ep::io::{self, FitReport, Table, SCHEMA_VERSION};
use spikeslab_ep::network::{self, NetworkSpec, NodeFailure, ReconstructionConfig};
use spikeslab_ep::oracle::{self, ExactPosterior};
use spikeslab_ep::sim::{self, ScenarioSpec, NOISE_SWEEP, SLAB_SWEEP};
use spikeslab_ep::{ep, Error, FitResult, Grouping, Hyperparams, RegressionData};

use crate::output::{Inputs, Outputs};
use crate::{
    CliError, EvalArgs, ExperimentArgs, FitArgs, OracleArgs, ReconstructArgs, SimulateNetworkArgs, SimulateSignalArgs,
    Sweep,
};

type Result<T> = std::result::Result<T, CliError>;

/// Arguments as given plus the values resolved from presets and defaults.
#[derive(Serialize)]
struct RunConfig<'a, A, R> {
    args: &'a A,
    resolved: R,
}

fn read_table(inputs: &mut Inputs, path: &Path) -> Result<Table> {
    Ok(io::read_table(inputs.read(path)?.as_slice())?)
}

fn load_grouping(
    inputs: &mut Inputs,
    path: Option<&Path>,
    ungrouped: bool,
    features: &[String],
) -> Result<(Grouping, Vec<String>)> {
    if ungrouped {
        return Ok((Grouping::identity(features.len()), features.to_vec()));
    }
    let path = path.ok_or_else(|| CliError::Usage("--grouping is required unless --ungrouped is given".into()))?;
    Ok(io::read_grouping(inputs.read(path)?.as_slice(), features)?)
}

fn numbered(prefix: &str, n: usize, first: usize) -> Vec<String> {
    (first..first + n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let (names, x, y) = read_table(&mut inputs, &a.data)?.split_response(&a.response)?;
    let (grouping, group_names) = load_grouping(&mut inputs, a.grouping.as_deref(), a.ungrouped, &names)?;
    let hyper = a.hyper.resolve(Hyperparams::default());
    let data = RegressionData::centered(x, y, a.standardize)?;
    let result = if a.ungrouped {
        ep::fit_ungrouped(&data, &hyper)?
    } else {
        ep::fit(&data, &grouping, &hyper)?
    };
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        coefficients: data
            .unscale_coefficients(&DVector::from_column_slice(&result.mean))
            .iter()
            .copied()
            .collect(),
        feature_names: names,
        group_names,
        feature_groups: grouping.assignments().to_vec(),
        x_means: data.x_means().iter().copied().collect(),
        y_mean: data.y_mean(),
        result,
    };
    let mut out = Outputs::new(&a.out);
    out.add("fit.json", (report.to_json()? + "\n").into_bytes());
    out.add_with("coefficients.csv", |w| io::write_coefficients(w, &report))?;
    out.finish("fit", &RunConfig { args: a, resolved: hyper }, inputs, None::<()>)
}

fn signal_spec(a: &SimulateSignalArgs) -> Result<ScenarioSpec> {
    let base = match &a.preset {
        Some(name) => ScenarioSpec::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?,
        None => match (a.m, a.n, a.g, a.k) {
            (Some(m), Some(n), Some(g), Some(k)) => ScenarioSpec {
                m,
                n,
                g,
                k,
                ..ScenarioSpec::small()
            },
            _ => return Err(CliError::Usage("give --preset or all of --m --n --g --k".into())),
        },
    };
    let spec = ScenarioSpec {
        m: a.m.unwrap_or(base.m),
        n: a.n.unwrap_or(base.n),
        g: a.g.unwrap_or(base.g),
        k: a.k.unwrap_or(base.k),
        sigma0: a.sigma0.unwrap_or(base.sigma0),
        corr: a.corr,
        n_test: a.n_test.unwrap_or(base.n_test),
        seed: a.seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct SignalTruth {
    beta: Vec<f64>,
    support: Vec<String>,
}

pub fn simulate_signal(a: &SimulateSignalArgs) -> Result<()> {
    let spec = signal_spec(a)?;
    let inst = sim::simulate(&spec, a.replicate)?;
    let features = numbered("x", spec.n, 1);
    let group_names = numbered("g", spec.g, 1);
    let mut header = features.clone();
    header.push("y".into());
    let joined = |x: &DMatrix<f64>, y: &DVector<f64>| {
        let mut m = x.clone().insert_column(x.ncols(), 0.0);
        m.set_column(x.ncols(), y);
        m
    };

    let mut out = Outputs::new(&a.out);
    out.add_with("train.csv", |w| io::write_table(w, &header, &joined(&inst.x, &inst.y)))?;
    out.add_with("test.csv", |w| io::write_table(w, &header, &joined(&inst.x_test, &inst.y_test)))?;
    out.add_with("grouping.csv", |w| io::write_grouping(w, &features, &inst.grouping, &group_names))?;
    out.add_with("truth.csv", |w| io::write_truth(w, &features, &inst.beta))?;
    let truth = SignalTruth {
        beta: inst.beta.iter().copied().collect(),
        support: inst.support().iter().map(|&i| features[i].clone()).collect(),
    };
    out.finish(
        "simulate-signal",
        &RunConfig { args: a, resolved: spec },
        Inputs::default(),
        Some(truth),
    )
}

fn network_spec(a: &SimulateNetworkArgs) -> Result<NetworkSpec> {
    let base = match &a.preset {
        Some(name) => NetworkSpec::preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset `{name}`")))?,
        None => match (a.p, a.g, a.h, a.q) {
            (Some(p), Some(g), Some(h), Some(q)) => NetworkSpec { p, g, h, q },
            _ => return Err(CliError::Usage("give --preset or all of --p --g --h --q".into())),
        },
    };
    let spec = NetworkSpec {
        p: a.p.unwrap_or(base.p),
        g: a.g.unwrap_or(base.g),
        h: a.h.unwrap_or(base.h),
        q: a.q.unwrap_or(base.q),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize)]
struct NetworkTruth {
    edges: Vec<(usize, usize)>,
    hubs: Vec<usize>,
}

pub fn simulate_network(a: &SimulateNetworkArgs) -> Result<()> {
    let spec = network_spec(a)?;
    let (graph, sample) = network::simulate_network(&spec, a.m, a.seed, a.replicate)?;
    let names = numbered("n", spec.p, 0);
    let mut out = Outputs::new(&a.out);
    out.add_with("train.csv", |w| io::write_table(w, &names, &sample.x_train))?;
    out.add_with("test.csv", |w| io::write_table(w, &names, &sample.x_test))?;
    out.add_with("edges.csv", |w| io::write_edges(w, &graph.edges))?;
    out.add_with("nodes.csv", |w| io::write_nodes(w, &graph.nodes))?;
    out.add_with("precision.csv", |w| io::write_table(w, &names, &sample.precision))?;
    let truth = NetworkTruth {
        edges: graph.edges.iter().copied().collect(),
        hubs: graph.nodes.hubs.clone(),
    };
    out.finish(
        "simulate-network",
        &RunConfig { args: a, resolved: spec },
        Inputs::default(),
        Some(truth),
    )
}

#[derive(Serialize)]
struct ReconstructReport<'a> {
    schema_version: u32,
    scored_edges: usize,
    failures: &'a [NodeFailure],
    unconverged: &'a [usize],
}

pub fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let table = read_table(&mut inputs, &a.data)?;
    let nodes = io::read_nodes(inputs.read(&a.nodes)?.as_slice())?;
    let config = ReconstructionConfig {
        features: a.features,
        grouping: a.grouping,
        nonhub: a.nonhub,
        symmetrize: a.symmetrize,
        hyper: a.hyper.resolve(Hyperparams::network_preset()),
        seed: a.seed,
        // the per-node fits run on the pool installed by `main`
        jobs: 0,
    };
    let ranking = network::neighborhood_selection(&table.values, &nodes, &config)?;
    let mut out = Outputs::new(&a.out);
    out.add_with("ranking.csv", |w| io::write_ranking(w, &ranking.edges))?;
    out.add_with("bhat.csv", |w| io::write_table(w, &table.names, &ranking.b_hat))?;
    out.add_json(
        "report.json",
        &ReconstructReport {
            schema_version: SCHEMA_VERSION,
            scored_edges: ranking.edges.len(),
            failures: &ranking.failures,
            unconverged: &ranking.unconverged,
        },
    )?;
    out.finish("reconstruct", &RunConfig { args: a, resolved: config }, inputs, None::<()>)
}

#[derive(Serialize, Default)]
struct Metrics {
    schema_version: u32,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    aupr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_star: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    degenerate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction_error: Option<f64>,
}

impl Metrics {
    fn with_curves(&mut self, preds: &RankedPredictions) -> Result<Curves> {
        let curves = eval::roc_pr(preds)?;
        self.auroc = Some(curves.auroc);
        self.aupr = Some(curves.aupr);
        self.k = Some(preds.k());
        self.n_star = Some(preds.n_star());
        self.degenerate = Some(curves.degenerate);
        Ok(curves)
    }
}

/// Columns of `table` in the order of `wanted`.
fn columns_by_name(table: &Table, wanted: &[String]) -> Result<DMatrix<f64>> {
    let index: HashMap<&str, usize> = table.names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let cols = wanted
        .iter()
        .map(|w| {
            index
                .get(w.as_str())
                .copied()
                .ok_or_else(|| Error::DimensionMismatch(format!("test data has no column `{w}`")))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(DMatrix::from_fn(table.values.nrows(), cols.len(), |i, j| {
        table.values[(i, cols[j])]
    }))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let mut metrics = Metrics {
        schema_version: SCHEMA_VERSION,
        ..Default::default()
    };
    let mut curves = None;

    if let Some(ranking_path) = &a.ranking {
        metrics.mode = "network";
        let ranking = io::read_ranking(inputs.read(ranking_path)?.as_slice())?;
        let gold_path = a.gold.as_ref().ok_or_else(|| CliError::Usage("--ranking needs --gold".into()))?;
        let gold = io::read_edges(inputs.read(gold_path)?.as_slice())?;
        let test = a.test.as_ref().map(|t| read_table(&mut inputs, t)).transpose()?;
        let p = match (a.p, &test) {
            (Some(p), _) => p,
            (None, Some(t)) => t.values.ncols(),
            (None, None) => return Err(CliError::Usage("give --p or --test to fix the node count".into())),
        };
        let preds = network::edge_predictions(p, &ranking, &gold)?;
        curves = Some(metrics.with_curves(&preds)?);
        if let Some(bhat_path) = &a.bhat {
            let test = test.ok_or_else(|| CliError::Usage("--bhat needs --test".into()))?;
            let bhat = read_table(&mut inputs, bhat_path)?;
            if test.values.ncols() != p {
                return Err(Error::DimensionMismatch(format!("test data has {} columns for {p} nodes", test.values.ncols())).into());
            }
            metrics.prediction_error = Some(network::network_prediction_error(&bhat.values, &test.values)?);
        }
    } else if let Some(fit_path) = &a.fit {
        metrics.mode = "fit";
        let text = String::from_utf8(inputs.read(fit_path)?).map_err(|e| Error::parse(0, e.to_string()))?;
        let report = FitReport::from_json(&text)?;
        if let Some(truth_path) = &a.truth {
            let truth: HashMap<String, f64> = io::read_truth(inputs.read(truth_path)?.as_slice())?.into_iter().collect();
            let labels = report
                .feature_names
                .iter()
                .map(|f| {
                    truth
                        .get(f)
                        .map(|&b| b != 0.0)
                        .ok_or_else(|| Error::DimensionMismatch(format!("truth has no feature `{f}`")))
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let preds = RankedPredictions::new(report.result.feature_logit.clone(), labels)?;
            curves = Some(metrics.with_curves(&preds)?);
        }
        if let Some(test_path) = &a.test {
            let table = read_table(&mut inputs, test_path)?;
            let (_, _, y) = table.split_response(&a.response)?;
            let x = columns_by_name(&table, &report.feature_names)?;
            let resid = &y - report.predict(&x)?;
            let denom = y.norm_squared();
            if denom == 0.0 {
                return Err(Error::Undefined("prediction error with an all-zero test response").into());
            }
            metrics.prediction_error = Some(resid.norm_squared() / denom);
        }
    } else {
        return Err(CliError::Usage("give --ranking with --gold, or --fit".into()));
    }

    let mut out = Outputs::new(&a.out);
    out.add_json("metrics.json", &metrics)?;
    if let Some(c) = &curves {
        out.add_with("curve.csv", |w| io::write_curve(w, &c.points))?;
    }
    out.finish("eval", &RunConfig { args: a, resolved: () }, inputs, None::<()>)
}

#[derive(Serialize)]
struct OracleReport {
    schema_version: u32,
    n_features: usize,
    max_abs_prob_deviation: f64,
    mean_abs_prob_deviation: f64,
    max_abs_mean_deviation: f64,
    max_abs_group_prob_deviation: f64,
    ep: FitResult,
    exact: ExactPosterior,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn oracle_compare(a: &OracleArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let (names, x, y) = read_table(&mut inputs, &a.data)?.split_response(&a.response)?;
    if names.len() > oracle::MAX_FEATURES {
        return Err(Error::TooManyFeatures {
            max: oracle::MAX_FEATURES,
            got: names.len(),
        }
        .into());
    }
    let (grouping, _) = load_grouping(&mut inputs, a.grouping.as_deref(), a.ungrouped, &names)?;
    let hyper = a.hyper.resolve(Hyperparams::default());
    let data = RegressionData::centered(x, y, a.standardize)?;
    let ep_fit = ep::fit(&data, &grouping, &hyper)?;
    let exact = oracle::enumerate_posterior(&data, &grouping, &hyper)?;
    let n = names.len();
    let report = OracleReport {
        schema_version: SCHEMA_VERSION,
        n_features: n,
        max_abs_prob_deviation: max_abs_diff(&ep_fit.feature_prob, &exact.feature_prob),
        mean_abs_prob_deviation: if n == 0 {
            0.0
        } else {
            ep_fit
                .feature_prob
                .iter()
                .zip(&exact.feature_prob)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                / n as f64
        },
        max_abs_mean_deviation: max_abs_diff(&ep_fit.mean, &exact.mean),
        max_abs_group_prob_deviation: max_abs_diff(&ep_fit.group_prob, &exact.group_prob),
        ep: ep_fit,
        exact,
    };
    let mut out = Outputs::new(&a.out);
    out.add_json("report.json", &report)?;
    out.finish("oracle-compare", &RunConfig { args: a, resolved: hyper }, inputs, None::<()>)
}

#[derive(Serialize)]
struct ExperimentResolved {
    spec: ScenarioSpec,
    hyper: Hyperparams,
    levels: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct LevelSummary {
    level: Option<f64>,
    rows: Vec<eval::MetricSummary>,
}

pub fn experiment(a: &ExperimentArgs) -> Result<()> {
    let base =
        ScenarioSpec::preset(&a.preset).ok_or_else(|| CliError::Usage(format!("unknown preset `{}`", a.preset)))?;
    let spec = ScenarioSpec {
        m: a.m.unwrap_or(base.m),
        n: a.n.unwrap_or(base.n),
        g: a.g.unwrap_or(base.g),
        k: a.k.unwrap_or(base.k),
        sigma0: a.noise.unwrap_or(base.sigma0),
        corr: a.corr,
        n_test: base.n_test,
        seed: a.seed,
    };
    spec.validate()?;
    if a.methods.is_empty() {
        return Err(CliError::Usage("--methods is empty".into()));
    }
    let hyper = a.hyper.resolve(Hyperparams::default());
    let levels: Vec<Option<f64>> = match a.sweep {
        Sweep::None => vec![None],
        Sweep::Noise => NOISE_SWEEP.iter().map(|&v| Some(v)).collect(),
        Sweep::Slab => SLAB_SWEEP.iter().map(|&v| Some(v)).collect(),
    };
    let cv = (a.cv_folds > 0).then_some(a.cv_folds);

    let mut runs: Vec<(Option<f64>, SignalRun)> = Vec::new();
    let mut summaries = Vec::new();
    for &level in &levels {
        let (s, h) = match (a.sweep, level) {
            (Sweep::Noise, Some(v)) => (ScenarioSpec { sigma0: v, ..spec.clone() }, hyper.clone()),
            (Sweep::Slab, Some(v)) => (
                spec.clone(),
                Hyperparams {
                    sigma_slab: v,
                    ..hyper.clone()
                },
            ),
            _ => (spec.clone(), hyper.clone()),
        };
        let level_runs = experiment::run_signal(&s, a.replicates, &a.methods, &h, cv)?;
        let metrics: Vec<_> = level_runs.iter().map(SignalRun::to_metrics).collect();
        summaries.push(LevelSummary {
            level,
            rows: eval::aggregate_replicates(&metrics),
        });
        runs.extend(level_runs.into_iter().map(|r| (level, r)));
    }

    let mut out = Outputs::new(&a.out);
    out.add_with("runs.csv", |w| io::write_signal_runs(w, &runs))?;
    let pairs: Vec<(Option<f64>, Vec<eval::MetricSummary>)> =
        summaries.iter().map(|s| (s.level, s.rows.clone())).collect();
    out.add_with("summary.csv", |w| io::write_level_summary(w, &pairs))?;
    out.add_json("summary.json", &summaries)?;
    let resolved = ExperimentResolved { spec, hyper, levels };
    out.finish("experiment", &RunConfig { args: a, resolved }, Inputs::default(), None::<()>)
}
