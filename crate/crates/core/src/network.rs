//! Scale-free graph simulation, Gaussian graphical data and network
//! reconstruction by neighborhood selection.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ep;
use crate::error::{Error, Result};
use crate::eval::RankedPredictions;
use crate::model::{Grouping, Hyperparams, RegressionData};

/// Unordered node pair stored as `(smaller, larger)`.
pub type Edge = (usize, usize);

pub fn canonical(a: usize, b: usize) -> Edge {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub p: usize,
    pub g: usize,
    pub h: usize,
    pub q: f64,
}

impl NetworkSpec {
    pub fn small() -> Self {
        Self {
            p: 100,
            g: 3,
            h: 10,
            q: 0.01,
        }
    }

    pub fn large() -> Self {
        Self {
            p: 1000,
            g: 20,
            h: 100,
            q: 0.001,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "small" => Some(Self::small()),
            "large" => Some(Self::large()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.h > self.p {
            return Err(Error::param("h", "need 1 <= H <= P"));
        }
        if self.g == 0 {
            return Err(Error::param("g", "need at least one group"));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::param("q", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Hub membership and group label of every node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeAnnotation {
    pub hubs: Vec<usize>,
    pub node_groups: Vec<usize>,
}

impl NodeAnnotation {
    pub fn n_nodes(&self) -> usize {
        self.node_groups.len()
    }

    pub fn is_hub(&self, node: usize) -> bool {
        self.hubs.binary_search(&node).is_ok()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_nodes();
        if self.hubs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("hubs", "must be sorted and unique"));
        }
        if self.hubs.last().is_some_and(|&h| h >= p) {
            return Err(Error::param("hubs", "hub index outside the node range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkGraph {
    pub p: usize,
    pub edges: BTreeSet<Edge>,
    pub nodes: NodeAnnotation,
}

impl NetworkGraph {
    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.p];
        for &(a, b) in &self.edges {
            d[a] += 1;
            d[b] += 1;
        }
        d
    }
}

/// Approximately scale-free graph. Nodes `0..H` are the hubs.
///
/// Group weights are drawn first, then hub groups, then each node in index
/// order draws its edges. A non-hub picks its group from the normalized
/// weights restricted to groups that hold at least one hub.
pub fn gen_scale_free_graph<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Result<NetworkGraph> {
    spec.validate()?;
    let NetworkSpec { p, g, h, q } = *spec;
    let weights: Vec<f64> = (0..g).map(|_| rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut node_groups = vec![0; p];
    let mut hubs_of: Vec<Vec<usize>> = vec![Vec::new(); g];
    for (hub, slot) in node_groups.iter_mut().enumerate().take(h) {
        *slot = rng.random_range(0..g);
        hubs_of[*slot].push(hub);
    }
    let hub_weights: Vec<f64> = (0..g)
        .map(|k| if hubs_of[k].is_empty() { 0.0 } else { weights[k] })
        .collect();
    let group_dist = WeightedIndex::new(&hub_weights).map_err(|e| Error::param("g", e.to_string()))?;

    let mut edges = BTreeSet::new();
    for n in 0..p {
        let group = if n < h {
            node_groups[n]
        } else {
            let k = group_dist.sample(rng);
            node_groups[n] = k;
            let hub = hubs_of[k][rng.random_range(0..hubs_of[k].len())];
            edges.insert(canonical(n, hub));
            k
        };
        for &other in &hubs_of[group] {
            if other != n && rng.random_bool(0.5) {
                edges.insert(canonical(n, other));
            }
        }
        for hub in 0..h {
            if hub != n && rng.random_bool(q) {
                edges.insert(canonical(n, hub));
            }
        }
    }
    Ok(NetworkGraph {
        p,
        edges,
        nodes: NodeAnnotation {
            hubs: (0..h).collect(),
            node_groups,
        },
    })
}

#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub x_train: DMatrix<f64>,
    pub x_test: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

/// Unit-diagonal precision matrix supported exactly on the edges plus the
/// diagonal. Edge weights are drawn in edge order: magnitude, then sign.
pub fn gen_precision<R: Rng>(graph: &NetworkGraph, rng: &mut R) -> DMatrix<f64> {
    let p = graph.p;
    let mut a: DMatrix<f64> = DMatrix::zeros(p, p);
    for &(i, j) in &graph.edges {
        let mag = rng.random_range(0.5..=1.0);
        let w = if rng.random_bool(0.5) { mag } else { -mag };
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    if graph.edges.is_empty() {
        return DMatrix::identity(p, p);
    }
    let lambda_min = a.clone().symmetric_eigenvalues().min();
    let shift = lambda_min.abs() + 0.1;
    for i in 0..p {
        a[(i, i)] += shift;
    }
    let d = DVector::from_fn(p, |i, _| 1.0 / a[(i, i)].sqrt());
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            a[(i, j)] * d[i] * d[j]
        }
    })
}

/// `m` training rows and `m` test rows drawn from `N(0, precision^-1)`.
pub fn graph_to_gaussian<R: Rng>(graph: &NetworkGraph, m: usize, rng: &mut R) -> GaussianSample {
    let precision = gen_precision(graph, rng);
    let p = graph.p;
    let cov = precision
        .clone()
        .cholesky()
        .expect("shifted precision is positive definite")
        .inverse();
    let cov = (&cov + cov.transpose()) * 0.5;
    let l = cov.cholesky().expect("covariance is positive definite").unpack();
    let lt = l.transpose();
    let draw = |rng: &mut R| DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal)) * &lt;
    let x_train = draw(rng);
    let x_test = draw(rng);
    GaussianSample {
        x_train,
        x_test,
        precision,
    }
}

/// Graph and data for replicate `replicate` of a run seeded with `seed`.
pub fn simulate_network(spec: &NetworkSpec, m: usize, seed: u64, replicate: u64) -> Result<(NetworkGraph, GaussianSample)> {
    let mut rng = crate::sim::replicate_rng(seed, replicate);
    let graph = gen_scale_free_graph(spec, &mut rng)?;
    let sample = graph_to_gaussian(&graph, m, &mut rng);
    Ok((graph, sample))
}

macro_rules! string_enum {
    ($ty:ident, $name:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    other => Err(Error::param($name, format!("unknown value `{other}`"))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $(Self::$variant => $text,)+
                })
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Every node is regressed on the hub columns other than itself.
    Hubs,
    /// Every node is regressed on all other nodes.
    All,
}
string_enum!(FeatureMode, "features", { Hubs => "hubs", All => "all" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingMode {
    Original,
    /// Original labels shuffled once across the candidate features.
    Random,
    /// Each feature in its own group.
    Ungrouped,
}
string_enum!(GroupingMode, "grouping", { Original => "original", Random => "random", Ungrouped => "ungrouped" });

/// How non-hub features are grouped when all nodes are features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonHubPolicy {
    Singleton,
    /// Non-hubs share the group label recorded for them in the annotation.
    Shared,
    /// Non-hubs with the same annotated label form a group of their own,
    /// apart from the hubs with that label.
    Separate,
}
string_enum!(NonHubPolicy, "nonhub", { Singleton => "singleton", Shared => "shared", Separate => "separate" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symmetrize {
    Max,
    Min,
}
string_enum!(Symmetrize, "symmetrize", { Max => "max", Min => "min" });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub features: FeatureMode,
    pub grouping: GroupingMode,
    pub nonhub: NonHubPolicy,
    pub symmetrize: Symmetrize,
    pub hyper: Hyperparams,
    /// Seeds the label shuffle of random grouping.
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            features: FeatureMode::Hubs,
            grouping: GroupingMode::Original,
            nonhub: NonHubPolicy::Separate,
            symmetrize: Symmetrize::Max,
            hyper: Hyperparams::network_preset(),
            seed: 0,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub a: usize,
    pub b: usize,
    pub score: f64,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFailure {
    pub node: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRanking {
    pub p: usize,
    /// Sorted by score, then absolute coefficient (both descending), then
    /// node pair.
    pub edges: Vec<ScoredEdge>,
    /// `b_hat[(i, j)]` is the coefficient of node `j` in the regression for
    /// node `i`.
    pub b_hat: DMatrix<f64>,
    pub failures: Vec<NodeFailure>,
    /// Nodes whose regression hit the iteration limit.
    pub unconverged: Vec<usize>,
}

impl EdgeRanking {
    /// Scores for all `(P^2 - P) / 2` node pairs against `truth`.
    pub fn predictions(&self, truth: &BTreeSet<Edge>) -> Result<RankedPredictions> {
        edge_predictions(self.p, &self.edges, truth)
    }
}

/// Scores for all `(P^2 - P) / 2` node pairs against `truth`; pairs that
/// were never scored rank last.
pub fn edge_predictions(p: usize, edges: &[ScoredEdge], truth: &BTreeSet<Edge>) -> Result<RankedPredictions> {
    let index = |a: usize, b: usize| a * p - a * (a + 1) / 2 + (b - a - 1);
    let valid = |a: usize, b: usize| a < b && b < p;
    let n_star = p * p.saturating_sub(1) / 2;
    let mut scores = vec![f64::NEG_INFINITY; n_star];
    let mut labels = vec![false; n_star];
    for e in edges {
        if !valid(e.a, e.b) {
            return Err(Error::param("ranking", format!("edge ({}, {}) is not a valid node pair", e.a, e.b)));
        }
        scores[index(e.a, e.b)] = e.score;
    }
    for &(a, b) in truth {
        if !valid(a, b) {
            return Err(Error::param("gold", format!("edge ({a}, {b}) is not a valid node pair")));
        }
        labels[index(a, b)] = true;
    }
    RankedPredictions::new(scores, labels)
}

/// Group label of every node for the requested mode, before restriction to
/// a particular regression.
fn feature_labels(nodes: &NodeAnnotation, candidates: &[usize], config: &ReconstructionConfig) -> Vec<usize> {
    let p = nodes.n_nodes();
    let mut labels: Vec<usize> = candidates
        .iter()
        .map(|&j| match config.grouping {
            GroupingMode::Ungrouped => p + j,
            _ if nodes.is_hub(j) => nodes.node_groups[j],
            _ => match config.nonhub {
                NonHubPolicy::Singleton => p + j,
                NonHubPolicy::Shared => nodes.node_groups[j],
                NonHubPolicy::Separate => 2 * p + nodes.node_groups[j],
            },
        })
        .collect();
    if config.grouping == GroupingMode::Random {
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    }
    labels
}

struct NodeFit {
    features: Vec<usize>,
    prob: Vec<f64>,
    mean: Vec<f64>,
    converged: bool,
}

fn fit_node(x: &DMatrix<f64>, node: usize, candidates: &[usize], labels: &[usize], hyper: &Hyperparams) -> Result<NodeFit> {
    let (features, feature_labels): (Vec<usize>, Vec<usize>) = candidates
        .iter()
        .zip(labels)
        .filter(|(&j, _)| j != node)
        .map(|(&j, &l)| (j, l))
        .unzip();
    let (grouping, _) = Grouping::from_labels(&feature_labels);
    let design = DMatrix::from_fn(x.nrows(), features.len(), |r, c| x[(r, features[c])]);
    let data = RegressionData::centered(design, x.column(node).into_owned(), false)?;
    let fit = ep::fit(&data, &grouping, hyper)?;
    Ok(NodeFit {
        features,
        prob: fit.feature_prob,
        mean: fit.mean,
        converged: fit.converged,
    })
}

fn better(candidate: (f64, f64), current: (f64, f64), rule: Symmetrize) -> bool {
    let (cp, cc) = candidate;
    let (bp, bc) = current;
    match rule {
        Symmetrize::Max if cp != bp => cp > bp,
        Symmetrize::Min if cp != bp => cp < bp,
        _ => cc.abs() > bc.abs(),
    }
}

/// One regression per node; edge scores combine the two directed inclusion
/// probabilities with `config.symmetrize`.
pub fn neighborhood_selection(x: &DMatrix<f64>, nodes: &NodeAnnotation, config: &ReconstructionConfig) -> Result<EdgeRanking> {
    nodes.validate()?;
    let p = x.ncols();
    if nodes.n_nodes() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} annotated nodes for {p} data columns",
            nodes.n_nodes()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network data"));
    }
    let candidates: Vec<usize> = match config.features {
        FeatureMode::Hubs => nodes.hubs.clone(),
        FeatureMode::All => (0..p).collect(),
    };
    let labels = feature_labels(nodes, &candidates, config);
    let run = || -> Vec<Result<NodeFit>> {
        (0..p)
            .into_par_iter()
            .map(|i| fit_node(x, i, &candidates, &labels, &config.hyper))
            .collect()
    };
    let fits = if config.jobs == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::param("jobs", e.to_string()))?
            .install(run)
    };

    let mut b_hat = DMatrix::zeros(p, p);
    let mut prob = DMatrix::from_element(p, p, f64::NAN);
    let mut failures = Vec::new();
    let mut unconverged = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Ok(f) => {
                if !f.converged {
                    unconverged.push(i);
                }
                for (k, &j) in f.features.iter().enumerate() {
                    b_hat[(i, j)] = f.mean[k];
                    prob[(i, j)] = f.prob[k];
                }
            }
            Err(e) => failures.push(NodeFailure {
                node: i,
                message: e.to_string(),
            }),
        }
    }

    let mut edges = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            let mut chosen: Option<(f64, f64)> = None;
            for (i, j) in [(a, b), (b, a)] {
                let pr = prob[(i, j)];
                if pr.is_nan() {
                    continue;
                }
                let cand = (pr, b_hat[(i, j)]);
                if chosen.is_none_or(|cur| better(cand, cur, config.symmetrize)) {
                    chosen = Some(cand);
                }
            }
            if let Some((score, coefficient)) = chosen {
                edges.push(ScoredEdge {
                    a,
                    b,
                    score,
                    coefficient,
                });
            }
        }
    }
    edges.sort_by(|x, y| {
        y.score
            .total_cmp(&x.score)
            .then(y.coefficient.abs().total_cmp(&x.coefficient.abs()))
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    Ok(EdgeRanking {
        p,
        edges,
        b_hat,
        failures,
        unconverged,
    })
}

/// Relative squared error of predicting every column from the others with
/// `b_hat`.
pub fn network_prediction_error(b_hat: &DMatrix<f64>, x_test: &DMatrix<f64>) -> Result<f64> {
    let p = x_test.ncols();
    if b_hat.nrows() != p || b_hat.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "coefficient matrix is {}x{} for {p} nodes",
            b_hat.nrows(),
            b_hat.ncols()
        )));
    }
    if (0..p).any(|i| b_hat[(i, i)] != 0.0) {
        return Err(Error::param("b_hat", "diagonal must be zero"));
    }
    let denom = x_test.norm_squared();
    if denom == 0.0 {
        return Err(Error::Undefined("prediction error with all-zero test data"));
    }
    Ok((x_test - x_test * b_hat.transpose()).norm_squared() / denom)
}
