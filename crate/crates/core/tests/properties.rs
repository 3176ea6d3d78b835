use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spikeslab_ep::ep::{self, InversionPath};
use spikeslab_ep::eval::{self, RankedPredictions};
use spikeslab_ep::model::{self, Combine};
use spikeslab_ep::network::{self, NetworkSpec, NodeAnnotation, ReconstructionConfig};
use spikeslab_ep::oracle;
use spikeslab_ep::sim::{self, Correlation, ScenarioSpec};
use spikeslab_ep::{Grouping, Hyperparams, Prior, RegressionData};

fn normal_pdf(x: f64, m: f64, v: f64) -> f64 {
    (-(x - m) * (x - m) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Centered regression data with a few strong coefficients.
fn random_data(seed: u64, m: usize, n: usize) -> RegressionData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(&mut rng, m, n);
    let beta = DVector::from_fn(n, |i, _| if i % 3 == 0 { rng.random_range(-3.0..3.0) } else { 0.0 });
    let noise = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
    RegressionData::centered(x.clone(), &x * beta + noise, false).unwrap()
}

fn random_grouping(seed: u64, n: usize, g: usize) -> Grouping {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..g)).collect();
    Grouping::from_labels(&labels).0
}

fn fast_hyper() -> Hyperparams {
    Hyperparams {
        max_iter: 200,
        ..Hyperparams::default()
    }
}

fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> f64 {
    eval::roc_pr(&RankedPredictions::new(scores, labels).unwrap()).unwrap().auroc
}

fn labels_with_both(seed: u64, len: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<bool> = (0..len).map(|_| rng.random_bool(0.3)).collect();
    labels[0] = true;
    labels[1] = false;
    labels
}

proptest! {
    #[test]
    fn bernoulli_product_commutes_associates_and_inverts(
        a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0
    ) {
        let p = |x, y| model::bern_combine_logit(x, y, Combine::Product);
        let q = |x, y| model::bern_combine_logit(x, y, Combine::Quotient);
        prop_assert_eq!(p(a, b), p(b, a));
        prop_assert!((p(p(a, b), c) - p(a, p(b, c))).abs() <= 1e-12);
        prop_assert!((q(p(a, b), b) - a).abs() <= 1e-12);
        // densities: sigmoid(a)sigmoid(b) : (1-sigmoid(a))(1-sigmoid(b)) is the
        // odds of the combined logit
        let odds = (model::sigmoid(a) / model::sigmoid(-a)) * (model::sigmoid(b) / model::sigmoid(-b));
        prop_assert!((odds.ln() - p(a, b)).abs() <= 1e-9 * (1.0 + p(a, b).abs()));
    }

    #[test]
    fn gaussian_product_is_density_product(
        m1 in -5.0f64..5.0, v1 in 0.2f64..5.0, m2 in -5.0f64..5.0, v2 in 0.2f64..5.0,
        points in prop::collection::vec(-3.0f64..3.0, 5)
    ) {
        let (m, v) = model::gauss_combine(m1, v1, m2, v2, Combine::Product).unwrap();
        let (m_rev, v_rev) = model::gauss_combine(m2, v2, m1, v1, Combine::Product).unwrap();
        prop_assert!((m - m_rev).abs() <= 1e-12 && (v - v_rev).abs() <= 1e-12);
        let ratios: Vec<f64> = points
            .iter()
            .map(|&x| normal_pdf(x, m1, v1) * normal_pdf(x, m2, v2) / normal_pdf(x, m, v))
            .collect();
        for r in &ratios {
            prop_assert!((r / ratios[0] - 1.0).abs() <= 1e-10);
        }
        let (mq, vq) = model::gauss_combine(m, v, m2, v2, Combine::Quotient).unwrap();
        prop_assert!((mq - m1).abs() <= 1e-9 && (vq - v1).abs() <= 1e-9);
    }

    #[test]
    fn logit_round_trip(p in 1e-12f64..(1.0 - 1e-12)) {
        prop_assert!((model::sigmoid(model::logit(p).unwrap()) - p).abs() <= 1e-12);
    }

    #[test]
    fn grouping_normalizes_labels(labels in prop::collection::vec(0u32..1000, 1..40)) {
        let (grouping, names) = Grouping::from_labels(&labels);
        let distinct: BTreeSet<_> = labels.iter().collect();
        prop_assert_eq!(grouping.n_groups(), distinct.len());
        prop_assert_eq!(names.len(), distinct.len());
        for (i, a) in labels.iter().enumerate() {
            prop_assert_eq!(&names[grouping.group_of(i)], a);
            for (j, b) in labels.iter().enumerate() {
                prop_assert_eq!(a == b, grouping.group_of(i) == grouping.group_of(j));
            }
        }
        prop_assert!(grouping.members().iter().all(|m| !m.is_empty()));
    }

    #[test]
    fn identity_grouping_is_singletons(n in 1usize..50) {
        let g = Grouping::identity(n);
        prop_assert_eq!(g.n_groups(), n);
        prop_assert!(g.is_injective());
        prop_assert!(g.members().iter().all(|m| m.len() == 1));
    }

    #[test]
    fn centering_preserves_predictions(seed in any::<u64>(), standardize in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, n) = (12, 4);
        let x = gaussian_matrix(&mut rng, m, n).map(|v| 3.0 * v + 2.0);
        let y = DVector::from_fn(m, |_, _| rng.random_range(-4.0..10.0));
        let data = RegressionData::centered(x.clone(), y, standardize).unwrap();
        let beta = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let fitted = (data.x() * &beta).add_scalar(data.y_mean());
        let predicted = data.predict(&beta, &x);
        prop_assert!((fitted - predicted).amax() <= 1e-10);
        prop_assert!(data.y().sum().abs() <= 1e-10);
        for j in 0..n {
            prop_assert!(data.x().column(j).sum().abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn refresh_paths_agree(seed in any::<u64>(), m in 3usize..25, n in 2usize..25) {
        let data = random_data(seed, m, n);
        let grouping = random_grouping(seed, n, 4);
        let hyper = fast_hyper();
        let out = ep::fit_detailed(&data, &grouping, &hyper).unwrap();
        let (md, vd) = ep::refresh_gaussian(&out.factors, &data, hyper.sigma0, InversionPath::Direct).unwrap();
        let (mw, vw) = ep::refresh_gaussian(&out.factors, &data, hyper.sigma0, InversionPath::Woodbury).unwrap();
        prop_assert!((md - mw).amax() <= 1e-8);
        prop_assert!((vd - vw).amax() <= 1e-8);
    }

    #[test]
    fn fit_state_stays_finite(seed in any::<u64>(), m in 4usize..30, n in 2usize..30) {
        let data = random_data(seed, m, n);
        let grouping = random_grouping(seed, n, 5);
        let hyper = fast_hyper();
        let out = ep::fit_detailed(&data, &grouping, &hyper).unwrap();
        let f = &out.factors;
        for v in f.r2.iter().chain(&f.r3).chain(&f.rho3).chain(&f.rho4) {
            prop_assert!(v.is_finite());
        }
        for &v in f.v2.iter() {
            prop_assert!(v > 0.0 && v.is_finite());
        }
        for i in 0..n {
            let cav = ep::cavity_f2(&out.posterior, f, i);
            if cav.is_usable() {
                let upd = ep::update_f2(cav, &hyper).unwrap();
                prop_assert!(upd.params.v2 > 0.0);
                if upd.replaced {
                    prop_assert_eq!(upd.params.v2, hyper.v_replace);
                }
            }
        }
        prop_assert!(out.posterior.v.diagonal().iter().all(|v| v.is_finite()));
        let r = &out.result;
        prop_assert!(r.mean.iter().all(|v| v.is_finite()));
        for &p in r.feature_prob.iter().chain(&r.group_prob) {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn zero_damping_freezes_parameters(seed in any::<u64>(), m in 4usize..20, n in 2usize..20) {
        let data = random_data(seed, m, n);
        let grouping = random_grouping(seed, n, 3);
        let hyper = Hyperparams { alpha0: 0.0, max_iter: 7, ..Hyperparams::default() };
        let (fs0, q0) = ep::initialize(&data, &grouping, &hyper).unwrap();
        let out = ep::fit_detailed(&data, &grouping, &hyper).unwrap();
        prop_assert_eq!(&out.factors.v2, &fs0.v2);
        prop_assert_eq!(&out.factors.m2, &fs0.m2);
        prop_assert_eq!(&out.factors.r2, &fs0.r2);
        prop_assert_eq!(&out.factors.r3, &fs0.r3);
        prop_assert_eq!(&out.factors.rho3, &fs0.rho3);
        prop_assert_eq!(&out.factors.rho4, &fs0.rho4);
        prop_assert_eq!(&out.posterior.m, &q0.m);
        prop_assert_eq!(&out.posterior.r, &q0.r);
        prop_assert_eq!(&out.posterior.rho, &q0.rho);
    }

    #[test]
    fn injective_grouping_matches_ungrouped_bitwise(seed in any::<u64>(), m in 4usize..30, n in 2usize..30) {
        let data = random_data(seed, m, n);
        let hyper = fast_hyper();
        let grouped = ep::fit(&data, &Grouping::identity(n), &hyper).unwrap();
        let flat = ep::fit_ungrouped(&data, &hyper).unwrap();
        prop_assert_eq!(grouped, flat);
    }

    #[test]
    fn fit_is_permutation_equivariant(seed in any::<u64>(), m in 10usize..30, n in 2usize..12) {
        let data = random_data(seed, m, n);
        let grouping = random_grouping(seed, n, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let p0: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.8)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);

        let hyper = Hyperparams { p0: Prior::PerItem(p0.clone()), ..fast_hyper() };
        let base = ep::fit(&data, &grouping, &hyper).unwrap();

        // column j of the permuted problem is original feature perm[j]
        let x = DMatrix::from_fn(m, n, |i, j| data.x()[(i, perm[j])]);
        let labels: Vec<usize> = perm.iter().map(|&f| grouping.group_of(f)).collect();
        let pgroup = Grouping::new(labels, grouping.n_groups()).unwrap();
        let phyper = Hyperparams {
            p0: Prior::PerItem(perm.iter().map(|&f| p0[f]).collect()),
            ..fast_hyper()
        };
        let pdata = RegressionData::new(x, data.y().clone()).unwrap();
        let permuted = ep::fit(&pdata, &pgroup, &phyper).unwrap();

        prop_assert_eq!(base.iterations, permuted.iterations);
        for (j, &f) in perm.iter().enumerate() {
            prop_assert!((base.mean[f] - permuted.mean[j]).abs() <= 1e-10);
            prop_assert!((base.feature_prob[f] - permuted.feature_prob[j]).abs() <= 1e-10);
        }
        for g in 0..grouping.n_groups() {
            prop_assert!((base.group_prob[g] - permuted.group_prob[g]).abs() <= 1e-10);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_weights_form_a_distribution(seed in any::<u64>(), n in 1usize..6, g in 1usize..4) {
        let data = random_data(seed, 12, n);
        let grouping = random_grouping(seed, n, g);
        let hyper = Hyperparams { sigma_slab: 2.0, ..Hyperparams::default() };
        let joint = oracle::enumerate_joint(&data, &grouping, &hyper).unwrap();
        let mut total = 0.0;
        for (config, w) in &joint {
            prop_assert!(*w >= 0.0);
            if !config.is_consistent(&grouping) {
                prop_assert_eq!(*w, 0.0);
            }
            total += w;
        }
        prop_assert!((total - 1.0).abs() <= 1e-12);

        let exact = oracle::enumerate_posterior(&data, &grouping, &hyper).unwrap();
        for i in 0..n {
            let z: f64 = joint.iter().filter(|(c, _)| c.z[i]).map(|(_, w)| w).sum();
            prop_assert!((z - exact.feature_prob[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn vanishing_slab_leaves_prior(seed in any::<u64>(), n in 1usize..6) {
        let data = random_data(seed, 12, n);
        let grouping = random_grouping(seed, n, 2);
        let hyper = Hyperparams {
            sigma_slab: 1e-7,
            p0: Prior::Constant(0.3),
            pi0: Prior::Constant(0.6),
            ..Hyperparams::default()
        };
        let exact = oracle::enumerate_posterior(&data, &grouping, &hyper).unwrap();
        for &p in &exact.feature_prob {
            prop_assert!((p - 0.18).abs() <= 1e-4);
        }
        for &p in &exact.group_prob {
            prop_assert!((p - 0.6).abs() <= 1e-4);
        }
    }

    #[test]
    fn simulation_is_reproducible_and_group_sparse(
        seed in any::<u64>(), replicate in 0u64..5,
        corr in prop_oneof![Just(Correlation::Independent), Just(Correlation::Pairwise), Just(Correlation::Groupwise)]
    ) {
        let spec = ScenarioSpec { corr, seed, ..ScenarioSpec::small() };
        let a = sim::simulate(&spec, replicate).unwrap();
        let b = sim::simulate(&spec, replicate).unwrap();
        prop_assert_eq!(&a.x, &b.x);
        prop_assert_eq!(&a.y, &b.y);
        prop_assert_eq!(&a.beta, &b.beta);
        prop_assert_eq!(a.grouping.assignments(), b.grouping.assignments());
        let support = a.support();
        prop_assert_eq!(support.len(), spec.k);
        let groups: BTreeSet<_> = support.iter().map(|&i| a.grouping.group_of(i)).collect();
        prop_assert!(groups.len() <= sim::ACTIVE_GROUPS);
    }

    #[test]
    fn prediction_error_is_scale_free(seed in any::<u64>(), c in 0.01f64..100.0) {
        let inst = sim::simulate(&ScenarioSpec { seed, ..ScenarioSpec::small() }, 0).unwrap();
        let beta_hat = inst.beta.map(|b| 0.9 * b);
        let e = sim::signal_prediction_error(&beta_hat, &inst.x_test, &inst.y_test).unwrap();
        let scaled = sim::signal_prediction_error(&(beta_hat * c), &inst.x_test, &(&inst.y_test * c)).unwrap();
        prop_assert!((e - scaled).abs() <= 1e-12 * e.max(1.0));
    }

    #[test]
    fn scale_free_graph_properties(seed in any::<u64>(), p in 8usize..60, g in 1usize..5, h in 1usize..6, q in 0.0f64..0.1) {
        let spec = NetworkSpec { p, g, h, q };
        let graph = network::gen_scale_free_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let again = network::gen_scale_free_graph(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(&graph, &again);
        prop_assert!(graph.edges.len() >= p - h);
        for &(a, b) in &graph.edges {
            prop_assert!(a < b && b < p);
        }
        for node in 0..p {
            if !graph.nodes.is_hub(node) {
                prop_assert!(graph.nodes.hubs.iter().any(|&hub| graph.edges.contains(&network::canonical(hub, node))));
            }
        }
        let omega = network::gen_precision(&graph, &mut ChaCha8Rng::seed_from_u64(seed));
        for i in 0..p {
            prop_assert!((omega[(i, i)] - 1.0).abs() <= 1e-12);
            for j in 0..p {
                prop_assert_eq!(omega[(i, j)], omega[(j, i)]);
                if i != j {
                    prop_assert_eq!(omega[(i, j)] != 0.0, graph.edges.contains(&network::canonical(i, j)));
                }
            }
        }
        prop_assert!(omega.clone().cholesky().is_some());
    }

    #[test]
    fn monotone_transforms_keep_auroc(seed in any::<u64>(), len in 3usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
        let labels = labels_with_both(seed, len);
        let base = auroc(scores.clone(), labels.clone());
        let exp = auroc(scores.iter().map(|s| s.exp()).collect(), labels.clone());
        let affine = auroc(scores.iter().map(|s| 7.0 * s - 2.0).collect(), labels.clone());
        let cubed = auroc(scores.iter().map(|s| s * s * s).collect(), labels.clone());
        prop_assert!((base - exp).abs() <= 1e-12);
        prop_assert!((base - affine).abs() <= 1e-12);
        prop_assert!((base - cubed).abs() <= 1e-12);
        let negated = auroc(scores.iter().map(|s| -s).collect(), labels);
        prop_assert!((base + negated - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn full_recall_precision_is_prevalence(seed in any::<u64>(), len in 3usize..80, ties in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..len)
            .map(|_| if ties { rng.random_range(0..4) as f64 } else { rng.random() })
            .collect();
        let labels = labels_with_both(seed, len);
        let preds = RankedPredictions::new(scores, labels).unwrap();
        let curves = eval::roc_pr(&preds).unwrap();
        let last = curves.points.last().unwrap();
        prop_assert_eq!(last.tpr, 1.0);
        prop_assert_eq!(last.fpr, 1.0);
        prop_assert!((last.precision - preds.k() as f64 / preds.n_star() as f64).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&curves.auroc) && (0.0..=1.0).contains(&curves.aupr));
    }

    #[test]
    fn curves_ignore_input_order(seed in any::<u64>(), len in 3usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..6) as f64).collect();
        let labels = labels_with_both(seed, len);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        let a = eval::roc_pr(&RankedPredictions::new(scores.clone(), labels.clone()).unwrap()).unwrap();
        let b = eval::roc_pr(&RankedPredictions::new(
            order.iter().map(|&i| scores[i]).collect(),
            order.iter().map(|&i| labels[i]).collect(),
        ).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn quantiles_are_ordered(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        let q1 = eval::quantile(&sorted, 0.25);
        let med = eval::median(&values);
        let q3 = eval::quantile(&sorted, 0.75);
        prop_assert!(sorted[0] <= q1 && q1 <= med && med <= q3 && q3 <= *sorted.last().unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn cv_cutoff_lies_on_grid(seed in any::<u64>(), folds in 2usize..6) {
        let inst = sim::simulate(&ScenarioSpec { seed, ..ScenarioSpec::small() }, 0).unwrap();
        let data = RegressionData::centered(inst.x.clone(), inst.y.clone(), false).unwrap();
        let hyper = Hyperparams { tol: 1e-4, max_iter: 200, ..Hyperparams::default() };
        let cv = eval::cv_cutoff_1se(&data, &inst.grouping, &hyper, folds).unwrap();
        let grid = eval::cutoff_grid();
        prop_assert!(grid.contains(&cv.cutoff));
        prop_assert_eq!(cv.curve.len(), grid.len());
    }

    #[test]
    fn edge_ranking_is_a_deterministic_total_order(seed in any::<u64>()) {
        let spec = NetworkSpec { p: 16, g: 2, h: 3, q: 0.05 };
        let (graph, sample) = network::simulate_network(&spec, 40, seed, 0).unwrap();
        let config = ReconstructionConfig { jobs: 1, ..ReconstructionConfig::default() };
        let a = network::neighborhood_selection(&sample.x_train, &graph.nodes, &config).unwrap();
        let b = network::neighborhood_selection(&sample.x_train, &graph.nodes, &config).unwrap();
        prop_assert_eq!(&a, &b);
        let mut seen = BTreeSet::new();
        for pair in a.edges.windows(2) {
            let (x, y) = (pair[0], pair[1]);
            let key = |e: network::ScoredEdge| (-e.score, -e.coefficient.abs(), e.a, e.b);
            prop_assert!(key(x).partial_cmp(&key(y)) == Some(std::cmp::Ordering::Less));
        }
        for e in &a.edges {
            prop_assert!(e.a < e.b && (0.0..=1.0).contains(&e.score));
            prop_assert!(seen.insert((e.a, e.b)));
        }
        for i in 0..spec.p {
            prop_assert_eq!(a.b_hat[(i, i)], 0.0);
        }
    }

    #[test]
    fn node_relabeling_permutes_the_ranking(seed in any::<u64>()) {
        let spec = NetworkSpec { p: 14, g: 2, h: 3, q: 0.05 };
        let (graph, sample) = network::simulate_network(&spec, 40, seed, 0).unwrap();
        let p = spec.p;
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        // old node i becomes node perm[i]
        let mut x = DMatrix::zeros(sample.x_train.nrows(), p);
        let mut groups = vec![0; p];
        for i in 0..p {
            x.set_column(perm[i], &sample.x_train.column(i));
            groups[perm[i]] = graph.nodes.node_groups[i];
        }
        let mut hubs: Vec<usize> = graph.nodes.hubs.iter().map(|&h| perm[h]).collect();
        hubs.sort();
        let nodes = NodeAnnotation { hubs, node_groups: groups };
        let config = ReconstructionConfig { jobs: 1, ..ReconstructionConfig::default() };
        let base = network::neighborhood_selection(&sample.x_train, &graph.nodes, &config).unwrap();
        let relabeled = network::neighborhood_selection(&x, &nodes, &config).unwrap();

        let scores: BTreeMap<_, _> = relabeled.edges.iter().map(|e| ((e.a, e.b), e.score)).collect();
        prop_assert_eq!(scores.len(), base.edges.len());
        for e in &base.edges {
            let s = scores[&network::canonical(perm[e.a], perm[e.b])];
            prop_assert!((s - e.score).abs() <= 1e-8);
        }
    }
}
