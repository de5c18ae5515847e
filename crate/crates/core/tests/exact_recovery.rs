mod common;

use common::ci_spec;
use ivy_core::datagen::{enumerate_joint, exact_moments, preset, ExactDistribution, SyntheticSpec};
use ivy_core::paramlearn::{fit_moments, ParamOptions};
use ivy_core::posterior::{MomentOptions, Posterior};
use ivy_core::CandidateGraph;

/// The CI specs used for exactness checks; every `|μ*_j| ≥ 0.05`.
fn ci_specs() -> Vec<SyntheticSpec> {
    vec![
        ci_spec(&[0.8, 0.7, 0.6], 0.5, 0),
        ci_spec(&[0.9, 0.55, 0.75, 0.6, 0.85], 0.5, 0),
        ci_spec(&[0.7; 10], 0.5, 0),
        ci_spec(&[0.525, 0.6, 0.65, 0.7, 0.95], 0.6, 2),
        ci_spec(&[0.55, 0.56, 0.57, 0.58, 0.6, 0.6, 0.62, 0.63, 0.64, 0.65], 0.6, 0),
        ci_spec(&[0.3, 0.8, 0.75, 0.7], 0.35, 0),
    ]
}

/// `E[w_j z]` by summing the joint table.
fn brute_mu(dist: &ExactDistribution) -> Vec<f64> {
    (0..dist.candidate_count())
        .map(|j| {
            let v = dist.candidate_var(j);
            dist.expectation(|s| (dist.value(s, v) * dist.value(s, ExactDistribution::Z)) as f64)
        })
        .collect()
}

/// `P(z = +1 | w_valid)` by summing the joint table over everything else.
fn brute_posterior(dist: &ExactDistribution, valid: &[usize], w: &[i8]) -> f64 {
    let matches = |s: usize| valid.iter().zip(w).all(|(&j, &v)| dist.value(s, dist.candidate_var(j)) == v);
    let joint = dist.probability(|s| matches(s) && dist.value(s, ExactDistribution::Z) > 0);
    let marginal = dist.probability(matches);
    joint / marginal
}

fn pattern(bits: usize, k: usize) -> Vec<i8> {
    (0..k).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect()
}

#[test]
fn mean_parameters_match_accuracies_and_enumeration() {
    for spec in ci_specs() {
        let dist = enumerate_joint(&spec).unwrap();
        let brute = brute_mu(&dist);
        let pop = spec.population_moments().unwrap();
        let accs = spec.valid_accuracies().unwrap();
        for (j, a) in accs.iter().enumerate() {
            assert!((pop.mu[j] - (2.0 * a - 1.0)).abs() < 1e-12);
            assert!((brute[j] - pop.mu[j]).abs() < 1e-12);
        }
        for j in accs.len()..spec.candidate_count() {
            assert!(brute[j].abs() < 1e-12);
        }
    }
}

#[test]
fn exact_moments_recover_mean_parameters() {
    for spec in ci_specs() {
        let dist = enumerate_joint(&spec).unwrap();
        let pop = exact_moments(&dist);
        let graph = spec.true_graph();
        let (mu_star, o) = pop.restrict(graph.valid());
        let opts = ParamOptions { prior_z: spec.prior_z, ..Default::default() };
        let model = fit_moments(&o, &graph, usize::MAX, &opts).unwrap();
        for (got, want) in model.mu.iter().zip(&mu_star) {
            assert!((got - want).abs() < 1e-8, "μ̂ = {got}, μ* = {want}");
        }
        assert_eq!(model.sign_violations, 0);
    }
}

#[test]
fn ci_posterior_equals_brute_force_bayes() {
    for spec in ci_specs() {
        let dist = enumerate_joint(&spec).unwrap();
        let pop = exact_moments(&dist);
        let graph = spec.true_graph();
        let (_, o) = pop.restrict(graph.valid());
        let opts = ParamOptions { prior_z: spec.prior_z, ..Default::default() };
        let model = fit_moments(&o, &graph, usize::MAX, &opts).unwrap();
        let post = Posterior::new(&model, &MomentOptions::default()).unwrap();
        let k = graph.valid().len();
        let mut row = vec![1i8; spec.candidate_count()];
        for bits in 0..1usize << k {
            let w = pattern(bits, k);
            row[..k].copy_from_slice(&w);
            let want = brute_posterior(&dist, graph.valid(), &w);
            let got = post.probability(&row);
            assert!((got - want).abs() < 1e-10, "pattern {w:?}: {got} vs {want}");
        }
    }
}

#[test]
fn clique_posterior_equals_brute_force_bayes() {
    let spec = preset("dependency_clique").unwrap();
    let dist = enumerate_joint(&spec).unwrap();
    let pop = exact_moments(&dist);
    let graph = spec.true_graph();
    let (mu_star, o) = pop.restrict(graph.valid());
    let model = fit_moments(&o, &graph, usize::MAX, &ParamOptions::default()).unwrap();
    for (got, want) in model.mu.iter().zip(&mu_star) {
        assert!((got - want).abs() < 1e-8);
    }
    let tight = MomentOptions { tol: 1e-13, ..Default::default() };
    let post = Posterior::new(&model, &tight).unwrap();
    let k = graph.valid().len();
    for bits in 0..1usize << k {
        let w = pattern(bits, k);
        let want = brute_posterior(&dist, graph.valid(), &w);
        let got = post.probability(&w);
        assert!((got - want).abs() < 1e-9, "pattern {w:?}: {got} vs {want}");
    }
}

#[test]
fn three_candidate_example() {
    let spec = ci_spec(&[0.8, 0.7, 0.6], 0.5, 0);
    let pop = spec.population_moments().unwrap();
    let graph = CandidateGraph::conditionally_independent(3);
    let (_, o) = pop.restrict(graph.valid());
    // O_12 = 0.24, O_13 = 0.12, O_23 = 0.08
    assert!((o[(0, 1)] - 0.24).abs() < 1e-12);
    assert!((o[(0, 2)] - 0.12).abs() < 1e-12);
    assert!((o[(1, 2)] - 0.08).abs() < 1e-12);
    let model = fit_moments(&o, &graph, usize::MAX, &ParamOptions::default()).unwrap();
    for (got, want) in model.mu.iter().zip([0.6, 0.4, 0.2]) {
        assert!((got - want).abs() < 1e-12);
    }
}
