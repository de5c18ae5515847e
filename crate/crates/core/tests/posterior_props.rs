mod common;

use common::ci_spec;
use ivy_core::datagen::{enumerate_joint, exact_moments, preset, presets, sample};
use ivy_core::effect::sample_summary;
use ivy_core::paramlearn::{fit_moments, param_learn, IvyModel, ParamOptions};
use ivy_core::posterior::{ci_posterior, moment_match_clique, MomentOptions, Posterior};
use ivy_core::CandidateGraph;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn pattern(bits: usize, k: usize) -> Vec<i8> {
    (0..k).map(|i| if bits >> i & 1 == 1 { 1 } else { -1 }).collect()
}

fn ci_model(mu: &[f64], prior_z: f64) -> IvyModel {
    let k = mu.len();
    let o = DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 } else { mu[a] * mu[b] });
    let opts = ParamOptions { prior_z, ..Default::default() };
    fit_moments(&o, &CandidateGraph::conditionally_independent(k), 1_000_000, &opts).unwrap()
}

#[test]
fn closed_form_examples() {
    assert_eq!(ci_posterior(&[1, -1, 1], &[0.0, 0.0, 0.0], 0.5), 0.5);
    assert!((ci_posterior(&[1], &[0.6f64], 0.5) - 0.8).abs() < 1e-15);
}

#[test]
fn singleton_cliques_match_the_closed_form() {
    let mu = [0.6, 0.3, 0.45, 0.2, 0.7];
    let model = ci_model(&mu, 0.4);
    let post = Posterior::new(&model, &MomentOptions::default()).unwrap();
    for bits in 0..32 {
        let w = pattern(bits, 5);
        let closed = ci_posterior(&w, &model.mu, 0.4);
        assert!((post.probability(&w) - closed).abs() < 1e-12);
    }
}

#[test]
fn independent_pair_has_zero_coupling() {
    let mu = [0.5, 0.3];
    let second = DMatrix::from_row_slice(2, 2, &[1.0, 0.15, 0.15, 1.0]);
    let c = moment_match_clique(&[0, 1], &[(0, 1)], &mu, &second, None, 0.5, &MomentOptions::default()).unwrap();
    assert!(c.params.pairwise[0].abs() < 1e-6, "θ_01 = {}", c.params.pairwise[0]);
    for table in [&c.log_pos, &c.log_neg] {
        let total: f64 = table.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn four_clique_tables_round_trip() {
    let spec = preset("dependency_clique").unwrap();
    let pop = exact_moments(&enumerate_joint(&spec).unwrap());
    let graph = spec.true_graph();
    let (_, o) = pop.restrict(graph.valid());
    let model = fit_moments(&o, &graph, usize::MAX, &ParamOptions::default()).unwrap();
    let post = Posterior::new(&model, &MomentOptions::default()).unwrap();
    let clique = post.cliques.iter().find(|c| c.members().len() == 4).unwrap();
    assert_eq!(clique.members(), &[4, 5, 6, 7]);

    // P(w_C | z) ∝ exp(a Σ w_j z + b Σ_{i<j} w_i w_j) with the preset's weights
    let (a, b) = (presets::DEPENDENCY_CLIQUE_COUPLING, presets::DEPENDENCY_CLIQUE_WEIGHT);
    let truth = |z: f64| {
        let weights: Vec<f64> = (0..16)
            .map(|bits| {
                let w: Vec<f64> = pattern(bits, 4).into_iter().map(f64::from).collect();
                let mut e = a * z * w.iter().sum::<f64>();
                for i in 0..4 {
                    for j in (i + 1)..4 {
                        e += b * w[i] * w[j];
                    }
                }
                e.exp()
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|v| v / total).collect::<Vec<f64>>()
    };
    for (z, table) in [(1.0, &clique.log_pos), (-1.0, &clique.log_neg)] {
        let want = truth(z);
        let mut tv = 0.0;
        let mut row = vec![1i8; 8];
        for (bits, p) in want.iter().enumerate() {
            row[4..].copy_from_slice(&pattern(bits, 4));
            tv += (table[clique.state(&row)].exp() - p).abs();
        }
        assert!(0.5 * tv < 1e-6, "total variation {}", 0.5 * tv);
    }
}

#[test]
fn clique_posterior_beats_every_single_candidate() {
    let spec = preset("dependency_clique").unwrap();
    let s = sample(&spec, 100_000, 17).unwrap();
    let ds = &s.dataset;
    let model = param_learn(ds, None, &spec.true_graph(), &ParamOptions::default()).unwrap();
    let post = Posterior::new(&model, &MomentOptions::default()).unwrap();
    let p = post.posteriors(ds, None);
    let n = ds.n() as f64;
    let hits = p.iter().zip(&s.z).filter(|(&p, &z)| (p > 0.5) == (z > 0)).count() as f64 / n;
    let best_single = (0..ds.m())
        .map(|j| ds.column(j).iter().zip(&s.z).filter(|(w, z)| w == z).count() as f64 / n)
        .fold(0.0, f64::max);
    assert!(hits > best_single, "posterior {hits} vs best candidate {best_single}");
}

#[test]
fn near_perfect_candidates_give_near_perfect_draws() {
    let spec = ci_spec(&[0.999; 5], 0.5, 0);
    let s = sample(&spec, 20_000, 2).unwrap();
    let model = param_learn(&s.dataset, None, &spec.true_graph(), &ParamOptions::default()).unwrap();
    let post = Posterior::new(&model, &MomentOptions::default()).unwrap();
    let z_hat = sample_summary(&post.posteriors(&s.dataset, None), 4);
    let agree = z_hat.iter().zip(&s.z).filter(|(a, b)| a == b).count() as f64 / s.z.len() as f64;
    assert!(agree >= 0.995, "agreement {agree}");
}

fn mu_and_row() -> impl Strategy<Value = (Vec<f64>, Vec<i8>)> {
    (1usize..10).prop_flat_map(|k| {
        (
            proptest::collection::vec(-0.999f64..0.999, k),
            proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], k),
        )
    })
}

proptest! {
    #[test]
    fn flipping_toward_a_positive_candidate_never_lowers_p(
        (mu, w) in mu_and_row(),
        prior in 0.01f64..0.99,
        j in 0usize..10,
    ) {
        let j = j % mu.len();
        prop_assume!(mu[j] > 0.0);
        let mut lo = w.clone();
        lo[j] = -1;
        let mut hi = w;
        hi[j] = 1;
        prop_assert!(ci_posterior(&hi, &mu, prior) >= ci_posterior(&lo, &mu, prior));
    }

    #[test]
    fn negation_with_swapped_prior_complements_p((mu, w) in mu_and_row(), prior in 0.01f64..0.99) {
        let neg: Vec<i8> = w.iter().map(|v| -v).collect();
        let p = ci_posterior(&w, &mu, prior);
        let q = ci_posterior(&neg, &mu, 1.0 - prior);
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_is_a_probability((mu, w) in mu_and_row(), prior in 1e-6f64..(1.0 - 1e-6)) {
        let p = ci_posterior(&w, &mu, prior);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn moment_matched_tables_are_normalised(
        mu in proptest::collection::vec(0.2f64..0.8, 3),
        rho in 0.0f64..0.3,
    ) {
        let second = DMatrix::from_fn(3, 3, |a, b| {
            if a == b { 1.0 } else { mu[a] * mu[b] + rho * (1.0 - mu[a] * mu[b]) * 0.5 }
        });
        let edges = [(0, 1), (0, 2), (1, 2)];
        if let Ok(c) = moment_match_clique(&[0, 1, 2], &edges, &mu, &second, None, 0.5, &MomentOptions::default()) {
            for table in [&c.log_pos, &c.log_neg] {
                let total: f64 = table.iter().map(|v| v.exp()).sum();
                prop_assert!((total - 1.0).abs() < 1e-10);
            }
            prop_assert!(c.residual <= 1e-8);
        }
    }
}
