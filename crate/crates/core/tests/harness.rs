mod common;

use common::{ci_spec, logistic_table};
use ivy_core::datagen::{enumerate_joint, exact_moments, preset, sample};
use ivy_core::evalharness::{auc, calibration, scaling_curve, validity_auc, PairSet};
use ivy_core::paramlearn::{fit_moments, ParamOptions};
use ivy_core::pipeline::StructureMode;
use ivy_core::structlearn::{default_grid, select_model, SolverOptions};
use proptest::prelude::*;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            proptest::collection::vec(-5.0f64..5.0, n),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_transforms((scores, labels) in scores_and_labels()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let base = auc(&scores, &labels).unwrap();
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s + 2.0 * s).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| s.exp() / (1.0 + s.exp())).collect();
        prop_assert!((auc(&cubed, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auc(&squashed, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn flipping_labels_complements_auc((scores, labels) in scores_and_labels()) {
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn strong_candidates_separate_from_noise() {
    let spec = ci_spec(&[0.9; 8], 0.5, 8);
    let a = validity_auc(&spec, 100_000, &StructureMode::default(), 1).unwrap();
    assert!(a >= 0.99, "AUC {a}");
}

#[test]
fn uninformative_candidates_give_chance_auc() {
    // the generator requires valid candidates to agree with z more often than not
    let spec = ci_spec(&[0.501; 8], 0.5, 8);
    let mean = (0..5).map(|seed| validity_auc(&spec, 20_000, &StructureMode::default(), seed).unwrap()).sum::<f64>() / 5.0;
    assert!((mean - 0.5).abs() <= 0.1, "mean AUC {mean}");
}

#[test]
fn calibration_smoke_run() {
    let spec = preset("calibration_null").unwrap();
    let cal = calibration(&spec, 10, 5000, 30, 4).unwrap();
    assert_eq!(cal.datasets, 10);
    let tenths = cal.coverage * 10.0;
    assert!((tenths - tenths.round()).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&cal.coverage));
}

#[test]
fn strong_effect_is_never_covered_by_zero() {
    let mut spec = preset("calibration_null").unwrap();
    spec.y_table = logistic_table(0.0, 2.0, 1.0);
    assert!(spec.population_wald_ratio() > 0.5, "ratio {}", spec.population_wald_ratio());
    let cal = calibration(&spec, 5, 10_000, 30, 2).unwrap();
    assert!(cal.coverage <= 0.2, "coverage {}", cal.coverage);
}

#[test]
fn exact_moments_have_no_parameter_error() {
    let spec = preset("calibration_null").unwrap();
    let pop = exact_moments(&enumerate_joint(&spec).unwrap());
    let graph = spec.true_graph();
    let (mu_star, o) = pop.restrict(graph.valid());
    let model = fit_moments(&o, &graph, usize::MAX, &ParamOptions::default()).unwrap();
    let err = model.mu.iter().zip(&mu_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err <= 1e-8);
}

#[test]
fn error_shrinks_like_one_over_root_n() {
    let spec = preset("calibration_null").unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    let curve = scaling_curve(&spec, &[2_500, 10_000], &seeds, PairSet::True).unwrap();
    assert_eq!(curve.points.len(), 40);
    let means = curve.mean_error();
    let ratio = means[0].1 / means[1].1;
    assert!((1.4..=2.8).contains(&ratio), "ratio {ratio}");
}

#[test]
fn misspecified_pairs_plateau() {
    let spec = preset("dependency_clique").unwrap();
    let seeds: Vec<u64> = (0..4).collect();
    let curve = scaling_curve(&spec, &[250_000, 1_000_000], &seeds, PairSet::ConditionallyIndependent).unwrap();
    let means = curve.mean_error();
    let ratio = means[1].1 / means[0].1;
    assert!(ratio >= 0.8, "error(4n)/error(n) = {ratio}");
}

#[test]
fn sampling_and_selection_ignore_thread_count() {
    let spec = preset("null_fig5a").unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let ds = sample(&spec, 30_000, 12).unwrap().dataset;
            let (lg, gg) = default_grid(ds.m(), ds.n());
            let sel = select_model(&ds, &lg, &gg, 2, &SolverOptions::default()).unwrap();
            (ds, sel.fit.scores, sel.fit.graph, sel.fit.hyper)
        })
    };
    let (d1, s1, g1, h1) = run(1);
    let (d4, s4, g4, h4) = run(4);
    assert_eq!(d1, d4);
    assert_eq!(s1, s4);
    assert_eq!(g1, g4);
    assert_eq!(h1, h4);
}
