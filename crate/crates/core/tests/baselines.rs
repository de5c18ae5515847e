mod common;

use common::{ci_spec, logistic_table};
use ivy_core::baselines::{association, fit_was, uas_summary, UasSummary};
use ivy_core::datagen::{preset, sample};
use ivy_core::effect::{run_replicates, Method};
use ivy_core::Dataset;
use proptest::prelude::*;

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (2usize..8, 5usize..40).prop_flat_map(|(m, n)| {
        proptest::collection::vec(prop_oneof![Just(-1i8), Just(1i8)], n * (m + 2)).prop_map(move |v| {
            let y = v[..n].to_vec();
            let x = v[n..2 * n].to_vec();
            let cols: Vec<Vec<i8>> = (0..m).map(|j| v[(2 + j) * n..(3 + j) * n].to_vec()).collect();
            Dataset::from_columns(y, x, &cols).unwrap()
        })
    })
}

fn negated(ds: &Dataset) -> Dataset {
    let cols: Vec<Vec<i8>> = (0..ds.m()).map(|j| ds.column(j).iter().map(|v| -v).collect()).collect();
    Dataset::from_columns(ds.y().to_vec(), ds.x().to_vec(), &cols).unwrap()
}

proptest! {
    #[test]
    fn uas_is_order_invariant(ds in dataset_strategy(), rot in 0usize..8) {
        let m = ds.m();
        let order: Vec<usize> = (0..m).map(|j| (j + rot) % m).collect();
        let shuffled = ds.select_candidates(&order).unwrap();
        prop_assert_eq!(uas_summary(&ds, None), uas_summary(&shuffled, None));
    }

    #[test]
    fn uas_negation_complements(ds in dataset_strategy()) {
        let p = uas_summary(&ds, None);
        let q = uas_summary(&negated(&ds), None);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uas_lies_in_unit_interval(ds in dataset_strategy()) {
        prop_assert!(uas_summary(&ds, None).iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn was_null_coefficients_vanish() {
    // candidates independent of x
    let spec = ci_spec(&[], 0.5, 6);
    let ds = sample(&spec, 100_000, 21).unwrap().dataset;
    let rows: Vec<usize> = (0..ds.n()).collect();
    let fit = fit_was(&ds, &rows).unwrap();
    let p_x = ds.x().iter().filter(|&&v| v > 0).count() as f64 / ds.n() as f64;
    // SE of each coefficient ≈ 1/sqrt(n p (1 − p)) for balanced ±1 covariates
    let se = 1.0 / (ds.n() as f64 * p_x * (1.0 - p_x)).sqrt();
    for j in 1..=ds.m() {
        assert!(fit.coefficients[j].abs() < 3.0 * se, "β_{j} = {}", fit.coefficients[j]);
    }
    let mean_p = rows.iter().map(|&i| fit.probability(ds.row(i))).sum::<f64>() / ds.n() as f64;
    assert!((mean_p - p_x).abs() < 1e-6);
}

#[test]
fn single_predictive_candidate_saturates() {
    let x: Vec<i8> = (0..200).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
    let ds = Dataset::from_columns(x.clone(), x.clone(), &[x.clone()]).unwrap();
    let rows: Vec<usize> = (0..200).collect();
    let fit = fit_was(&ds, &rows).unwrap();
    for (i, &xi) in x.iter().enumerate() {
        let p = fit.probability(ds.row(i));
        assert!(if xi > 0 { p > 0.99 } else { p < 0.01 });
    }
}

#[test]
fn was_ranks_like_naive_bayes_on_independent_candidates() {
    // x depends on z only, candidates are CI given z; at the population
    // level both scores are increasing in the same weighted sum
    let mut spec = ci_spec(&[0.8, 0.7, 0.65, 0.6, 0.75], 0.5, 0);
    spec.x_table = logistic_table(0.0, 1.5, 0.0);
    let ds = sample(&spec, 100_000, 8).unwrap().dataset;
    let n = ds.n();
    let rows: Vec<usize> = (0..n).collect();
    let was = fit_was(&ds, &rows).unwrap();

    // Naive Bayes with x as the class label
    let pos = ds.x().iter().filter(|&&v| v > 0).count() as f64;
    let neg = n as f64 - pos;
    let weights: Vec<(f64, f64)> = (0..ds.m())
        .map(|j| {
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..n {
                if ds.row(i)[j] > 0 {
                    if ds.x()[i] > 0 { a += 1.0 } else { b += 1.0 }
                }
            }
            let (p1, p0) = (a / pos, b / neg);
            ((p1 / p0).ln(), ((1.0 - p1) / (1.0 - p0)).ln())
        })
        .collect();
    let nb = |row: &[i8]| row.iter().zip(&weights).map(|(&w, &(up, down))| if w > 0 { up } else { down }).sum::<f64>();

    let (mut agree, mut discordant) = (0usize, 0usize);
    for k in 0..20_000 {
        let (i, j) = ((k * 7919) % n, (k * 104_729 + 13) % n);
        let (a, b) = (ds.row(i), ds.row(j));
        let d_nb = nb(a) - nb(b);
        let d_was = was.probability(a) - was.probability(b);
        if d_nb.abs() > 1e-9 && d_was.abs() > 1e-12 {
            discordant += 1;
            if d_nb.signum() == d_was.signum() {
                agree += 1;
            }
        }
    }
    let rate = agree as f64 / discordant as f64;
    assert!(rate >= 0.95, "agreement {rate} over {discordant} pairs");
}

#[test]
fn association_is_null_when_y_ignores_x() {
    let mut spec = ci_spec(&[0.7; 3], 0.5, 0);
    spec.y_table = [0.5; 4];
    let ds = sample(&spec, 20_000, 3).unwrap().dataset;
    let r = association(&ds, 50, 1).unwrap();
    assert_eq!(r.method, Method::Association);
    assert!(r.median.abs() < 0.05);
    assert!(r.covers(0.0));
}

#[test]
fn association_is_confounded_on_varying_accuracy() {
    let spec = preset("varying_accuracy").unwrap();
    let ds = sample(&spec, 20_000, 3).unwrap().dataset;
    let r = association(&ds, 50, 1).unwrap();
    assert!(r.ci_low > 0.0);
    assert!((r.median - spec.population_association()).abs() < 0.1);
}

#[test]
fn uas_feeds_the_replicate_protocol() {
    let spec = preset("calibration_null").unwrap();
    let ds = sample(&spec, 5000, 5).unwrap().dataset;
    let r = run_replicates(&ds, &UasSummary, 20, 2, 1e-3).unwrap();
    assert_eq!(r.method, Method::Uas);
    assert_eq!(r.replicates.len() + r.failed, 20);
    assert_eq!(r.n_used, 2500);
}
