//! Evaluation protocols: validity AUC, interval calibration, parameter-error
//! scaling and the invalid-instrument robustness sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{orient_candidates, CandidateGraph};
use crate::datagen::{presets, sample, SyntheticSpec};
use crate::effect::{estimate_effect, EffectOptions, EffectReport, Method};
use crate::error::{IvyError, Result};
use crate::paramlearn::{param_learn, ParamOptions};
use crate::pipeline::{learn_structure, run_pipeline, PipelineOptions, StructureMode};
use crate::rng::{child_seed, domain};
use crate::structlearn::SolverOptions;

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ordered
/// correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(IvyError::ShapeMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(IvyError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&i| labels[i]).count() as f64;
        start = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// AUC of the validity scores against the true validity labels on one
/// generated dataset. `structure` must be `Select` or `Fixed`.
pub fn validity_auc(spec: &SyntheticSpec, n: usize, structure: &StructureMode, seed: u64) -> Result<f64> {
    if matches!(structure, StructureMode::Given { .. }) {
        return Err(IvyError::InvalidArgument("validity AUC needs learned scores".into()));
    }
    let s = sample(spec, n, seed)?;
    let (ds, _) = orient_candidates(&s.dataset);
    let learned = learn_structure(&ds, structure, &SolverOptions::default())?;
    let fit = learned.fit.expect("learned structures carry their fit");
    auc(&fit.scores, &s.valid_mask)
}

/// Outcome of a calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    /// Fraction of successful datasets whose interval covers 0.
    pub coverage: f64,
    pub covered: usize,
    pub datasets: usize,
    /// Datasets whose estimate failed outright.
    pub failed: usize,
    pub medians: Vec<f64>,
}

/// Ivy interval coverage of 0 over `datasets` draws of `spec`, using the
/// spec's true structure.
pub fn calibration(spec: &SyntheticSpec, datasets: usize, n: usize, replicates: usize, seed: u64) -> Result<Calibration> {
    if datasets == 0 {
        return Err(IvyError::InvalidArgument("datasets must be at least 1".into()));
    }
    let graph = spec.true_graph();
    let prior_z = spec.prior_z;
    let runs: Vec<Result<EffectReport>> = (0..datasets)
        .into_par_iter()
        .map(|d| {
            let ds_seed = child_seed(seed, domain::DATASET, d as u64);
            let s = sample(spec, n, ds_seed)?;
            let mut opts = EffectOptions { replicates, seed: ds_seed, ..Default::default() };
            opts.params.prior_z = prior_z;
            estimate_effect(&s.dataset, &graph, &opts)
        })
        .collect();
    let mut covered = 0;
    let mut medians = Vec::new();
    for r in runs.iter().flatten() {
        covered += r.covers(0.0) as usize;
        medians.push(r.median);
    }
    let ok = medians.len();
    if ok == 0 {
        return Err(runs.into_iter().find_map(|r| r.err()).expect("every dataset failed"));
    }
    Ok(Calibration { coverage: covered as f64 / ok as f64, covered, datasets, failed: datasets - ok, medians })
}

/// One `(axis value, seed[, method])` result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: f64,
    pub seed: u64,
    pub method: Option<Method>,
    pub report: Option<EffectReport>,
    /// Error statistic for parameter sweeps.
    pub error: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis_name: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    /// Mean error per axis value over seeds, in first-seen axis order.
    pub fn mean_error(&self) -> Vec<(f64, f64)> {
        let mut acc: Vec<(f64, f64, usize)> = Vec::new();
        for p in &self.points {
            let Some(e) = p.error else { continue };
            match acc.iter_mut().find(|(a, _, _)| *a == p.axis) {
                Some((_, s, c)) => {
                    *s += e;
                    *c += 1;
                }
                None => acc.push((p.axis, e, 1)),
            }
        }
        acc.into_iter().map(|(a, s, c)| (a, s / c as f64)).collect()
    }

    pub fn find(&self, axis: f64, seed: u64, method: Method) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.axis == axis && p.seed == seed && p.method == Some(method))
    }

    /// One row per point: `axis,seed,method,median,ci_low,ci_high,error,failure`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| IvyError::InvalidArgument(format!("writing sweep CSV: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.axis_name.as_str(), "seed", "method", "median", "ci_low", "ci_high", "error", "failure"])
            .map_err(io)?;
        let num = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for p in &self.points {
            let r = p.report.as_ref();
            w.write_record([
                format!("{:?}", p.axis),
                p.seed.to_string(),
                p.method.map(|m| m.label().to_string()).unwrap_or_default(),
                num(r.map(|r| r.median)),
                num(r.map(|r| r.ci_low)),
                num(r.map(|r| r.ci_high)),
                num(p.error),
                p.failure.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| IvyError::InvalidArgument(format!("writing sweep CSV: {e}")))
    }
}

/// Which cross-clique pair set the moment system uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSet {
    /// Pairs from the spec's true dependency structure.
    True,
    /// Every pair of valid candidates, as if all were conditionally independent.
    ConditionallyIndependent,
}

/// `‖μ̂ − μ*‖₂` over the valid candidates of `spec` for every `(n, seed)`.
pub fn scaling_curve(spec: &SyntheticSpec, n_list: &[usize], seeds: &[u64], pairs: PairSet) -> Result<SweepResult> {
    let truth = spec.population_moments()?;
    let graph = match pairs {
        PairSet::True => spec.true_graph(),
        PairSet::ConditionallyIndependent => {
            let valid = spec.valid_mask().iter().enumerate().filter(|(_, &v)| v).map(|(j, _)| j).collect::<Vec<_>>();
            CandidateGraph::new(valid, [])?
        }
    };
    let opts = ParamOptions { prior_z: spec.prior_z, ..Default::default() };
    let jobs: Vec<(usize, u64)> = n_list.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let points = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let ds_seed = child_seed(seed, domain::DATASET, n as u64);
            let outcome = sample(spec, n, ds_seed).and_then(|s| param_learn(&s.dataset, None, &graph, &opts));
            let (error, failure) = match outcome {
                Ok(model) => {
                    let e = graph
                        .valid()
                        .iter()
                        .zip(&model.mu)
                        .map(|(&j, &m)| (m - truth.mu[j]).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    (Some(e), None)
                }
                Err(e) => (None, Some(e.to_string())),
            };
            SweepPoint { axis: n as f64, seed, method: None, report: None, error, failure }
        })
        .collect();
    Ok(SweepResult { axis_name: "n".into(), points })
}

/// Ivy, UAS and WAS on `invalid_z(acc)` for each accuracy, with model-selected structure.
pub fn robustness_sweep(accuracies: &[f64], n: usize, replicates: usize, seed: u64) -> Result<SweepResult> {
    if let Some(&bad) = accuracies.iter().find(|&&a| !(0.5..1.0).contains(&a)) {
        return Err(IvyError::InvalidArgument(format!("accuracy {bad} outside [0.5, 1)")));
    }
    let methods = [Method::Ivy, Method::Uas, Method::Was];
    let mut points = Vec::new();
    for (k, &acc) in accuracies.iter().enumerate() {
        let ds_seed = child_seed(seed, domain::DATASET, k as u64);
        let s = sample(&presets::invalid_z(acc), n, ds_seed)?;
        let opts = PipelineOptions {
            methods: methods.to_vec(),
            effect: EffectOptions { replicates, seed: ds_seed, ..Default::default() },
            ..Default::default()
        };
        match run_pipeline(&s.dataset, &opts) {
            Ok(out) => {
                for r in out.reports {
                    points.push(SweepPoint { axis: acc, seed: ds_seed, method: Some(r.method), report: Some(r), error: None, failure: None });
                }
                for (m, e) in out.failures {
                    points.push(SweepPoint { axis: acc, seed: ds_seed, method: Some(m), report: None, error: None, failure: Some(e.to_string()) });
                }
            }
            Err(e) => {
                for m in methods {
                    points.push(SweepPoint { axis: acc, seed: ds_seed, method: Some(m), report: None, error: None, failure: Some(e.to_string()) });
                }
            }
        }
    }
    Ok(SweepResult { axis_name: "w9_accuracy".into(), points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        // both positives outrank both negatives
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, true, false, true]).unwrap(), 1.0);
        // one tied pair: 3.5 of 4
        assert_eq!(auc(&[0.1, 0.4, 0.4, 0.8], &[false, true, false, true]).unwrap(), 0.875);
        assert_eq!(auc(&[0.2; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(auc(&[0.0, 1.0], &[false, true]).unwrap(), 1.0);
        assert!(matches!(auc(&[0.0, 1.0], &[true, true]), Err(IvyError::SingleClass)));
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let sweep = SweepResult {
            axis_name: "n".into(),
            points: vec![
                SweepPoint { axis: 100.0, seed: 1, method: None, report: None, error: Some(0.5), failure: None },
                SweepPoint { axis: 100.0, seed: 2, method: None, report: None, error: Some(0.25), failure: None },
            ],
        };
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(sweep.mean_error(), vec![(100.0, 0.375)]);
    }
}
