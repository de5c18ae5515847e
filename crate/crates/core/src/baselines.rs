//! Allele-score summaries and the raw observational association.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::effect::{collect_report, half_split, logistic_fit, EffectReport, Method, ReplicateOutcome, SummaryBuilder, SLOPE_CAP};
use crate::error::{IvyError, Result};
use crate::scalar::sigmoid;

/// Ridge added to the non-intercept diagonal of the WAS Hessian.
pub const WAS_RIDGE: f64 = 1e-6;

/// Unweighted allele score: row sums min-max scaled to `[0, 1]`; constant scores map to 0.5.
pub fn uas_summary(ds: &Dataset, rows: Option<&[usize]>) -> Vec<f64> {
    let score = |i: usize| ds.row(i).iter().map(|&v| v as i64).sum::<i64>();
    let raw: Vec<i64> = match rows {
        Some(rows) => rows.iter().map(|&i| score(i)).collect(),
        None => (0..ds.n()).map(score).collect(),
    };
    let (lo, hi) = raw.iter().fold((i64::MAX, i64::MIN), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if lo == hi {
        return vec![0.5; raw.len()];
    }
    let span = (hi - lo) as f64;
    raw.into_iter().map(|s| (s - lo) as f64 / span).collect()
}

/// Multivariable logistic regression of `x` on every candidate.
#[derive(Debug, Clone)]
pub struct WasFit {
    /// Intercept followed by one coefficient per candidate.
    pub coefficients: DVector<f64>,
    pub converged: bool,
    pub capped: bool,
}

impl WasFit {
    pub fn probability(&self, row: &[i8]) -> f64 {
        let b = &self.coefficients;
        let eta = row.iter().enumerate().fold(b[0], |acc, (j, &w)| acc + b[j + 1] * w as f64);
        sigmoid(eta)
    }
}

/// IRLS with a small ridge; coefficients are clamped to `±30`.
pub fn fit_was(ds: &Dataset, train: &[usize]) -> Result<WasFit> {
    let m = ds.m();
    let d = m + 1;
    if train.len() < m + 2 {
        return Err(IvyError::InvalidArgument(format!(
            "weighted allele score needs at least {} training rows, got {}",
            m + 2,
            train.len()
        )));
    }
    let mut beta = DVector::<f64>::zeros(d);
    let mut converged = false;
    let mut capped = false;
    for _ in 0..100 {
        let (grad, hess) = train
            .par_chunks(2048)
            .map(|chunk| {
                let mut g = vec![0.0; d];
                let mut h = vec![0.0; d * d];
                let mut feat = vec![1.0; d];
                for &i in chunk {
                    for (f, &w) in feat[1..].iter_mut().zip(ds.row(i)) {
                        *f = w as f64;
                    }
                    let eta: f64 = feat.iter().zip(beta.iter()).map(|(f, b)| f * b).sum();
                    let p = sigmoid(eta);
                    let r = if ds.x()[i] > 0 { 1.0 - p } else { -p };
                    let w = p * (1.0 - p);
                    for a in 0..d {
                        g[a] += r * feat[a];
                        let wa = w * feat[a];
                        for b in a..d {
                            h[a * d + b] += wa * feat[b];
                        }
                    }
                }
                (g, h)
            })
            .reduce(
                || (vec![0.0; d], vec![0.0; d * d]),
                |(mut g1, mut h1), (g2, h2)| {
                    g1.iter_mut().zip(g2).for_each(|(a, b)| *a += b);
                    h1.iter_mut().zip(h2).for_each(|(a, b)| *a += b);
                    (g1, h1)
                },
            );
        let mut h = DMatrix::from_fn(d, d, |a, b| if a <= b { hess[a * d + b] } else { hess[b * d + a] });
        let mut g = DVector::from_vec(grad);
        for j in 1..d {
            h[(j, j)] += WAS_RIDGE;
            g[j] -= WAS_RIDGE * beta[j];
        }
        let step = h.cholesky().map(|c| c.solve(&g)).ok_or_else(|| {
            IvyError::InvalidArgument("weighted allele score Hessian is not positive definite".into())
        })?;
        beta += &step;
        let mut clamped = false;
        for v in beta.iter_mut() {
            if v.abs() > SLOPE_CAP {
                *v = v.signum() * SLOPE_CAP;
                clamped = true;
            }
        }
        capped |= clamped;
        if step.amax() < 1e-8 {
            converged = true;
            break;
        }
    }
    Ok(WasFit { coefficients: beta, converged, capped })
}

/// Weighted allele score fitted on `train` and evaluated on every row.
pub fn was_summary(ds: &Dataset, train: &[usize]) -> Result<Vec<f64>> {
    let fit = fit_was(ds, train)?;
    Ok((0..ds.n()).map(|i| fit.probability(ds.row(i))).collect())
}

pub struct UasSummary;

impl SummaryBuilder for UasSummary {
    fn method(&self) -> Method {
        Method::Uas
    }

    fn summarize(&self, ds: &Dataset, _train: &[usize], eval: &[usize]) -> Result<(Vec<f64>, Vec<String>)> {
        Ok((uas_summary(ds, Some(eval)), Vec::new()))
    }
}

pub struct WasSummary;

impl SummaryBuilder for WasSummary {
    fn method(&self) -> Method {
        Method::Was
    }

    fn summarize(&self, ds: &Dataset, train: &[usize], eval: &[usize]) -> Result<(Vec<f64>, Vec<String>)> {
        let fit = fit_was(ds, train)?;
        let mut notes = Vec::new();
        if fit.capped {
            notes.push("weighted allele score coefficients capped".to_string());
        }
        if !fit.converged {
            notes.push("weighted allele score fit did not converge".to_string());
        }
        Ok((eval.iter().map(|&i| fit.probability(ds.row(i))).collect(), notes))
    }
}

/// Slope of `y` on `x` over a random half per replicate.
pub fn association(ds: &Dataset, replicates: usize, seed: u64) -> Result<EffectReport> {
    if replicates == 0 {
        return Err(IvyError::InvalidArgument("replicates must be at least 1".into()));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let (_, eval) = half_split(ds.n(), seed, r);
            let x: Vec<i8> = eval.iter().map(|&i| ds.x()[i]).collect();
            let y: Vec<i8> = eval.iter().map(|&i| ds.y()[i]).collect();
            let mut notes = Vec::new();
            let estimate = logistic_fit::<f64>(&y, &x).map(|f| {
                if f.separated {
                    notes.push("logistic fit separated; slope capped".to_string());
                }
                f.slope
            });
            ReplicateOutcome { estimate, notes }
        })
        .collect();
    collect_report(Method::Association, outcomes, ds.n() - ds.n() / 2)
}
