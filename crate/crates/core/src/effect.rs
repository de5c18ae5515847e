//! Wald-ratio effect estimation over half-split replicates, and the power
//! of the Wald test.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{CandidateGraph, Dataset};
use crate::error::{IvyError, Result};
use crate::paramlearn::{param_learn, ParamOptions};
use crate::posterior::{MomentOptions, Posterior};
use crate::rng;
use crate::scalar::{sigmoid, Real};
use crate::structlearn::quantile_sorted;

/// Slopes beyond this magnitude are reported as separated.
pub const SLOPE_CAP: f64 = 30.0;
/// Smallest first-stage slope accepted as a Wald denominator.
pub const DEFAULT_BETA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit<T: Real> {
    pub intercept: T,
    pub slope: T,
    pub converged: bool,
    pub iterations: usize,
    pub separated: bool,
    /// Euclidean norm of the log-likelihood gradient at the returned point.
    pub gradient_norm: T,
}

/// Counts `(trials, successes)` for covariate `-1` and `+1`.
fn tabulate(target: &[i8], covariate: &[i8]) -> [(f64, f64); 2] {
    let mut n = [0u64; 2];
    let mut k = [0u64; 2];
    for (&t, &c) in target.iter().zip(covariate) {
        let idx = usize::from(c > 0);
        n[idx] += 1;
        k[idx] += u64::from(t > 0);
    }
    [(n[0] as f64, k[0] as f64), (n[1] as f64, k[1] as f64)]
}

/// Intercept-plus-slope logistic MLE of a `±1` target on a `±1` covariate by
/// IRLS. Since the covariate takes two values the iteration runs on the
/// 2×2 table, which yields the same estimate as the row-level fit.
pub fn logistic_fit<T: Real>(target: &[i8], covariate: &[i8]) -> Result<LogisticFit<T>> {
    if target.len() != covariate.len() {
        return Err(IvyError::ShapeMismatch(format!(
            "target has {} rows, covariate {}",
            target.len(),
            covariate.len()
        )));
    }
    if target.len() < 4 {
        return Err(IvyError::InvalidArgument(format!("logistic fit needs at least 4 rows, got {}", target.len())));
    }
    let table = tabulate(target, covariate);
    logistic_fit_table(table)
}

/// IRLS on a tabulated design: `table[0]` for covariate `-1`, `table[1]` for `+1`.
pub fn logistic_fit_table<T: Real>(table: [(f64, f64); 2]) -> Result<LogisticFit<T>> {
    if table[0].0 == 0.0 || table[1].0 == 0.0 {
        return Err(IvyError::ConstantCovariate);
    }
    let cells = [(-T::one(), T::lit(table[0].0), T::lit(table[0].1)), (T::one(), T::lit(table[1].0), T::lit(table[1].1))];
    let gradient_and_hessian = |a: T, b: T| {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
        for &(c, n, k) in &cells {
            let p = sigmoid(a + b * c);
            let r = k - n * p;
            let w = n * p * (T::one() - p);
            g0 += r;
            g1 += r * c;
            h00 += w;
            h01 += w * c;
            h11 += w * c * c;
        }
        ([g0, g1], [h00, h01, h11])
    };
    let cap = T::lit(SLOPE_CAP);
    let tol = T::lit(1e-10);
    let (mut a, mut b) = (T::zero(), T::zero());
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let (g, h) = gradient_and_hessian(a, b);
        let det = h[0] * h[2] - h[1] * h[1];
        if !(det > T::zero()) {
            separated = true;
            break;
        }
        let da = (h[2] * g[0] - h[1] * g[1]) / det;
        let db = (h[0] * g[1] - h[1] * g[0]) / det;
        a += da;
        b += db;
        if b.abs() > cap {
            separated = true;
            break;
        }
        if da.abs().max(db.abs()) < tol {
            converged = true;
            break;
        }
    }
    if separated {
        b = if b > T::zero() { cap } else { -cap };
    }
    let (g, _) = gradient_and_hessian(a, b);
    let gradient_norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
    Ok(LogisticFit { intercept: a, slope: b, converged: converged && !separated, iterations, separated, gradient_norm })
}

/// `fit_y.slope / fit_x.slope`, rejecting first-stage slopes below `beta_min`.
pub fn wald_ratio<T: Real>(fit_y: &LogisticFit<T>, fit_x: &LogisticFit<T>, beta_min: T) -> Result<T> {
    if fit_x.slope.abs() < beta_min {
        return Err(IvyError::WeakDenominator { slope: fit_x.slope.as_f64(), min: beta_min.as_f64() });
    }
    Ok(fit_y.slope / fit_x.slope)
}

/// Draws `ẑ_i = +1` with probability `p_i`; draw `i` depends only on `(seed, i)`.
pub fn sample_summary(p: &[f64], seed: u64) -> Vec<i8> {
    const CHUNK: usize = 4096;
    let base = rng::stream(seed, rng::domain::SUMMARY_DRAW, 0);
    let mut out = vec![0i8; p.len()];
    out.par_chunks_mut(CHUNK).zip(p.par_chunks(CHUNK)).enumerate().for_each(|(c, (dst, src))| {
        let mut r = base.clone();
        // every f64 draw consumes two 32-bit words
        r.set_word_pos(2 * (c * CHUNK) as u128);
        for (d, &pi) in dst.iter_mut().zip(src) {
            *d = if r.random::<f64>() < pi { 1 } else { -1 };
        }
    });
    out
}

/// Estimator used to build the summary instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ivy,
    Uas,
    Was,
    Association,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Ivy => "ivy",
            Method::Uas => "uas",
            Method::Was => "was",
            Method::Association => "association",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ivy" => Ok(Method::Ivy),
            "uas" => Ok(Method::Uas),
            "was" => Ok(Method::Was),
            "association" | "assn" => Ok(Method::Association),
            other => Err(IvyError::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub method: Method,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Successful replicate estimates in replicate order.
    pub replicates: Vec<f64>,
    /// Rows per evaluation half.
    pub n_used: usize,
    /// Replicates that produced no estimate.
    pub failed: usize,
    pub diagnostics: Vec<String>,
}

impl EffectReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Median and 2.5/97.5 percentiles (linear interpolation) of the estimates.
pub fn summarize(method: Method, replicates: Vec<f64>, n_used: usize, failed: usize, diagnostics: Vec<String>) -> EffectReport {
    let mut sorted = replicates.clone();
    sorted.sort_by(f64::total_cmp);
    EffectReport {
        method,
        median: quantile_sorted(&sorted, 0.5),
        ci_low: quantile_sorted(&sorted, 0.025),
        ci_high: quantile_sorted(&sorted, 0.975),
        replicates,
        n_used,
        failed,
        diagnostics,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectOptions {
    pub replicates: usize,
    pub seed: u64,
    pub beta_min: f64,
    pub params: ParamOptions,
    pub moments: MomentOptions,
}

impl Default for EffectOptions {
    fn default() -> Self {
        EffectOptions {
            replicates: 1000,
            seed: 0,
            beta_min: DEFAULT_BETA_MIN,
            params: ParamOptions::default(),
            moments: MomentOptions::default(),
        }
    }
}

/// Random half split for replicate `r`: `(train, eval)`, each sorted.
pub fn half_split(n: usize, seed: u64, r: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, rng::domain::REPLICATE, r as u64));
    let mut train = idx[..n / 2].to_vec();
    let mut eval = idx[n / 2..].to_vec();
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

/// Output of one replicate.
pub struct ReplicateOutcome {
    pub estimate: Result<f64>,
    pub notes: Vec<String>,
}

/// Summary-instrument probabilities on `eval` rows given `train` rows.
pub trait SummaryBuilder: Sync {
    fn method(&self) -> Method;
    fn summarize(&self, ds: &Dataset, train: &[usize], eval: &[usize]) -> Result<(Vec<f64>, Vec<String>)>;
}

/// Fits `x ~ ẑ` and `y ~ ẑ` on the evaluation rows and returns the Wald ratio.
pub fn wald_on_rows(ds: &Dataset, eval: &[usize], p: &[f64], seed: u64, beta_min: f64, notes: &mut Vec<String>) -> Result<f64> {
    let z_hat = sample_summary(p, seed);
    let x: Vec<i8> = eval.iter().map(|&i| ds.x()[i]).collect();
    let y: Vec<i8> = eval.iter().map(|&i| ds.y()[i]).collect();
    let fit_x = logistic_fit::<f64>(&x, &z_hat)?;
    let fit_y = logistic_fit::<f64>(&y, &z_hat)?;
    if fit_x.separated || fit_y.separated {
        notes.push("logistic fit separated; slope capped".into());
    }
    wald_ratio(&fit_y, &fit_x, beta_min)
}

/// Runs the half-split protocol for any summary builder.
pub fn run_replicates(ds: &Dataset, builder: &dyn SummaryBuilder, replicates: usize, seed: u64, beta_min: f64) -> Result<EffectReport> {
    if replicates == 0 {
        return Err(IvyError::InvalidArgument("replicates must be at least 1".into()));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let (train, eval) = half_split(ds.n(), seed, r);
            let mut notes = Vec::new();
            let estimate = builder.summarize(ds, &train, &eval).and_then(|(p, warn)| {
                notes.extend(warn);
                let draw_seed = rng::child_seed(seed, rng::domain::SUMMARY_DRAW, r as u64);
                wald_on_rows(ds, &eval, &p, draw_seed, beta_min, &mut notes)
            });
            ReplicateOutcome { estimate, notes }
        })
        .collect();
    collect_report(builder.method(), outcomes, ds.n() - ds.n() / 2)
}

/// Aggregates replicate outcomes (in replicate order) into a report.
pub fn collect_report(method: Method, outcomes: Vec<ReplicateOutcome>, n_used: usize) -> Result<EffectReport> {
    let total = outcomes.len();
    let mut estimates = Vec::with_capacity(total);
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut bump = |msg: String| match counts.iter_mut().find(|(m, _)| *m == msg) {
        Some((_, c)) => *c += 1,
        None => counts.push((msg, 1)),
    };
    let mut last_error = None;
    for o in outcomes {
        for n in o.notes {
            bump(n);
        }
        match o.estimate {
            Ok(v) => estimates.push(v),
            Err(e) => {
                bump(format!("replicate dropped: {e}"));
                last_error = Some(e);
            }
        }
    }
    if estimates.is_empty() {
        return Err(IvyError::AllReplicatesFailed {
            replicates: total,
            last: last_error.map(|e| e.to_string()).unwrap_or_default(),
        });
    }
    let failed = total - estimates.len();
    let diagnostics = counts.into_iter().map(|(m, c)| format!("{m} [{c} of {total} replicates]")).collect();
    Ok(summarize(method, estimates, n_used, failed, diagnostics))
}

/// Ivy summary: parameters and clique channels re-learned on the training half.
pub struct IvySummary<'a> {
    pub graph: &'a CandidateGraph,
    pub params: ParamOptions,
    pub moments: MomentOptions,
}

impl SummaryBuilder for IvySummary<'_> {
    fn method(&self) -> Method {
        Method::Ivy
    }

    fn summarize(&self, ds: &Dataset, train: &[usize], eval: &[usize]) -> Result<(Vec<f64>, Vec<String>)> {
        let model = param_learn(ds, Some(train), self.graph, &self.params)?;
        let posterior = Posterior::new(&model, &self.moments)?;
        let mut warnings = model.warnings;
        warnings.extend(posterior.warnings.iter().cloned());
        let p = eval.iter().map(|&i| posterior.probability(ds.row(i))).collect();
        Ok((p, warnings))
    }
}

/// Ivy effect estimate with the structure held fixed.
pub fn estimate_effect(ds: &Dataset, graph: &CandidateGraph, opts: &EffectOptions) -> Result<EffectReport> {
    let builder = IvySummary { graph, params: opts.params, moments: opts.moments };
    run_replicates(ds, &builder, opts.replicates, opts.seed, opts.beta_min)
}

/// Power of the two-sided Wald test at significance `level`:
/// `1 − Φ(ζ_{level/2} − sqrt(n p1 p0) |α| |β|)`.
pub fn power(n: usize, p1: f64, p0: f64, alpha_xy: f64, beta_zx: f64, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(IvyError::InvalidArgument(format!("level {level} must lie in (0, 1)")));
    }
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p0) || (p1 + p0 - 1.0).abs() > 1e-12 {
        return Err(IvyError::InvalidArgument(format!("p1 = {p1} and p0 = {p0} must be probabilities summing to 1")));
    }
    let shift = (n as f64 * p1 * p0).sqrt() * alpha_xy.abs() * beta_zx.abs();
    if shift == 0.0 {
        return Ok(level / 2.0);
    }
    let normal = Normal::standard();
    let zeta = normal.inverse_cdf(1.0 - level / 2.0);
    // 1 − Φ(ζ − s) = Φ(s − ζ)
    Ok(normal.cdf(shift - zeta))
}
