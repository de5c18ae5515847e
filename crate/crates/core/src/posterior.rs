//! Per-row posterior `P(z = 1 | w_V)`.
//!
//! Cliques are conditionally independent given `z`, so the posterior
//! factorises into per-clique likelihood ratios. Singleton cliques use the
//! symmetric channel `P(w_j = z) = (1 + μ_j)/2`; larger cliques are fitted by
//! moment matching an Ising model over `(z, w_C)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{IvyError, Result};
use crate::paramlearn::IvyModel;
use crate::scalar::{logit, sigmoid, Real};

/// Canonical parameters of one clique's model
/// `exp(θ_z z + Σ θ_j w_j z + Σ θ_ab w_a w_b + Σ u_j w_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliqueParams {
    /// Candidate indices.
    pub members: Vec<usize>,
    /// Edges as positions within `members`.
    pub edges: Vec<(usize, usize)>,
    pub theta_z: f64,
    pub coupling: Vec<f64>,
    pub pairwise: Vec<f64>,
    /// Empty unless unary candidate terms are enabled.
    #[serde(default)]
    pub unary: Vec<f64>,
    /// Fraction by which off-diagonal targets were pulled toward `μ_a μ_b`.
    #[serde(default)]
    pub shrink: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub clique_cap: usize,
    /// Adds a unary term per candidate matched to its sample mean.
    pub unary: bool,
}

impl Default for MomentOptions {
    fn default() -> Self {
        MomentOptions { tol: 1e-8, max_iter: 200, clique_cap: 15, unary: false }
    }
}

/// Residual above which a stalled fit is declared infeasible.
const STALL_RESIDUAL: f64 = 1e-4;

/// Channel tables of one clique: `log P(w_C | z = ±1)` over lexicographic states.
#[derive(Debug, Clone)]
pub struct CliqueConditional {
    pub params: CliqueParams,
    pub log_pos: Vec<f64>,
    pub log_neg: Vec<f64>,
    /// Largest moment residual at the solution.
    pub residual: f64,
}

impl CliqueConditional {
    pub fn members(&self) -> &[usize] {
        &self.params.members
    }

    /// Lexicographic state of the clique in a full candidate row.
    #[inline]
    pub fn state(&self, row: &[i8]) -> usize {
        self.params.members.iter().fold(0, |s, &j| (s << 1) | usize::from(row[j] > 0))
    }

    /// `log P(w_C | z=+1) − log P(w_C | z=−1)` for a full candidate row.
    #[inline]
    pub fn log_ratio(&self, row: &[i8]) -> f64 {
        let s = self.state(row);
        self.log_pos[s] - self.log_neg[s]
    }
}

/// Closed-form posterior for conditionally independent candidates:
/// `σ(Σ w_j log(p_j/(1−p_j)) + logit(prior))` with `p_j = (1 + μ_j)/2`.
pub fn ci_posterior<T: Real>(w: &[i8], mu: &[T], prior_z: T) -> T {
    let two = T::lit(2.0);
    let eta = w.iter().zip(mu).fold(logit(prior_z), |acc, (&wj, &m)| {
        let p = (T::one() + m) / two;
        acc + T::lit(wj as f64) * logit(p)
    });
    sigmoid(eta)
}

/// Singleton clique as the symmetric channel.
pub fn singleton_channel(member: usize, mu: f64) -> CliqueConditional {
    let agree = ((1.0 + mu) / 2.0).ln();
    let disagree = ((1.0 - mu) / 2.0).ln();
    CliqueConditional {
        params: CliqueParams {
            members: vec![member],
            edges: Vec::new(),
            theta_z: 0.0,
            coupling: vec![mu.atanh()],
            pairwise: Vec::new(),
            unary: Vec::new(),
            shrink: 0.0,
        },
        // state 0 is w = −1, state 1 is w = +1
        log_pos: vec![disagree, agree],
        log_neg: vec![agree, disagree],
        residual: 0.0,
    }
}

/// Enumerated sufficient statistics over the `2^{k+1}` states of `(z, w_C)`.
struct Design {
    k: usize,
    /// Row per state; state index is `(z > 0) << k | w-state`.
    stats: DMatrix<f64>,
}

impl Design {
    fn new(k: usize, edges: &[(usize, usize)], unary: bool) -> Self {
        let d = 1 + k + edges.len() + if unary { k } else { 0 };
        let states = 1usize << (k + 1);
        let stats = DMatrix::from_fn(states, d, |s, c| {
            let z = if s >> k & 1 == 1 { 1.0 } else { -1.0 };
            let w = |i: usize| if (s >> (k - 1 - i)) & 1 == 1 { 1.0 } else { -1.0 };
            if c == 0 {
                z
            } else if c <= k {
                w(c - 1) * z
            } else if c <= k + edges.len() {
                let (a, b) = edges[c - 1 - k];
                w(a) * w(b)
            } else {
                w(c - 1 - k - edges.len())
            }
        });
        Design { k, stats }
    }

    /// Model probabilities and log-partition at `theta`.
    fn probabilities(&self, theta: &DVector<f64>) -> (DVector<f64>, f64) {
        let e = &self.stats * theta;
        let max = e.max();
        let log_z = max + e.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        (e.map(|v| (v - log_z).exp()), log_z)
    }
}

/// Fits canonical parameters to the target moments
/// `(E[z], E[w_j z], E[w_a w_b] for edges, E[w_j] if unary)`.
fn newton(design: &Design, target: &DVector<f64>, init: DVector<f64>, opts: &MomentOptions) -> Result<(DVector<f64>, f64)> {
    let mut theta = init;
    let loglik = |theta: &DVector<f64>| {
        let (_, log_z) = design.probabilities(theta);
        theta.dot(target) - log_z
    };
    let mut current = loglik(&theta);
    let mut residual = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (p, _) = design.probabilities(&theta);
        let mean = design.stats.tr_mul(&p);
        let grad = target - &mean;
        residual = grad.amax();
        if residual <= opts.tol {
            return Ok((theta, residual));
        }
        let weighted = DMatrix::from_fn(design.stats.nrows(), design.stats.ncols(), |s, c| design.stats[(s, c)] * p[s]);
        let hess = design.stats.tr_mul(&weighted) - &mean * mean.transpose();
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = hess + DMatrix::identity(mean.len(), mean.len()) * 1e-10;
                match ridge.lu().solve(&grad) {
                    Some(s) => s,
                    None => break,
                }
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        // near the optimum the log-likelihood is flat to round-off
        let slack = 1e-13 * (1.0 + current.abs());
        for _ in 0..40 {
            let candidate = &theta + &step * t;
            let value = loglik(&candidate);
            if value.is_finite() && value >= current - slack {
                theta = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (p, _) = design.probabilities(&theta);
    residual = residual.min((target - design.stats.tr_mul(&p)).amax());
    if residual <= STALL_RESIDUAL && residual.is_finite() {
        Ok((theta, residual))
    } else {
        Err(IvyError::InfeasibleMoments { residual })
    }
}

/// Moment matching of a single clique (no fallback).
///
/// `mu` and `second` are in member order; `means` is required only when unary
/// terms are enabled.
pub fn moment_match_clique(
    members: &[usize],
    edges: &[(usize, usize)],
    mu: &[f64],
    second: &DMatrix<f64>,
    means: Option<&[f64]>,
    prior_z: f64,
    opts: &MomentOptions,
) -> Result<CliqueConditional> {
    let k = members.len();
    if k > opts.clique_cap {
        return Err(IvyError::CliqueTooLarge { size: k, cap: opts.clique_cap });
    }
    if opts.unary && means.is_none_or(|m| m.len() != k) {
        return Err(IvyError::InvalidArgument("unary terms need one sample mean per clique member".into()));
    }
    let design = Design::new(k, edges, opts.unary);
    let mut target = Vec::with_capacity(design.stats.ncols());
    target.push(2.0 * prior_z - 1.0);
    target.extend_from_slice(mu);
    target.extend(edges.iter().map(|&(a, b)| second[(a, b)]));
    let mut init = vec![(2.0 * prior_z - 1.0).atanh()];
    init.extend(mu.iter().map(|m| m.atanh()));
    init.extend(std::iter::repeat_n(0.0, edges.len()));
    if opts.unary {
        target.extend_from_slice(means.unwrap());
        init.extend(std::iter::repeat_n(0.0, k));
    }
    let (theta, residual) = newton(&design, &DVector::from_vec(target), DVector::from_vec(init), opts)?;

    // conditional tables given z: drop the z-only term and renormalise
    let states = 1usize << k;
    let energies = &design.stats * &theta;
    let table = |zbit: usize| {
        let e: Vec<f64> = (0..states).map(|s| energies[(zbit << k) | s] - theta[0] * if zbit == 1 { 1.0 } else { -1.0 }).collect();
        let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + e.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        e.into_iter().map(|v| v - log_z).collect::<Vec<f64>>()
    };
    let ne = edges.len();
    let params = CliqueParams {
        members: members.to_vec(),
        edges: edges.to_vec(),
        theta_z: theta[0],
        coupling: theta.rows(1, k).iter().copied().collect(),
        pairwise: theta.rows(1 + k, ne).iter().copied().collect(),
        unary: if opts.unary { theta.rows(1 + k + ne, k).iter().copied().collect() } else { Vec::new() },
        shrink: 0.0,
    };
    debug_assert_eq!(design.k, k);
    Ok(CliqueConditional { params, log_pos: table(1), log_neg: table(0), residual })
}

/// Moment matching with the infeasibility fallback: off-diagonal targets are
/// pulled toward `μ_a μ_b` by the smallest fraction (to 1e−6) that converges.
pub fn fit_clique(
    members: &[usize],
    edges: &[(usize, usize)],
    mu: &[f64],
    second: &DMatrix<f64>,
    means: Option<&[f64]>,
    prior_z: f64,
    opts: &MomentOptions,
) -> Result<(CliqueConditional, Option<String>)> {
    match moment_match_clique(members, edges, mu, second, means, prior_z, opts) {
        Ok(c) => return Ok((c, None)),
        Err(IvyError::InfeasibleMoments { .. }) => {}
        Err(e) => return Err(e),
    }
    let shrunk = |s: f64| {
        DMatrix::from_fn(second.nrows(), second.ncols(), |a, b| {
            if a == b {
                1.0
            } else {
                (1.0 - s) * second[(a, b)] + s * mu[a] * mu[b]
            }
        })
    };
    let attempt = |s: f64| moment_match_clique(members, edges, mu, &shrunk(s), means, prior_z, opts);
    let mut best = attempt(1.0)?;
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        match attempt(mid) {
            Ok(c) => {
                best = c;
                hi = mid;
            }
            Err(IvyError::InfeasibleMoments { .. }) => lo = mid,
            Err(e) => return Err(e),
        }
    }
    best.params.shrink = hi;
    let warning = format!(
        "moments of clique {:?} are not realizable; off-diagonal targets shrunk by {hi:.6} toward independence",
        members
    );
    Ok((best, Some(warning)))
}

/// Posterior evaluator assembled from a fitted model.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub cliques: Vec<CliqueConditional>,
    pub prior_z: f64,
    pub warnings: Vec<String>,
}

impl Posterior {
    /// Builds per-clique channels; singleton cliques use the closed form.
    pub fn new(model: &IvyModel, opts: &MomentOptions) -> Result<Self> {
        let graph = &model.graph;
        let mut cliques = Vec::with_capacity(graph.cliques().len());
        let mut warnings = Vec::new();
        for members in graph.cliques() {
            let local: Vec<usize> = members.iter().map(|&j| graph.local_index(j).unwrap()).collect();
            if members.len() == 1 && !opts.unary {
                cliques.push(singleton_channel(members[0], model.mu[local[0]]));
                continue;
            }
            let pos = |c: usize| members.binary_search(&c).unwrap();
            let edges: Vec<(usize, usize)> = graph
                .edges()
                .iter()
                .filter(|(a, _)| members.binary_search(a).is_ok())
                .map(|&(a, b)| (pos(a), pos(b)))
                .collect();
            let mu: Vec<f64> = local.iter().map(|&a| model.mu[a]).collect();
            let second = DMatrix::from_fn(local.len(), local.len(), |a, b| model.second_moment[(local[a], local[b])]);
            let means: Option<Vec<f64>> =
                (!model.means.is_empty()).then(|| local.iter().map(|&a| model.means[a]).collect());
            let (c, warn) = fit_clique(members, &edges, &mu, &second, means.as_deref(), model.prior_z, opts)?;
            warnings.extend(warn);
            cliques.push(c);
        }
        Ok(Posterior { cliques, prior_z: model.prior_z, warnings })
    }

    /// Canonical parameters per clique, for storing in a model.
    pub fn params(&self) -> Vec<CliqueParams> {
        self.cliques.iter().map(|c| c.params.clone()).collect()
    }

    /// `P(z = 1 | w)` for a full candidate row.
    pub fn probability(&self, row: &[i8]) -> f64 {
        clique_posterior(row, &self.cliques, self.prior_z)
    }

    /// Posteriors for the given rows (all rows when `None`), in row order.
    pub fn posteriors(&self, ds: &Dataset, rows: Option<&[usize]>) -> Vec<f64> {
        match rows {
            Some(rows) => rows.par_iter().map(|&i| self.probability(ds.row(i))).collect(),
            None => (0..ds.n()).into_par_iter().map(|i| self.probability(ds.row(i))).collect(),
        }
    }
}

/// Product of clique likelihood ratios combined with the prior in log space.
pub fn clique_posterior(row: &[i8], cliques: &[CliqueConditional], prior_z: f64) -> f64 {
    let eta = cliques.iter().fold(logit(prior_z), |acc, c| acc + c.log_ratio(row));
    sigmoid(eta)
}
