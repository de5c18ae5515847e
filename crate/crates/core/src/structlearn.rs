//! Valid-candidate and dependency learning.
//!
//! The candidate covariance is explained by a sparse inverse (dependencies
//! among candidates given the latent instrument) minus a rank-one term (the
//! latent instrument itself). The rank-one factor scores validity; large
//! entries of the sparse part become dependency edges.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CandidateGraph, Dataset};
use crate::error::{IvyError, Result};
use crate::scalar::Real;

/// Floor applied to denominators of consecutive score ratios.
const RATIO_FLOOR: f64 = 1e-12;
/// A score gap counts as a model only above this ratio.
const GAP_RATIO: f64 = 10.0;
/// Standard errors of a null validity score used as the ratio floor.
pub const NOISE_FLOOR_SE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub gamma: f64,
    /// Validity threshold on `|Σ̂ ℓ̂|`.
    pub t1: f64,
    /// Edge threshold on `|Ŝ_ij|`; `+∞` means conditionally independent.
    pub t2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Lower bound on the smallest eigenvalue of `S - L`.
    pub eps_pd: f64,
    /// Relative objective change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { eps_pd: 1e-6, tol: 1e-6, max_iter: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct DecompositionResult<T: Real> {
    pub s: DMatrix<T>,
    pub l: DMatrix<T>,
    pub ell: DVector<T>,
    pub objective_trace: Vec<T>,
    pub converged: bool,
}

/// `Σ̂ = (1/n) Σ_i w_i w_iᵀ − w̄ w̄ᵀ`.
pub fn sample_covariance<T: Real>(ds: &Dataset) -> DMatrix<T> {
    let (n, m) = (ds.n(), ds.m());
    let w = DMatrix::<f64>::from_row_iterator(n, m, ds.candidates().iter().map(|&v| v as f64));
    // integer-valued products are exact in f64 for any practical n
    let gram = w.tr_mul(&w);
    let sums = w.row_sum();
    let nf = n as f64;
    DMatrix::from_fn(m, m, |i, j| {
        let mean_i = sums[i] / nf;
        let mean_j = sums[j] / nf;
        T::lit(gram[(i, j)] / nf - mean_i * mean_j)
    })
}

/// Indices of zero-variance columns.
pub fn degenerate_columns<T: Real>(sigma: &DMatrix<T>) -> Vec<usize> {
    (0..sigma.nrows()).filter(|&j| sigma[(j, j)] <= T::zero()).collect()
}

fn soft_threshold<T: Real>(v: T, k: T) -> T {
    if v > k {
        v - k
    } else if v < -k {
        v + k
    } else {
        T::zero()
    }
}

fn symmetrize<T: Real>(a: &mut DMatrix<T>) {
    let half = T::lit(0.5);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            let v = (a[(i, j)] + a[(j, i)]) * half;
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// `½ tr(AΣA) − tr(A)`.
fn smooth_part<T: Real>(sigma: &DMatrix<T>, a: &DMatrix<T>) -> T {
    let sa = sigma * a;
    // tr(AΣA) = Σ_ij A_ij (ΣA)_ij for symmetric A
    a.component_mul(&sa).sum() * T::lit(0.5) - a.trace()
}

fn gradient<T: Real>(sigma: &DMatrix<T>, a: &DMatrix<T>) -> DMatrix<T> {
    let sa = sigma * a;
    let mut g = (&sa + sa.transpose()) * T::lit(0.5);
    for i in 0..g.nrows() {
        g[(i, i)] -= T::one();
    }
    g
}

fn l1_norm<T: Real>(a: &DMatrix<T>) -> T {
    a.iter().fold(T::zero(), |acc, v| acc + v.abs())
}

/// Full penalised objective `½tr(AΣA) − tr(A) + λ(γ‖S‖₁ + tr L)`.
pub fn objective<T: Real>(sigma: &DMatrix<T>, s: &DMatrix<T>, l: &DMatrix<T>, lambda: T, gamma: T) -> T {
    let a = s - l;
    smooth_part(sigma, &a) + lambda * (gamma * l1_norm(s) + l.trace())
}

/// `S - L ⪰ eps·I`, checked with a Cholesky factorisation.
fn feasible<T: Real>(s: &DMatrix<T>, l: &DMatrix<T>, eps: T) -> bool {
    let mut a = s - l;
    for i in 0..a.nrows() {
        a[(i, i)] -= eps;
    }
    a.cholesky().is_some()
}

/// Prox of `k·tr(L)` on the PSD cone: eigenvalues shrunk by `k`, negatives dropped.
fn psd_shrink<T: Real>(mut a: DMatrix<T>, k: T) -> DMatrix<T> {
    symmetrize(&mut a);
    let eig = a.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| (v - k).max(T::zero()));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

/// Sparse-plus-low-rank decomposition by alternating proximal gradient steps
/// on `S` and `L` with backtracking on feasibility and sufficient decrease.
pub fn decompose<T: Real>(
    sigma: &DMatrix<T>,
    lambda: T,
    gamma: T,
    opts: &SolverOptions,
) -> Result<DecompositionResult<T>> {
    let m = sigma.nrows();
    if m != sigma.ncols() {
        return Err(IvyError::ShapeMismatch(format!("covariance is {}x{}", m, sigma.ncols())));
    }
    if m < 3 {
        return Err(IvyError::InvalidArgument(format!("decomposition needs at least 3 candidates, got {m}")));
    }
    if let Some(j) = (0..m).find(|&j| sigma[(j, j)] <= T::zero()) {
        return Err(IvyError::InvalidArgument(format!("candidate {j} has zero variance")));
    }
    let eps = T::lit(opts.eps_pd);
    let half = T::lit(0.5);
    let norm = sigma.clone().symmetric_eigen().eigenvalues.amax();
    let t0 = T::one() / norm.max(T::lit(1e-12));
    let min_step = t0 * T::lit(1e-30);

    let mut s = DMatrix::from_diagonal(&sigma.diagonal().map(|v| T::one() / v));
    let mut l = DMatrix::<T>::zeros(m, m);
    let mut f_smooth = smooth_part(sigma, &(&s - &l));
    let mut trace = vec![f_smooth + lambda * (gamma * l1_norm(&s) + l.trace())];
    let mut converged = false;

    for iteration in 1..=opts.max_iter {
        // S block
        let g = gradient(sigma, &(&s - &l));
        let mut t = t0;
        loop {
            let k = t * lambda * gamma;
            let s_new = (&s - &g * t).map(|v| soft_threshold(v, k));
            let d = &s_new - &s;
            if feasible(&s_new, &l, eps) {
                let f_new = smooth_part(sigma, &(&s_new - &l));
                let model = f_smooth + g.dot(&d) + d.norm_squared() * half / t;
                if f_new <= model + T::lit(1e-14) * (T::one() + f_smooth.abs()) {
                    s = s_new;
                    f_smooth = f_new;
                    break;
                }
            }
            t *= half;
            if t < min_step {
                break;
            }
        }

        // L block
        let g = gradient(sigma, &(&s - &l));
        let mut t = t0;
        loop {
            let l_new = psd_shrink(&l + &g * t, t * lambda);
            let d = &l_new - &l;
            if feasible(&s, &l_new, eps) {
                let f_new = smooth_part(sigma, &(&s - &l_new));
                // the smooth part's gradient with respect to L is -G
                let model = f_smooth - g.dot(&d) + d.norm_squared() * half / t;
                if f_new <= model + T::lit(1e-14) * (T::one() + f_smooth.abs()) {
                    l = l_new;
                    f_smooth = f_new;
                    break;
                }
            }
            t *= half;
            if t < min_step {
                break;
            }
        }

        let f = f_smooth + lambda * (gamma * l1_norm(&s) + l.trace());
        if !f.is_finite() {
            return Err(IvyError::NonFiniteObjective { iteration });
        }
        let prev = *trace.last().unwrap();
        trace.push(f);
        if (prev - f).abs() <= T::lit(opts.tol) * f.abs().max(T::one()) {
            converged = true;
            break;
        }
    }

    let ell = rank_one_factor(&l);
    Ok(DecompositionResult { s, l, ell, objective_trace: trace, converged })
}

/// `ℓ = sqrt(max(λ₁, 0)) v₁`, oriented so its largest-magnitude entry is positive.
pub fn rank_one_factor<T: Real>(l: &DMatrix<T>) -> DVector<T> {
    let m = l.nrows();
    if m == 0 {
        return DVector::zeros(0);
    }
    let eig = l.clone().symmetric_eigen();
    let (top, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, eig.eigenvalues[0]), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    let scale = eig.eigenvalues[top].max(T::zero()).sqrt();
    let mut ell: DVector<T> = eig.eigenvectors.column(top) * scale;
    let lead = (0..m).fold(0, |b, i| if ell[i].abs() > ell[b].abs() { i } else { b });
    if ell[lead] < T::zero() {
        ell = -ell;
    }
    ell
}

/// `|Σ̂ ℓ̂|`, proportional to `|cov(w_j, z)|`.
pub fn validity_scores<T: Real>(sigma: &DMatrix<T>, ell: &DVector<T>) -> DVector<T> {
    (sigma * ell).map(|v| v.abs())
}

/// Learned structure and the quantities it was read from.
#[derive(Debug, Clone)]
pub struct StructureFit {
    pub graph: CandidateGraph,
    /// Validity score per candidate (zero for degenerate columns).
    pub scores: Vec<f64>,
    pub hyper: Hyperparams,
    /// Sparse component over the non-degenerate candidates (`kept` order).
    pub sparse: DMatrix<f64>,
    pub kept: Vec<usize>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

struct Reduced {
    sigma: DMatrix<f64>,
    kept: Vec<usize>,
    warnings: Vec<String>,
}

fn reduce(ds: &Dataset) -> Reduced {
    let full = sample_covariance::<f64>(ds);
    let dropped = degenerate_columns(&full);
    let kept: Vec<usize> = (0..ds.m()).filter(|j| !dropped.contains(j)).collect();
    let warnings = dropped.iter().map(|j| format!("candidate {j} is constant and was marked invalid")).collect();
    let sigma = DMatrix::from_fn(kept.len(), kept.len(), |a, b| full[(kept[a], kept[b])]);
    Reduced { sigma, kept, warnings }
}

fn graph_from(
    scores: &DVector<f64>,
    s: &DMatrix<f64>,
    kept: &[usize],
    t1: f64,
    t2: f64,
) -> Result<CandidateGraph> {
    let local_valid: Vec<usize> = (0..kept.len()).filter(|&a| scores[a] >= t1).collect();
    if local_valid.len() < 3 {
        return Err(IvyError::TooFewValid { found: local_valid.len() });
    }
    let mut edges = Vec::new();
    for (x, &a) in local_valid.iter().enumerate() {
        for &b in &local_valid[x + 1..] {
            if s[(a, b)].abs() >= t2 {
                edges.push((kept[a], kept[b]));
            }
        }
    }
    CandidateGraph::new(local_valid.iter().map(|&a| kept[a]), edges)
}

/// Runs the decomposition at fixed hyperparameters and thresholds.
pub fn structure_learn(ds: &Dataset, hyper: &Hyperparams, opts: &SolverOptions) -> Result<StructureFit> {
    let red = reduce(ds);
    if red.kept.len() < 3 {
        return Err(IvyError::TooFewValid { found: red.kept.len() });
    }
    let dec = decompose(&red.sigma, hyper.lambda, hyper.gamma, opts)?;
    let scores = validity_scores(&red.sigma, &dec.ell);
    let graph = graph_from(&scores, &dec.s, &red.kept, hyper.t1, hyper.t2)?;
    Ok(finish(ds.m(), red, dec, scores, graph, *hyper))
}

fn finish(
    m: usize,
    red: Reduced,
    dec: DecompositionResult<f64>,
    scores: DVector<f64>,
    graph: CandidateGraph,
    hyper: Hyperparams,
) -> StructureFit {
    let mut full = vec![0.0; m];
    for (a, &j) in red.kept.iter().enumerate() {
        full[j] = scores[a];
    }
    let mut warnings = red.warnings;
    if !dec.converged {
        warnings.push(format!(
            "decomposition stopped after {} iterations without meeting the tolerance",
            dec.objective_trace.len() - 1
        ));
    }
    StructureFit {
        graph,
        scores: full,
        hyper,
        sparse: dec.s,
        kept: red.kept,
        converged: dec.converged,
        warnings,
    }
}

/// Largest ratio between consecutive ascending scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreGap {
    /// `τ`, the largest consecutive ratio.
    pub tau: f64,
    /// Ascending index of the larger score of the gap.
    pub index: usize,
    /// `log τ · 1(τ > 10) · exp(m − index)`.
    pub score: f64,
}

/// Sampling floor for validity scores: a candidate unrelated to `z` has
/// score `Σ_k (Σ̂_jk − Σ_jk) ℓ_k`, with standard error at most `‖ℓ‖/√n`.
pub fn noise_floor(ell_norm: f64, n: usize) -> f64 {
    (NOISE_FLOOR_SE * ell_norm / (n.max(1) as f64).sqrt()).max(RATIO_FLOOR)
}

/// Sampling floor for sparse-part entries: `NOISE_FLOOR_SE · max_i S_ii / √n`.
pub fn edge_floor(max_diagonal: f64, n: usize) -> f64 {
    NOISE_FLOOR_SE * max_diagonal / (n.max(1) as f64).sqrt()
}

/// Largest consecutive ratio with denominators floored at `floor`.
pub fn score_gap(scores: &[f64], floor: f64) -> Option<ScoreGap> {
    let m = scores.len();
    if m < 2 {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (mut tau, mut index) = (f64::NEG_INFINITY, 1);
    for k in 0..m - 1 {
        let r = sorted[k + 1] / sorted[k].max(floor.max(RATIO_FLOOR));
        if r > tau {
            tau = r;
            index = k + 1;
        }
    }
    let score = if tau > GAP_RATIO { tau.ln() * ((m - index) as f64).exp() } else { 0.0 };
    Some(ScoreGap { tau, index, score })
}

/// Validity threshold at the gap: the ascending entry `ξ·(m − t)` positions
/// from the top, clamped to the scores above the gap.
pub fn gap_threshold(scores: &[f64], gap: &ScoreGap, xi: usize) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let from_top = xi.saturating_mul(m - gap.index);
    let idx = m.saturating_sub(from_top).clamp(gap.index, m - 1);
    sorted[idx]
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Smallest value above `Q3 + 1.5·IQR`, or `+∞` when there is none.
pub fn tukey_fence(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let fence = q3 + 1.5 * (q3 - q1);
    sorted.into_iter().find(|&v| v > fence).unwrap_or(f64::INFINITY)
}

/// Default `λ` grid scaled by `sqrt(m/n)` and `γ` grid.
pub fn default_grid(m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = (m as f64 / n as f64).sqrt();
    (
        [0.01, 0.02, 0.05, 0.1].iter().map(|v| v * scale).collect(),
        vec![0.5, 1.0, 2.0],
    )
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub gap: Option<ScoreGap>,
    pub converged: bool,
}

/// Grid-searched structure plus the per-point summary.
#[derive(Debug, Clone)]
pub struct Selection {
    pub fit: StructureFit,
    pub grid: Vec<GridPoint>,
    /// True when no grid point had a gap above 10 and the largest gap was used.
    pub fallback: bool,
}

/// Scores every `(λ, γ)` pair, picks the best score gap and derives both
/// thresholds from the chosen decomposition.
pub fn select_model(
    ds: &Dataset,
    lambda_grid: &[f64],
    gamma_grid: &[f64],
    xi: usize,
    opts: &SolverOptions,
) -> Result<Selection> {
    if lambda_grid.is_empty() || gamma_grid.is_empty() {
        return Err(IvyError::InvalidArgument("hyperparameter grids must be non-empty".into()));
    }
    let red = reduce(ds);
    if red.kept.len() < 3 {
        return Err(IvyError::TooFewValid { found: red.kept.len() });
    }
    let points: Vec<(f64, f64)> =
        lambda_grid.iter().flat_map(|&l| gamma_grid.iter().map(move |&g| (l, g))).collect();
    let runs: Vec<Result<(DecompositionResult<f64>, DVector<f64>, Option<ScoreGap>)>> = points
        .par_iter()
        .map(|&(lambda, gamma)| {
            let dec = decompose(&red.sigma, lambda, gamma, opts)?;
            let scores = validity_scores(&red.sigma, &dec.ell);
            let gap = score_gap(scores.as_slice(), noise_floor(dec.ell.norm(), ds.n()));
            Ok((dec, scores, gap))
        })
        .collect();

    let mut grid = Vec::with_capacity(points.len());
    let mut best: Option<(usize, f64)> = None;
    let mut widest: Option<(usize, f64)> = None;
    let mut first_err = None;
    for (i, (run, &(lambda, gamma))) in runs.iter().zip(&points).enumerate() {
        match run {
            Ok((dec, _, gap)) => {
                grid.push(GridPoint { lambda, gamma, gap: *gap, converged: dec.converged });
                if let Some(g) = gap {
                    if g.score > 0.0 && best.is_none_or(|(_, s)| g.score > s) {
                        best = Some((i, g.score));
                    }
                    if widest.is_none_or(|(_, t)| g.tau > t) {
                        widest = Some((i, g.tau));
                    }
                }
            }
            Err(e) => {
                grid.push(GridPoint { lambda, gamma, gap: None, converged: false });
                first_err.get_or_insert_with(|| e.clone());
            }
        }
    }
    let fallback = best.is_none();
    let (chosen, _) = match best.or(widest) {
        Some(c) => c,
        None => return Err(first_err.unwrap_or(IvyError::NoQualifyingModel)),
    };
    let (lambda, gamma) = points[chosen];
    let (dec, scores, gap) = runs.into_iter().nth(chosen).unwrap().expect("chosen run succeeded");
    let gap = gap.expect("chosen run has a gap");
    let t1 = gap_threshold(scores.as_slice(), &gap, xi);

    let local_valid: Vec<usize> = (0..red.kept.len()).filter(|&a| scores[a] >= t1).collect();
    let mut off = Vec::new();
    for (x, &a) in local_valid.iter().enumerate() {
        for &b in &local_valid[x + 1..] {
            off.push(dec.s[(a, b)].abs());
        }
    }
    let diag_max = local_valid.iter().map(|&a| dec.s[(a, a)].abs()).fold(0.0, f64::max);
    let t2 = tukey_fence(&off).max(edge_floor(diag_max, ds.n()));
    let hyper = Hyperparams { lambda, gamma, t1, t2 };
    let graph = graph_from(&scores, &dec.s, &red.kept, t1, t2)?;
    let mut fit = finish(ds.m(), red, dec, scores, graph, hyper);
    if fallback {
        fit.warnings.push(format!(
            "no grid point has a score gap above {GAP_RATIO}; using the largest gap (tau = {:.4})",
            gap.tau
        ));
    }
    Ok(Selection { fit, grid, fallback })
}
