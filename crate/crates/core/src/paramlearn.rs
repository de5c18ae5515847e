//! Accuracy recovery from second moments.
//!
//! For candidates in different cliques, `E[w_i w_j] = μ_i μ_j` with
//! `μ_j = E[w_j z]`. Taking logs of the squares gives a linear system in
//! `log μ_j²`; signs follow from the signs of the observed moments.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::data::{CandidateGraph, Dataset};
use crate::error::{IvyError, Result};
use crate::posterior::CliqueParams;
use crate::scalar::Real;

/// Default clip margin: `|μ̂_j| ≤ 1 − 1e−3`.
pub const DEFAULT_CLIP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamOptions {
    pub prior_z: f64,
    /// Divide by `n − 1` instead of `n` when forming `Ô`.
    pub unbiased: bool,
    pub clip: f64,
    /// Pairs with `|Ô_ij|` below this are dropped; `None` uses `max(1/n, 1e−8)`.
    pub eps_o: Option<f64>,
}

impl Default for ParamOptions {
    fn default() -> Self {
        ParamOptions { prior_z: 0.5, unbiased: false, clip: DEFAULT_CLIP, eps_o: None }
    }
}

/// `Ô = (1/n) Σ_i w_V w_Vᵀ` over the listed candidates; the diagonal is exactly 1.
pub fn second_moment<T: Real>(ds: &Dataset, rows: Option<&[usize]>, cols: &[usize], unbiased: bool) -> DMatrix<T> {
    let k = cols.len();
    let mut counts = vec![0i64; k * k];
    let mut accumulate = |row: &[i8]| {
        for a in 0..k {
            let va = row[cols[a]] as i64;
            for b in (a + 1)..k {
                counts[a * k + b] += va * row[cols[b]] as i64;
            }
        }
    };
    let n = match rows {
        Some(rows) => {
            rows.iter().for_each(|&i| accumulate(ds.row(i)));
            rows.len()
        }
        None => {
            (0..ds.n()).for_each(|i| accumulate(ds.row(i)));
            ds.n()
        }
    };
    let denom = if unbiased { (n as f64 - 1.0).max(1.0) } else { n as f64 };
    DMatrix::from_fn(k, k, |a, b| match a.cmp(&b) {
        std::cmp::Ordering::Equal => T::one(),
        std::cmp::Ordering::Less => T::lit(counts[a * k + b] as f64 / denom),
        std::cmp::Ordering::Greater => T::lit(counts[b * k + a] as f64 / denom),
    })
}

/// Pairs of valid candidates lying in different cliques, as candidate indices.
pub fn cond_indep_pairs(graph: &CandidateGraph) -> Vec<(usize, usize)> {
    let valid = graph.valid();
    let clique_of = |j: usize| graph.cliques().iter().position(|c| c.contains(&j)).unwrap();
    let labels: Vec<usize> = valid.iter().map(|&j| clique_of(j)).collect();
    let mut pairs = Vec::new();
    for a in 0..valid.len() {
        for b in (a + 1)..valid.len() {
            if labels[a] != labels[b] {
                pairs.push((valid[a], valid[b]));
            }
        }
    }
    pairs
}

/// `M ℓ = q` over local candidate positions.
#[derive(Debug, Clone)]
pub struct MomentSystem<T: Real> {
    /// Pairs used as rows (local positions).
    pub pairs: Vec<(usize, usize)>,
    pub design: DMatrix<T>,
    pub q: DVector<T>,
    pub dropped_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Builds the log-moment system from `Ô` and local-position pairs.
pub fn build_system<T: Real>(o_hat: &DMatrix<T>, pairs: &[(usize, usize)], eps_o: T) -> Result<MomentSystem<T>> {
    let k = o_hat.nrows();
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    let mut warnings = Vec::new();
    for &(a, b) in pairs {
        if a >= k || b >= k || a == b {
            return Err(IvyError::InvalidArgument(format!("pair ({a}, {b}) is not within {k} candidates")));
        }
        if o_hat[(a, b)].abs() >= eps_o {
            used.push((a, b));
        } else {
            dropped.push((a, b));
            warnings.push(format!(
                "pair ({a}, {b}) dropped: |O_ab| = {:e} below the floor",
                o_hat[(a, b)].as_f64().abs()
            ));
        }
    }
    let mut partners = vec![Vec::new(); k];
    for &(a, b) in &used {
        partners[a].push(b);
        partners[b].push(a);
    }
    if let Some(j) = (0..k).find(|&j| partners[j].len() < 2) {
        return Err(IvyError::RankDeficient(format!(
            "candidate at position {j} has {} usable partner(s); at least 2 are needed",
            partners[j].len()
        )));
    }
    let mut design = DMatrix::<T>::zeros(used.len(), k);
    let mut q = DVector::<T>::zeros(used.len());
    for (r, &(a, b)) in used.iter().enumerate() {
        design[(r, a)] = T::one();
        design[(r, b)] = T::one();
        let o = o_hat[(a, b)];
        q[r] = (o * o).ln();
    }
    let sv = design.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= smax * T::lit(1e-10) {
        return Err(IvyError::RankDeficient(format!(
            "pair design over {k} candidates is singular (pair graph is bipartite)"
        )));
    }
    Ok(MomentSystem { pairs: used, design, q, dropped_pairs: dropped, warnings })
}

/// Least-squares `ℓ̂ = argmin ‖Mℓ − q‖` via QR.
pub fn solve_log_magnitudes<T: Real>(system: &MomentSystem<T>) -> DVector<T> {
    let qr = system.design.clone().qr();
    let rhs = qr.q().transpose() * &system.q;
    qr.r().solve_upper_triangular(&rhs).expect("design has full column rank")
}

/// `|μ̂_j| = exp(ℓ̂_j / 2)` clipped to `[0, 1 − clip]`.
pub fn solve_magnitudes<T: Real>(system: &MomentSystem<T>, clip: T) -> DVector<T> {
    let cap = T::one() - clip;
    solve_log_magnitudes(system).map(|l| (l * T::lit(0.5)).exp().min(cap))
}

#[derive(Debug, Clone)]
pub struct SignRecovery<T: Real> {
    pub mu: DVector<T>,
    /// Constraints `s_i s_j = sign(Ô_ij)` not satisfied by the spanning-tree assignment.
    pub violations: usize,
    pub components: usize,
    pub warnings: Vec<String>,
}

/// Breadth-first sign propagation over the pair graph, then a per-component
/// flip so the signed magnitudes sum to a positive value.
pub fn recover_signs<T: Real>(abs_mu: &DVector<T>, o_hat: &DMatrix<T>, pairs: &[(usize, usize)]) -> SignRecovery<T> {
    let k = abs_mu.len();
    let mut adj: Vec<Vec<(usize, bool)>> = vec![Vec::new(); k];
    for &(a, b) in pairs {
        let positive = o_hat[(a, b)] >= T::zero();
        adj[a].push((b, positive));
        adj[b].push((a, positive));
    }
    let mut sign = vec![0i8; k];
    let mut violations = 0;
    let mut components = 0;
    for root in 0..k {
        if sign[root] != 0 {
            continue;
        }
        components += 1;
        sign[root] = 1;
        let mut members = vec![root];
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &(j, positive) in &adj[i] {
                let want = if positive { sign[i] } else { -sign[i] };
                if sign[j] == 0 {
                    sign[j] = want;
                    members.push(j);
                    queue.push_back(j);
                } else if sign[j] != want && i < j {
                    violations += 1;
                }
            }
        }
        let total = members.iter().fold(T::zero(), |acc, &j| acc + abs_mu[j] * T::lit(sign[j] as f64));
        if total < T::zero() {
            members.iter().for_each(|&j| sign[j] = -sign[j]);
        }
    }
    let mut warnings = Vec::new();
    if components > 1 {
        warnings.push(format!("sign graph has {components} components; each was oriented separately"));
    }
    if violations > 0 {
        warnings.push(format!("{violations} sign constraint(s) violated"));
    }
    let mu = DVector::from_fn(k, |j, _| abs_mu[j] * T::lit(sign[j] as f64));
    SignRecovery { mu, violations, components, warnings }
}

/// Mean parameters of the valid candidates plus what is needed for inference.
#[derive(Debug, Clone)]
pub struct IvyModel {
    pub graph: CandidateGraph,
    /// `μ̂` in the order of `graph.valid()`.
    pub mu: Vec<f64>,
    /// `Ô` in the order of `graph.valid()`.
    pub second_moment: DMatrix<f64>,
    pub prior_z: f64,
    /// Sample means `E[w_j]` in valid order; empty when fitted from moments alone.
    pub means: Vec<f64>,
    pub clique_params: Vec<CliqueParams>,
    /// `|μ̂|` before clipping.
    pub raw_magnitudes: Vec<f64>,
    pub sign_violations: usize,
    pub dropped_pairs: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

/// Fits `μ̂` from a precomputed `Ô` over `graph.valid()`.
pub fn fit_moments(o_hat: &DMatrix<f64>, graph: &CandidateGraph, n: usize, opts: &ParamOptions) -> Result<IvyModel> {
    let k = graph.valid().len();
    if k < 3 {
        return Err(IvyError::TooFewValid { found: k });
    }
    if o_hat.nrows() != k || o_hat.ncols() != k {
        return Err(IvyError::ShapeMismatch(format!(
            "second moment is {}x{} for {k} valid candidates",
            o_hat.nrows(),
            o_hat.ncols()
        )));
    }
    if !(opts.prior_z > 0.0 && opts.prior_z < 1.0) {
        return Err(IvyError::InvalidArgument(format!("prior_z = {} must lie in (0, 1)", opts.prior_z)));
    }
    let eps_o = opts.eps_o.unwrap_or_else(|| (1.0 / n.max(1) as f64).max(1e-8));
    let pairs: Vec<(usize, usize)> = cond_indep_pairs(graph)
        .into_iter()
        .map(|(a, b)| (graph.local_index(a).unwrap(), graph.local_index(b).unwrap()))
        .collect();
    let system = build_system(o_hat, &pairs, eps_o)?;
    let log_mag = solve_log_magnitudes(&system);
    let raw = log_mag.map(|l| (0.5 * l).exp());
    let abs_mu = raw.map(|v| v.min(1.0 - opts.clip));
    let signs = recover_signs(&abs_mu, o_hat, &system.pairs);
    let mut warnings = system.warnings;
    warnings.extend(signs.warnings);
    Ok(IvyModel {
        graph: graph.clone(),
        mu: signs.mu.iter().copied().collect(),
        second_moment: o_hat.clone(),
        prior_z: opts.prior_z,
        means: Vec::new(),
        clique_params: Vec::new(),
        raw_magnitudes: raw.iter().copied().collect(),
        sign_violations: signs.violations,
        dropped_pairs: system
            .dropped_pairs
            .iter()
            .map(|&(a, b)| (graph.valid()[a], graph.valid()[b]))
            .collect(),
        warnings,
    })
}

/// Learns `μ̂` for the valid candidates of `graph`, optionally on a subset of rows.
pub fn param_learn(ds: &Dataset, rows: Option<&[usize]>, graph: &CandidateGraph, opts: &ParamOptions) -> Result<IvyModel> {
    let o_hat = second_moment::<f64>(ds, rows, graph.valid(), opts.unbiased);
    let n = rows.map_or(ds.n(), <[usize]>::len);
    let mut model = fit_moments(&o_hat, graph, n, opts)?;
    model.means = graph
        .valid()
        .iter()
        .map(|&j| {
            let total: i64 = match rows {
                Some(rows) => rows.iter().map(|&i| ds.row(i)[j] as i64).sum(),
                None => (0..ds.n()).map(|i| ds.row(i)[j] as i64).sum(),
            };
            total as f64 / n as f64
        })
        .collect();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci_moments(mu: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(mu.len(), mu.len(), |i, j| if i == j { 1.0 } else { mu[i] * mu[j] })
    }

    #[test]
    fn pair_counts() {
        let g = CandidateGraph::conditionally_independent(4);
        assert_eq!(cond_indep_pairs(&g).len(), 6);
        let g = CandidateGraph::new([1, 2, 3, 4], [(1, 2), (2, 3)]).unwrap();
        assert_eq!(cond_indep_pairs(&g), vec![(1, 4), (2, 4), (3, 4)]);
    }

    #[test]
    fn three_candidate_system() {
        let o = ci_moments(&[0.6, 0.4, 0.2]);
        let sys = build_system(&o, &[(0, 1), (0, 2), (1, 2)], 1e-8).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(sys.design, expected);
        let mag = solve_magnitudes(&sys, 1e-3);
        assert!((mag - DVector::from_vec(vec![0.6, 0.4, 0.2])).amax() < 1e-12);
    }

    #[test]
    fn log_of_squared_moment() {
        let mut o = ci_moments(&[0.5, 0.5, 0.5]);
        o[(0, 1)] = 0.25;
        o[(1, 0)] = 0.25;
        let sys = build_system(&o, &[(0, 1), (0, 2), (1, 2)], 1e-8).unwrap();
        assert!((sys.q[0] - 0.0625f64.ln()).abs() < 1e-12);
        assert!((sys.q[0] + 2.7726).abs() < 1e-4);
    }

    #[test]
    fn tiny_moment_is_dropped() {
        let mut o = ci_moments(&[0.5, 0.5, 0.5, 0.5]);
        o[(0, 1)] = 1e-12;
        o[(1, 0)] = 1e-12;
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        let sys = build_system(&o, &pairs, 1e-8).unwrap();
        assert_eq!(sys.dropped_pairs, vec![(0, 1)]);
        assert_eq!(sys.warnings.len(), 1);
        let sys = build_system(&o, &pairs[..3], 1e-8);
        assert!(matches!(sys, Err(IvyError::RankDeficient(_))));
    }

    #[test]
    fn bipartite_pair_graph_is_rank_deficient() {
        let o = ci_moments(&[0.5, 0.5, 0.5, 0.5]);
        let err = build_system(&o, &[(0, 2), (0, 3), (1, 2), (1, 3)], 1e-8).unwrap_err();
        assert!(matches!(err, IvyError::RankDeficient(_)));
    }

    #[test]
    fn perfect_candidates_clip() {
        let o = DMatrix::from_element(3, 3, 1.0);
        let sys = build_system(&o, &[(0, 1), (0, 2), (1, 2)], 1e-8).unwrap();
        assert!(solve_log_magnitudes(&sys).amax() < 1e-14);
        assert!(solve_magnitudes(&sys, 1e-3).iter().all(|&v| v == 0.999));
    }

    #[test]
    fn signs_with_anticorrelated_candidate() {
        let o = ci_moments(&[0.6, -0.4, 0.2]);
        let pairs = [(0, 1), (0, 2), (1, 2)];
        let rec = recover_signs(&DVector::from_vec(vec![0.6, 0.4, 0.2]), &o, &pairs);
        assert_eq!(rec.violations, 0);
        assert_eq!(rec.mu.map(f64::signum).as_slice(), &[1.0, -1.0, 1.0]);
        // exhaustive check: the recovered assignment satisfies every constraint
        for &(a, b) in &pairs {
            assert_eq!(rec.mu[a].signum() * rec.mu[b].signum(), o[(a, b)].signum());
        }
    }

    #[test]
    fn frustrated_cycle_counts_a_violation() {
        let mut o = ci_moments(&[0.5, 0.5, 0.5]);
        o[(0, 1)] = -0.25;
        o[(1, 0)] = -0.25;
        let rec = recover_signs(&DVector::from_vec(vec![0.5, 0.5, 0.5]), &o, &[(0, 1), (0, 2), (1, 2)]);
        assert_eq!(rec.violations, 1);
    }

    #[test]
    fn population_moments_are_recovered() {
        let mu = [0.6, 0.4, 0.2, -0.3, 0.5];
        let g = CandidateGraph::conditionally_independent(5);
        let model = fit_moments(&ci_moments(&mu), &g, 1_000_000, &ParamOptions::default()).unwrap();
        for (a, b) in model.mu.iter().zip(mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn too_few_valid() {
        let g = CandidateGraph::conditionally_independent(2);
        let err = fit_moments(&ci_moments(&[0.5, 0.5]), &g, 100, &ParamOptions::default()).unwrap_err();
        assert_eq!(err, IvyError::TooFewValid { found: 2 });
    }

    #[test]
    fn generic_over_f32() {
        let o = ci_moments(&[0.6, 0.4, 0.2]).map(|v| v as f32);
        let sys = build_system(&o, &[(0, 1), (0, 2), (1, 2)], 1e-6f32).unwrap();
        let mag = solve_magnitudes(&sys, 1e-3f32);
        assert!((mag[1] - 0.4).abs() < 1e-5);
    }
}
