//! Synthetic data-generating processes.
//!
//! A [`SyntheticSpec`] describes a latent valid instrument `z`, an unobserved
//! confounder `c`, groups of valid candidates that are conditionally
//! independent of each other given `z`, candidates tied to `c`, pure-noise
//! candidates, and the structural tables producing the risk factor `x` and the
//! outcome `y`. Candidate columns are laid out as: valid groups in order, then
//! confounder-tied candidates, then noise.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CandidateGraph, Dataset};
use crate::error::{IvyError, Result};
use crate::rng;
use crate::scalar::{logit, sigmoid};

/// Enumeration cap for the brute-force joint oracle.
pub const MAX_ENUMERATED_VARIABLES: usize = 22;
/// Largest dependent clique the sampler enumerates.
pub const MAX_DEPENDENT_CLIQUE: usize = 15;

/// Conditional table `P(v = +1 | a, b)` for binary parents, ordered
/// `(a, b) = (-,-), (-,+), (+,-), (+,+)`.
pub type BinaryTable = [f64; 4];

#[inline]
fn table_index(a: i8, b: i8) -> usize {
    2 * usize::from(a > 0) + usize::from(b > 0)
}

/// Pairwise canonical weight between two clique members (local indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidGroup {
    /// Each member equals `z` with its accuracy, independently.
    Independent { accuracies: Vec<f64> },
    /// Ising clique conditioned on `z`:
    /// `P(w_C | z) ∝ exp(Σ coupling_j w_j z + Σ weight_ab w_a w_b + Σ unary_j w_j)`.
    Dependent {
        coupling: Vec<f64>,
        pairwise: Vec<PairWeight>,
        #[serde(default)]
        unary: Vec<f64>,
    },
}

impl ValidGroup {
    pub fn len(&self) -> usize {
        match self {
            ValidGroup::Independent { accuracies } => accuracies.len(),
            ValidGroup::Dependent { coupling, .. } => coupling.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// How the confounder relates to the latent instrument.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfounderLink {
    /// `c` drawn from `prior_c`, independent of `z`.
    #[default]
    Independent,
    /// `c = z` with probability `agreement`, otherwise `-z` (instrument made invalid).
    AgreesWithZ { agreement: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub prior_z: f64,
    pub prior_c: f64,
    #[serde(default)]
    pub confounder_link: ConfounderLink,
    pub valid_groups: Vec<ValidGroup>,
    /// `P(w_k = c)` for confounder-tied invalid candidates.
    pub invalid_accuracies: Vec<f64>,
    pub noise_count: usize,
    /// `P(x = +1 | z, c)`.
    pub x_table: BinaryTable,
    /// `P(y = +1 | x, c)`.
    pub y_table: BinaryTable,
}

/// Dataset plus the hidden quantities it was generated from.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub dataset: Dataset,
    pub z: Vec<i8>,
    pub c: Vec<i8>,
    pub valid_mask: Vec<bool>,
}

/// Conditional law of one dependent clique given `z`, enumerated in
/// lexicographic order (first member most significant, `-1 < +1`).
#[derive(Debug, Clone)]
struct CliqueTables {
    size: usize,
    /// Cumulative `P(state | z = -1)` and `P(state | z = +1)`.
    cdf: [Vec<f64>; 2],
    probs: [Vec<f64>; 2],
}

/// Value (+1/-1) of member `i` in lexicographic state `s` of a `k`-member clique.
#[inline]
pub fn state_value(s: usize, i: usize, k: usize) -> i8 {
    if (s >> (k - 1 - i)) & 1 == 1 {
        1
    } else {
        -1
    }
}

impl CliqueTables {
    fn new(coupling: &[f64], pairwise: &[PairWeight], unary: &[f64]) -> Result<Self> {
        let k = coupling.len();
        if k > MAX_DEPENDENT_CLIQUE {
            return Err(IvyError::CliqueTooLarge { size: k, cap: MAX_DEPENDENT_CLIQUE });
        }
        let states = 1usize << k;
        let mut probs = [vec![0.0; states], vec![0.0; states]];
        for (zi, z) in [-1.0, 1.0].into_iter().enumerate() {
            let mut energies = Vec::with_capacity(states);
            for s in 0..states {
                let v = |i: usize| state_value(s, i, k) as f64;
                let mut e = 0.0;
                for i in 0..k {
                    e += coupling[i] * v(i) * z;
                    if let Some(u) = unary.get(i) {
                        e += u * v(i);
                    }
                }
                for p in pairwise {
                    e += p.weight * v(p.a) * v(p.b);
                }
                energies.push(e);
            }
            let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = energies.iter().map(|e| (e - max).exp()).sum();
            for s in 0..states {
                probs[zi][s] = (energies[s] - max).exp() / total;
            }
        }
        let cdf = [cumulative(&probs[0]), cumulative(&probs[1])];
        Ok(CliqueTables { size: k, cdf, probs })
    }

    fn draw(&self, z: i8, u: f64) -> usize {
        let cdf = &self.cdf[usize::from(z > 0)];
        cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
    }

    /// `E[w_i | z]`.
    fn mean(&self, i: usize, z: i8) -> f64 {
        self.probs[usize::from(z > 0)]
            .iter()
            .enumerate()
            .map(|(s, p)| p * state_value(s, i, self.size) as f64)
            .sum()
    }

    /// `E[w_i w_j | z]`.
    fn pair_mean(&self, i: usize, j: usize, z: i8) -> f64 {
        self.probs[usize::from(z > 0)]
            .iter()
            .enumerate()
            .map(|(s, p)| p * (state_value(s, i, self.size) * state_value(s, j, self.size)) as f64)
            .sum()
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(IvyError::InvalidSpec(format!("{name} = {p} is not a probability")))
    }
}

/// Which block a candidate column belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Independent { group: usize, member: usize },
    Dependent { group: usize, member: usize },
    Invalid(usize),
    Noise,
}

impl SyntheticSpec {
    pub fn valid_count(&self) -> usize {
        self.valid_groups.iter().map(ValidGroup::len).sum()
    }

    pub fn candidate_count(&self) -> usize {
        self.valid_count() + self.invalid_accuracies.len() + self.noise_count
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        let mut mask = vec![true; self.valid_count()];
        mask.resize(self.candidate_count(), false);
        mask
    }

    /// True valid set and dependency edges (pairs with non-zero canonical weight).
    pub fn true_graph(&self) -> CandidateGraph {
        let mut edges = Vec::new();
        let mut offset = 0;
        for g in &self.valid_groups {
            if let ValidGroup::Dependent { pairwise, .. } = g {
                edges.extend(
                    pairwise
                        .iter()
                        .filter(|p| p.weight != 0.0)
                        .map(|p| (offset + p.a, offset + p.b)),
                );
            }
            offset += g.len();
        }
        CandidateGraph::new(0..self.valid_count(), edges).expect("edges lie within the valid block")
    }

    fn roles(&self) -> Vec<Role> {
        let mut roles = Vec::with_capacity(self.candidate_count());
        for (gi, g) in self.valid_groups.iter().enumerate() {
            for member in 0..g.len() {
                roles.push(match g {
                    ValidGroup::Independent { .. } => Role::Independent { group: gi, member },
                    ValidGroup::Dependent { .. } => Role::Dependent { group: gi, member },
                });
            }
        }
        roles.extend((0..self.invalid_accuracies.len()).map(Role::Invalid));
        roles.extend(std::iter::repeat_n(Role::Noise, self.noise_count));
        roles
    }

    fn clique_tables(&self) -> Result<Vec<Option<CliqueTables>>> {
        self.valid_groups
            .iter()
            .map(|g| match g {
                ValidGroup::Independent { .. } => Ok(None),
                ValidGroup::Dependent { coupling, pairwise, unary } => {
                    CliqueTables::new(coupling, pairwise, unary).map(Some)
                }
            })
            .collect()
    }

    /// Checks probabilities, group shapes and the majority-agreement condition.
    pub fn validate(&self) -> Result<()> {
        check_probability("prior_z", self.prior_z)?;
        check_probability("prior_c", self.prior_c)?;
        if let ConfounderLink::AgreesWithZ { agreement } = self.confounder_link {
            check_probability("confounder agreement", agreement)?;
        }
        for (i, &p) in self.x_table.iter().chain(self.y_table.iter()).enumerate() {
            check_probability(&format!("structural table entry {i}"), p)?;
        }
        for &a in &self.invalid_accuracies {
            check_probability("invalid accuracy", a)?;
        }
        if self.candidate_count() == 0 {
            return Err(IvyError::InvalidSpec("spec has no candidates".into()));
        }
        for g in &self.valid_groups {
            match g {
                ValidGroup::Independent { accuracies } => {
                    for &a in accuracies {
                        check_probability("valid accuracy", a)?;
                    }
                }
                ValidGroup::Dependent { coupling, pairwise, unary } => {
                    let k = coupling.len();
                    if k > MAX_DEPENDENT_CLIQUE {
                        return Err(IvyError::CliqueTooLarge { size: k, cap: MAX_DEPENDENT_CLIQUE });
                    }
                    if !unary.is_empty() && unary.len() != k {
                        return Err(IvyError::InvalidSpec(format!(
                            "dependent group has {k} members but {} unary weights",
                            unary.len()
                        )));
                    }
                    if let Some(p) = pairwise.iter().find(|p| p.a >= k || p.b >= k || p.a == p.b) {
                        return Err(IvyError::InvalidSpec(format!(
                            "pair ({}, {}) is not a valid member pair of a {k}-clique",
                            p.a, p.b
                        )));
                    }
                }
            }
        }
        let accuracies = self.valid_accuracies()?;
        if !accuracies.is_empty() {
            let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
            if mean <= 0.5 {
                return Err(IvyError::InvalidSpec(format!(
                    "valid candidates must agree with z more often than not (mean accuracy {mean})"
                )));
            }
        }
        Ok(())
    }

    /// `P(w_j = z)` for every valid candidate.
    pub fn valid_accuracies(&self) -> Result<Vec<f64>> {
        let tables = self.clique_tables()?;
        let pz = self.prior_z;
        let mut out = Vec::new();
        for (g, t) in self.valid_groups.iter().zip(&tables) {
            match (g, t) {
                (ValidGroup::Independent { accuracies }, _) => out.extend_from_slice(accuracies),
                (ValidGroup::Dependent { .. }, Some(t)) => {
                    for i in 0..t.size {
                        let agree_pos = (1.0 + t.mean(i, 1)) / 2.0;
                        let agree_neg = (1.0 - t.mean(i, -1)) / 2.0;
                        out.push(pz * agree_pos + (1.0 - pz) * agree_neg);
                    }
                }
                _ => unreachable!("dependent groups always carry tables"),
            }
        }
        Ok(out)
    }

    /// `P(z, c)` indexed by `table_index(z, c)`.
    fn joint_zc(&self) -> [f64; 4] {
        let mut out = [0.0; 4];
        for z in [-1i8, 1] {
            let pz = if z > 0 { self.prior_z } else { 1.0 - self.prior_z };
            for c in [-1i8, 1] {
                let pc = match self.confounder_link {
                    ConfounderLink::Independent => {
                        if c > 0 {
                            self.prior_c
                        } else {
                            1.0 - self.prior_c
                        }
                    }
                    ConfounderLink::AgreesWithZ { agreement } => {
                        if c == z {
                            agreement
                        } else {
                            1.0 - agreement
                        }
                    }
                };
                out[table_index(z, c)] = pz * pc;
            }
        }
        out
    }

    /// Exact mean parameters and population regression coefficients computed
    /// by factorising over `(z, c)`; needs no full enumeration.
    pub fn population_moments(&self) -> Result<PopulationMoments> {
        self.validate()?;
        let tables = self.clique_tables()?;
        let roles = self.roles();
        let m = roles.len();
        let zc = self.joint_zc();

        // E[w_j | z, c]
        let cond_mean = |role: Role, z: i8, c: i8| -> f64 {
            match role {
                Role::Independent { group, member } => match &self.valid_groups[group] {
                    ValidGroup::Independent { accuracies } => (2.0 * accuracies[member] - 1.0) * z as f64,
                    _ => unreachable!(),
                },
                Role::Dependent { group, member } => tables[group].as_ref().unwrap().mean(member, z),
                Role::Invalid(k) => (2.0 * self.invalid_accuracies[k] - 1.0) * c as f64,
                Role::Noise => 0.0,
            }
        };

        let mut mu = vec![0.0; m];
        let mut second = DMatrix::<f64>::identity(m, m);
        for z in [-1i8, 1] {
            for c in [-1i8, 1] {
                let p = zc[table_index(z, c)];
                let means: Vec<f64> = roles.iter().map(|&r| cond_mean(r, z, c)).collect();
                for i in 0..m {
                    mu[i] += p * means[i] * z as f64;
                    for j in (i + 1)..m {
                        let e = match (roles[i], roles[j]) {
                            (
                                Role::Dependent { group: gi, member: a },
                                Role::Dependent { group: gj, member: b },
                            ) if gi == gj => tables[gi].as_ref().unwrap().pair_mean(a, b, z),
                            _ => means[i] * means[j],
                        };
                        second[(i, j)] += p * e;
                        second[(j, i)] += p * e;
                    }
                }
            }
        }

        let (beta_zx, beta_zy) = self.population_betas();
        Ok(PopulationMoments {
            mu,
            second_moment: second,
            beta_zx,
            beta_zy,
            association: self.population_association(),
        })
    }

    /// `P(x = +1 | z)` and `P(y = +1 | z)` for `z = -1, +1`.
    fn risk_and_outcome_given_z(&self) -> ([f64; 2], [f64; 2]) {
        let zc = self.joint_zc();
        let mut px = [0.0; 2];
        let mut py = [0.0; 2];
        for (zi, z) in [-1i8, 1].into_iter().enumerate() {
            let pz: f64 = zc[table_index(z, -1)] + zc[table_index(z, 1)];
            for c in [-1i8, 1] {
                let pc = zc[table_index(z, c)] / pz;
                let p_x1 = self.x_table[table_index(z, c)];
                px[zi] += pc * p_x1;
                for (x, p_x) in [(-1i8, 1.0 - p_x1), (1, p_x1)] {
                    py[zi] += pc * p_x * self.y_table[table_index(x, c)];
                }
            }
        }
        (px, py)
    }

    /// Population single-covariate logistic slopes of `x` and `y` on `z`.
    pub fn population_betas(&self) -> (f64, f64) {
        let (px, py) = self.risk_and_outcome_given_z();
        let slope = |p: [f64; 2]| 0.5 * (logit(p[1]) - logit(p[0]));
        (slope(px), slope(py))
    }

    /// Population Wald ratio using the true latent instrument.
    pub fn population_wald_ratio(&self) -> f64 {
        let (bx, by) = self.population_betas();
        by / bx
    }

    /// Population logistic slope of `y` on `x` (the confounded association).
    pub fn population_association(&self) -> f64 {
        let zc = self.joint_zc();
        let mut joint_x = [0.0; 2];
        let mut joint_xy = [0.0; 2];
        for z in [-1i8, 1] {
            for c in [-1i8, 1] {
                let p = zc[table_index(z, c)];
                let p_x1 = self.x_table[table_index(z, c)];
                for (xi, (x, p_x)) in [(-1i8, 1.0 - p_x1), (1, p_x1)].into_iter().enumerate() {
                    joint_x[xi] += p * p_x;
                    joint_xy[xi] += p * p_x * self.y_table[table_index(x, c)];
                }
            }
        }
        let p1 = joint_xy[1] / joint_x[1];
        let p0 = joint_xy[0] / joint_x[0];
        0.5 * (logit(p1) - logit(p0))
    }
}

/// Exact population moments of a spec.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    /// `E[w_j z]` for every candidate.
    pub mu: Vec<f64>,
    /// `E[w w^T]`.
    pub second_moment: DMatrix<f64>,
    pub beta_zx: f64,
    pub beta_zy: f64,
    /// Logistic slope of `y` on `x`.
    pub association: f64,
}

impl PopulationMoments {
    /// Population covariance `E[w w^T] - E[w] E[w]^T` is not available from
    /// these fields alone; this returns the moments restricted to `indices`.
    pub fn restrict(&self, indices: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
        let mu = indices.iter().map(|&i| self.mu[i]).collect();
        let k = indices.len();
        let o = DMatrix::from_fn(k, k, |a, b| self.second_moment[(indices[a], indices[b])]);
        (mu, o)
    }
}

/// Draws `n` samples. Each row uses its own counter-based stream so the
/// result is identical for any thread count.
pub fn sample(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<SyntheticSample> {
    if n == 0 {
        return Err(IvyError::InvalidArgument("n must be at least 1".into()));
    }
    spec.validate()?;
    let tables = spec.clique_tables()?;
    let m = spec.candidate_count();
    let base = rng::stream(seed, rng::domain::SAMPLE_ROW, 0);

    struct Row {
        z: i8,
        c: i8,
        x: i8,
        y: i8,
        w: Vec<i8>,
    }

    let draw_row = |i: usize| -> Row {
        let mut r = base.clone();
        r.set_stream(i as u64);
        let coin = |r: &mut rand_chacha::ChaCha8Rng, p: f64| -> bool { r.random::<f64>() < p };
        let z: i8 = if coin(&mut r, spec.prior_z) { 1 } else { -1 };
        let c: i8 = match spec.confounder_link {
            ConfounderLink::Independent => {
                if coin(&mut r, spec.prior_c) {
                    1
                } else {
                    -1
                }
            }
            ConfounderLink::AgreesWithZ { agreement } => {
                if coin(&mut r, agreement) {
                    z
                } else {
                    -z
                }
            }
        };
        let mut w = Vec::with_capacity(m);
        for (g, t) in spec.valid_groups.iter().zip(&tables) {
            match g {
                ValidGroup::Independent { accuracies } => {
                    w.extend(accuracies.iter().map(|&a| if coin(&mut r, a) { z } else { -z }));
                }
                ValidGroup::Dependent { .. } => {
                    let t = t.as_ref().unwrap();
                    let s = t.draw(z, r.random::<f64>());
                    w.extend((0..t.size).map(|i| state_value(s, i, t.size)));
                }
            }
        }
        w.extend(spec.invalid_accuracies.iter().map(|&a| if coin(&mut r, a) { c } else { -c }));
        w.extend((0..spec.noise_count).map(|_| if coin(&mut r, 0.5) { 1 } else { -1 }));
        let x: i8 = if coin(&mut r, spec.x_table[table_index(z, c)]) { 1 } else { -1 };
        let y: i8 = if coin(&mut r, spec.y_table[table_index(x, c)]) { 1 } else { -1 };
        Row { z, c, x, y, w }
    };

    let rows: Vec<Row> = (0..n).into_par_iter().map(draw_row).collect();
    let mut z = Vec::with_capacity(n);
    let mut c = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n * m);
    for row in rows {
        z.push(row.z);
        c.push(row.c);
        x.push(row.x);
        y.push(row.y);
        w.extend(row.w);
    }
    let dataset = Dataset::new(y, x, w, m, None)?;
    Ok(SyntheticSample { dataset, z, c, valid_mask: spec.valid_mask() })
}

/// Full joint table over `(z, c, w_1..w_m, x, y)`. State bits follow the
/// variable order with `z` most significant; a set bit means `+1`.
#[derive(Debug, Clone)]
pub struct ExactDistribution {
    m: usize,
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn variable_count(&self) -> usize {
        self.m + 4
    }

    pub fn candidate_count(&self) -> usize {
        self.m
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// Variable index of `z`, `c`, candidate `j`, `x`, `y` respectively.
    pub const Z: usize = 0;
    pub const C: usize = 1;

    pub fn candidate_var(&self, j: usize) -> usize {
        2 + j
    }

    pub fn x_var(&self) -> usize {
        self.m + 2
    }

    pub fn y_var(&self) -> usize {
        self.m + 3
    }

    #[inline]
    pub fn value(&self, state: usize, var: usize) -> i8 {
        state_value(state, var, self.variable_count())
    }

    /// `E[f(state)]`.
    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.probs.iter().enumerate().map(|(s, p)| p * f(s)).sum()
    }

    /// `P(predicate)`.
    pub fn probability(&self, pred: impl Fn(usize) -> bool) -> f64 {
        self.probs.iter().enumerate().filter(|(s, _)| pred(*s)).map(|(_, p)| p).sum()
    }
}

/// Brute-force joint table of a spec with at most 22 binary variables.
pub fn enumerate_joint(spec: &SyntheticSpec) -> Result<ExactDistribution> {
    spec.validate()?;
    let m = spec.candidate_count();
    let vars = m + 4;
    if vars > MAX_ENUMERATED_VARIABLES {
        return Err(IvyError::TooManyVariables { count: vars, cap: MAX_ENUMERATED_VARIABLES });
    }
    let tables = spec.clique_tables()?;
    let zc = spec.joint_zc();
    let roles = spec.roles();
    let states = 1usize << vars;
    let probs: Vec<f64> = (0..states)
        .into_par_iter()
        .map(|s| {
            let v = |var: usize| state_value(s, var, vars);
            let (z, c) = (v(0), v(1));
            let mut p = zc[table_index(z, c)];
            let mut j = 0;
            while j < m {
                match roles[j] {
                    Role::Independent { group, member } => {
                        let ValidGroup::Independent { accuracies } = &spec.valid_groups[group] else {
                            unreachable!()
                        };
                        let a = accuracies[member];
                        p *= if v(2 + j) == z { a } else { 1.0 - a };
                        j += 1;
                    }
                    Role::Dependent { group, .. } => {
                        let t = tables[group].as_ref().unwrap();
                        let mut idx = 0usize;
                        for i in 0..t.size {
                            idx = (idx << 1) | usize::from(v(2 + j + i) > 0);
                        }
                        p *= t.probs[usize::from(z > 0)][idx];
                        j += t.size;
                    }
                    Role::Invalid(k) => {
                        let a = spec.invalid_accuracies[k];
                        p *= if v(2 + j) == c { a } else { 1.0 - a };
                        j += 1;
                    }
                    Role::Noise => {
                        p *= 0.5;
                        j += 1;
                    }
                }
            }
            let x = v(m + 2);
            let y = v(m + 3);
            let px = spec.x_table[table_index(z, c)];
            p *= if x > 0 { px } else { 1.0 - px };
            let py = spec.y_table[table_index(x, c)];
            p *= if y > 0 { py } else { 1.0 - py };
            p
        })
        .collect();
    Ok(ExactDistribution { m, probs })
}

/// `mu*_j = E[w_j z]`, `O* = E[w w^T]` and the population slopes of `x` and
/// `y` on `z`, all read off the enumerated table.
pub fn exact_moments(dist: &ExactDistribution) -> PopulationMoments {
    let m = dist.candidate_count();
    let mu: Vec<f64> = (0..m)
        .map(|j| {
            let var = dist.candidate_var(j);
            dist.expectation(|s| (dist.value(s, var) * dist.value(s, ExactDistribution::Z)) as f64)
        })
        .collect();
    let mut second = DMatrix::<f64>::identity(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let (vi, vj) = (dist.candidate_var(i), dist.candidate_var(j));
            let e = dist.expectation(|s| (dist.value(s, vi) * dist.value(s, vj)) as f64);
            second[(i, j)] = e;
            second[(j, i)] = e;
        }
    }
    let slope = |target: usize, covariate: usize| {
        let cond = |cv: i8| {
            let pc = dist.probability(|s| dist.value(s, covariate) == cv);
            dist.probability(|s| dist.value(s, covariate) == cv && dist.value(s, target) > 0) / pc
        };
        0.5 * (logit(cond(1)) - logit(cond(-1)))
    };
    let z = ExactDistribution::Z;
    PopulationMoments {
        mu,
        second_moment: second,
        beta_zx: slope(dist.x_var(), z),
        beta_zy: slope(dist.y_var(), z),
        association: slope(dist.y_var(), dist.x_var()),
    }
}

/// Named synthetic experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// 20 candidates (4-clique, 2-clique, 4 independent valid; 10 confounder-tied), no effect.
    NullFig5a,
    /// As `NullFig5a` with a causal log-odds effect of 0.150.
    EffectFig5b,
    /// Eight valid candidates plus `w9`, a confounder copy agreeing with `z` at the given rate.
    InvalidZ(f64),
    /// 10 weak independent valid candidates and 50 noise candidates.
    VaryingAccuracy,
    /// 4 accurate independent candidates plus a strongly dependent 4-clique.
    DependencyClique,
    /// 10 independent valid candidates, no effect.
    CalibrationNull,
}

impl Preset {
    pub const INVALID_Z_ACCURACIES: [f64; 5] = [0.5, 0.525, 0.55, 0.575, 0.6];

    /// Parses `null_fig5a`, `effect_fig5b`, `invalid_z(0.55)` (or `invalid_z:0.55`), ...
    pub fn parse(name: &str) -> Result<Self> {
        let name = name.trim();
        let unknown = || IvyError::UnknownPreset(name.to_string());
        match name {
            "null_fig5a" => return Ok(Preset::NullFig5a),
            "effect_fig5b" => return Ok(Preset::EffectFig5b),
            "varying_accuracy" => return Ok(Preset::VaryingAccuracy),
            "dependency_clique" => return Ok(Preset::DependencyClique),
            "calibration_null" => return Ok(Preset::CalibrationNull),
            _ => {}
        }
        let arg = name
            .strip_prefix("invalid_z(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| name.strip_prefix("invalid_z:"))
            .ok_or_else(unknown)?;
        let acc: f64 = arg.trim().parse().map_err(|_| unknown())?;
        if !(0.5..1.0).contains(&acc) {
            return Err(IvyError::InvalidSpec(format!("w9 accuracy {acc} outside [0.5, 1)")));
        }
        Ok(Preset::InvalidZ(acc))
    }

    pub fn name(&self) -> String {
        match self {
            Preset::NullFig5a => "null_fig5a".into(),
            Preset::EffectFig5b => "effect_fig5b".into(),
            Preset::InvalidZ(a) => format!("invalid_z({a})"),
            Preset::VaryingAccuracy => "varying_accuracy".into(),
            Preset::DependencyClique => "dependency_clique".into(),
            Preset::CalibrationNull => "calibration_null".into(),
        }
    }

    /// Sample size the experiment is run at.
    pub fn default_n(&self) -> usize {
        match self {
            Preset::NullFig5a | Preset::EffectFig5b => 100_000,
            Preset::InvalidZ(_) | Preset::DependencyClique => 50_000,
            Preset::VaryingAccuracy => 5_000,
            Preset::CalibrationNull => 10_000,
        }
    }

    pub fn spec(&self) -> SyntheticSpec {
        match *self {
            Preset::NullFig5a => presets::fig5(0.0),
            Preset::EffectFig5b => presets::fig5(presets::FIG5_TRUE_EFFECT),
            Preset::InvalidZ(acc) => presets::invalid_z(acc),
            Preset::VaryingAccuracy => presets::varying_accuracy(),
            Preset::DependencyClique => presets::dependency_clique(),
            Preset::CalibrationNull => presets::calibration_null(),
        }
    }
}

/// Looks up a preset spec by name.
pub fn preset(name: &str) -> Result<SyntheticSpec> {
    Preset::parse(name).map(|p| p.spec())
}

/// Frozen constants of the named experiments. Tables not fixed by the
/// experiment descriptions use logistic structural equations
/// `P(v = +1 | a, b) = sigmoid(intercept + slope_a a + slope_b b)`.
pub mod presets {
    use super::*;

    pub const FIG5_TRUE_EFFECT: f64 = 0.150;

    /// Independent valid accuracy in the fig. 5 model.
    pub const FIG5_VALID_ACCURACY: f64 = 0.7;
    /// Accuracy of confounder-tied candidates in the fig. 5 model.
    pub const FIG5_INVALID_ACCURACY: f64 = 0.58;
    /// Clique members' coupling to `z` and their pairwise canonical weight.
    pub const FIG5_CLIQUE_COUPLING: f64 = 0.3;
    pub const FIG5_CLIQUE_WEIGHT: f64 = 0.25;
    /// Structural slopes: `x ~ z + c`, `y ~ x + c`.
    pub const FIG5_Z_TO_X: f64 = 0.6;
    pub const FIG5_C_TO_X: f64 = 1.0;
    pub const FIG5_C_TO_Y: f64 = 1.0;

    pub(super) fn logistic_table(intercept: f64, slope_a: f64, slope_b: f64) -> BinaryTable {
        let mut t = [0.0; 4];
        for a in [-1i8, 1] {
            for b in [-1i8, 1] {
                t[table_index(a, b)] = sigmoid(intercept + slope_a * a as f64 + slope_b * b as f64);
            }
        }
        t
    }

    pub(super) fn full_clique(k: usize, coupling: f64, weight: f64) -> ValidGroup {
        let mut pairwise = Vec::new();
        for a in 0..k {
            for b in (a + 1)..k {
                pairwise.push(PairWeight { a, b, weight });
            }
        }
        ValidGroup::Dependent { coupling: vec![coupling; k], pairwise, unary: Vec::new() }
    }

    /// Structural slope of `x` in the outcome equation that makes the
    /// population Wald ratio equal `target` (bisection; the ratio is monotone).
    pub(super) fn calibrate_effect(mut spec: SyntheticSpec, c_to_y: f64, target: f64) -> SyntheticSpec {
        if target == 0.0 {
            spec.y_table = logistic_table(0.0, 0.0, c_to_y);
            return spec;
        }
        let ratio = |alpha: f64, s: &mut SyntheticSpec| {
            s.y_table = logistic_table(0.0, alpha, c_to_y);
            s.population_wald_ratio()
        };
        let (mut lo, mut hi) = (0.0, 4.0 * target.abs().max(0.05));
        if target < 0.0 {
            (lo, hi) = (-hi, 0.0);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ratio(mid, &mut spec) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        ratio(0.5 * (lo + hi), &mut spec);
        spec
    }

    pub fn fig5(effect: f64) -> SyntheticSpec {
        let spec = SyntheticSpec {
            prior_z: 0.5,
            prior_c: 0.5,
            confounder_link: ConfounderLink::Independent,
            valid_groups: vec![
                full_clique(4, FIG5_CLIQUE_COUPLING, FIG5_CLIQUE_WEIGHT),
                full_clique(2, FIG5_CLIQUE_COUPLING, FIG5_CLIQUE_WEIGHT),
                ValidGroup::Independent { accuracies: vec![FIG5_VALID_ACCURACY; 4] },
            ],
            invalid_accuracies: vec![FIG5_INVALID_ACCURACY; 10],
            noise_count: 0,
            x_table: logistic_table(0.0, FIG5_Z_TO_X, FIG5_C_TO_X),
            y_table: [0.5; 4],
        };
        calibrate_effect(spec, FIG5_C_TO_Y, effect)
    }

    /// Fixed values of the invalid-instrument experiment.
    pub const INVALID_Z_VALID_ACCURACY: f64 = 0.73;
    pub const INVALID_Z_X_GIVEN_W9_POS: f64 = 0.764;
    pub const INVALID_Z_X_NEG_GIVEN_W9_NEG: f64 = 0.776;
    pub const INVALID_Z_Y_AGREEMENT: f64 = 0.55;
    /// Structural slope of `z` in the risk-factor equation (our choice).
    pub const INVALID_Z_Z_TO_X: f64 = 0.8;

    /// `w9` is an exact copy of the confounder; the confounder agrees with `z`
    /// with probability `acc`. The `x` table is solved so the marginal
    /// `P(x | w9)` matches the target values at every `acc`.
    pub fn invalid_z(acc: f64) -> SyntheticSpec {
        let (intercept, c_slope) = solve_x_given_w9(acc, INVALID_Z_Z_TO_X);
        let py = INVALID_Z_Y_AGREEMENT;
        SyntheticSpec {
            prior_z: 0.5,
            prior_c: 0.5,
            confounder_link: ConfounderLink::AgreesWithZ { agreement: acc },
            valid_groups: vec![ValidGroup::Independent { accuracies: vec![INVALID_Z_VALID_ACCURACY; 8] }],
            invalid_accuracies: vec![1.0],
            noise_count: 0,
            x_table: logistic_table(intercept, INVALID_Z_Z_TO_X, c_slope),
            // y depends on w9 only: P(y = +1 | w9 = +1) = P(y = -1 | w9 = -1) = 0.55
            y_table: [1.0 - py, py, 1.0 - py, py],
        }
    }

    /// Newton solve for `(intercept, c_slope)` such that
    /// `P(x=1 | c=1) = 0.764` and `P(x=1 | c=-1) = 1 - 0.776`.
    fn solve_x_given_w9(acc: f64, z_slope: f64) -> (f64, f64) {
        let target = [1.0 - INVALID_Z_X_NEG_GIVEN_W9_NEG, INVALID_Z_X_GIVEN_W9_POS];
        // P(z = c | c) = acc since z is uniform
        let marginal = |a: f64, b: f64, c: f64| {
            acc * sigmoid(a + z_slope * c + b * c) + (1.0 - acc) * sigmoid(a - z_slope * c + b * c)
        };
        let resid = |a: f64, b: f64| [marginal(a, b, -1.0) - target[0], marginal(a, b, 1.0) - target[1]];
        let (mut a, mut b) = (0.0, 1.0);
        for _ in 0..100 {
            let r = resid(a, b);
            if r[0].abs().max(r[1].abs()) < 1e-15 {
                break;
            }
            let h = 1e-7;
            let ra = resid(a + h, b);
            let rb = resid(a, b + h);
            let j = [[(ra[0] - r[0]) / h, (rb[0] - r[0]) / h], [(ra[1] - r[1]) / h, (rb[1] - r[1]) / h]];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let da = (r[0] * j[1][1] - r[1] * j[0][1]) / det;
            let db = (j[0][0] * r[1] - j[1][0] * r[0]) / det;
            a -= da;
            b -= db;
        }
        (a, b)
    }

    pub const VARYING_ACCURACIES: [f64; 10] = [0.55, 0.56, 0.57, 0.58, 0.6, 0.6, 0.62, 0.63, 0.64, 0.65];
    pub const VARYING_PRIOR_Z: f64 = 0.6;

    pub fn varying_accuracy() -> SyntheticSpec {
        SyntheticSpec {
            prior_z: VARYING_PRIOR_Z,
            prior_c: 0.5,
            confounder_link: ConfounderLink::Independent,
            valid_groups: vec![ValidGroup::Independent { accuracies: VARYING_ACCURACIES.to_vec() }],
            invalid_accuracies: Vec::new(),
            noise_count: 50,
            x_table: logistic_table(0.0, 0.8, 1.0),
            y_table: logistic_table(0.0, 0.0, 1.15),
        }
    }

    pub const DEPENDENCY_CI_ACCURACY: f64 = 0.75;
    pub const DEPENDENCY_CLIQUE_COUPLING: f64 = 0.14;
    pub const DEPENDENCY_CLIQUE_WEIGHT: f64 = 0.47;

    pub fn dependency_clique() -> SyntheticSpec {
        SyntheticSpec {
            prior_z: 0.5,
            prior_c: 0.5,
            confounder_link: ConfounderLink::Independent,
            valid_groups: vec![
                ValidGroup::Independent { accuracies: vec![DEPENDENCY_CI_ACCURACY; 4] },
                full_clique(4, DEPENDENCY_CLIQUE_COUPLING, DEPENDENCY_CLIQUE_WEIGHT),
            ],
            invalid_accuracies: Vec::new(),
            noise_count: 0,
            x_table: logistic_table(0.0, 0.8, 1.0),
            y_table: logistic_table(0.0, 0.0, 1.0),
        }
    }

    pub const CALIBRATION_ACCURACY: f64 = 0.7;

    pub fn calibration_null() -> SyntheticSpec {
        SyntheticSpec {
            prior_z: 0.5,
            prior_c: 0.5,
            confounder_link: ConfounderLink::Independent,
            valid_groups: vec![ValidGroup::Independent { accuracies: vec![CALIBRATION_ACCURACY; 10] }],
            invalid_accuracies: Vec::new(),
            noise_count: 0,
            x_table: logistic_table(0.0, 0.8, 1.0),
            y_table: logistic_table(0.0, 0.0, 1.0),
        }
    }
}
