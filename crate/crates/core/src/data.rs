//! Domain types shared across the pipeline: the binary dataset, the learned
//! candidate graph, and sign orientation of candidates.

use std::collections::BTreeSet;

use crate::error::{IvyError, Result};

/// `n` joint samples of outcome `y`, risk factor `x` and `m` IV candidates,
/// every entry in {-1, +1}. Candidates are stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    y: Vec<i8>,
    x: Vec<i8>,
    w: Vec<i8>,
    n: usize,
    m: usize,
    candidate_names: Vec<String>,
}

impl Dataset {
    /// Builds and validates a dataset. `w` holds `n * m` values in row-major order.
    pub fn new(
        y: Vec<i8>,
        x: Vec<i8>,
        w: Vec<i8>,
        m: usize,
        candidate_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = x.len();
        let candidate_names =
            candidate_names.unwrap_or_else(|| (1..=m).map(|j| format!("w{j}")).collect());
        let ds = Dataset { y, x, w, n, m, candidate_names };
        validate(&ds)?;
        Ok(ds)
    }

    /// Builds a dataset from candidate columns.
    pub fn from_columns(y: Vec<i8>, x: Vec<i8>, columns: &[Vec<i8>]) -> Result<Self> {
        let n = x.len();
        let m = columns.len();
        if let Some(bad) = columns.iter().position(|c| c.len() != n) {
            return Err(IvyError::ShapeMismatch(format!(
                "candidate column {bad} has length {} but n = {n}",
                columns[bad].len()
            )));
        }
        let mut w = Vec::with_capacity(n * m);
        for i in 0..n {
            w.extend(columns.iter().map(|c| c[i]));
        }
        Dataset::new(y, x, w, m, None)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn y(&self) -> &[i8] {
        &self.y
    }

    pub fn x(&self) -> &[i8] {
        &self.x
    }

    /// Candidate values of sample `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[i8] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    /// Row-major candidate matrix.
    pub fn candidates(&self) -> &[i8] {
        &self.w
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        (0..self.n).map(|i| self.w[i * self.m + j]).collect()
    }

    pub fn candidate_names(&self) -> &[String] {
        &self.candidate_names
    }

    pub fn with_candidate_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.m {
            return Err(IvyError::ShapeMismatch(format!(
                "{} candidate names for {} candidates",
                names.len(),
                self.m
            )));
        }
        self.candidate_names = names;
        Ok(self)
    }

    /// Keeps only the listed rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut w = Vec::with_capacity(rows.len() * self.m);
        for &i in rows {
            w.extend_from_slice(self.row(i));
        }
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let x = rows.iter().map(|&i| self.x[i]).collect();
        Dataset::new(y, x, w, self.m, Some(self.candidate_names.clone()))
    }

    /// Keeps only the listed candidate columns, in the given order.
    pub fn select_candidates(&self, keep: &[usize]) -> Result<Self> {
        let mut w = Vec::with_capacity(self.n * keep.len());
        for i in 0..self.n {
            let row = self.row(i);
            w.extend(keep.iter().map(|&j| row[j]));
        }
        let names = keep.iter().map(|&j| self.candidate_names[j].clone()).collect();
        Dataset::new(self.y.clone(), self.x.clone(), w, keep.len(), Some(names))
    }
}

/// Checks every dataset invariant: non-empty, consistent lengths, values in {-1, +1}.
pub fn validate(ds: &Dataset) -> Result<()> {
    if ds.n == 0 || ds.m == 0 {
        return Err(IvyError::ShapeMismatch(format!(
            "need n >= 1 and m >= 1, got n = {}, m = {}",
            ds.n, ds.m
        )));
    }
    if ds.y.len() != ds.n {
        return Err(IvyError::ShapeMismatch(format!(
            "y has length {} but x has length {}",
            ds.y.len(),
            ds.n
        )));
    }
    if ds.w.len() != ds.n * ds.m {
        return Err(IvyError::ShapeMismatch(format!(
            "candidate matrix has {} entries, expected {} x {}",
            ds.w.len(),
            ds.n,
            ds.m
        )));
    }
    if ds.candidate_names.len() != ds.m {
        return Err(IvyError::ShapeMismatch(format!(
            "{} candidate names for {} candidates",
            ds.candidate_names.len(),
            ds.m
        )));
    }
    // Columns: 0 = y, 1 = x, 2.. = candidates.
    for i in 0..ds.n {
        if !is_pm1(ds.y[i]) {
            return Err(IvyError::NonBinaryValue { row: i, col: 0 });
        }
        if !is_pm1(ds.x[i]) {
            return Err(IvyError::NonBinaryValue { row: i, col: 1 });
        }
        if let Some(j) = ds.row(i).iter().position(|&v| !is_pm1(v)) {
            return Err(IvyError::NonBinaryValue { row: i, col: j + 2 });
        }
    }
    Ok(())
}

#[inline]
fn is_pm1(v: i8) -> bool {
    v == 1 || v == -1
}

/// Maps a {0, 1} value to {-1, +1} via `2v - 1`.
pub fn zero_one_to_pm1(v: i8) -> Option<i8> {
    match v {
        0 => Some(-1),
        1 => Some(1),
        _ => None,
    }
}

/// Sample correlation between two ±1 vectors; 0 when either is constant.
pub fn pm1_correlation(a: &[i8], b: &[i8]) -> f64 {
    let n = a.len() as f64;
    let (mut sa, mut sb, mut sab) = (0i64, 0i64, 0i64);
    for (&u, &v) in a.iter().zip(b) {
        sa += u as i64;
        sb += v as i64;
        sab += (u as i64) * (v as i64);
    }
    let ma = sa as f64 / n;
    let mb = sb as f64 / n;
    let cov = sab as f64 / n - ma * mb;
    let va = 1.0 - ma * ma;
    let vb = 1.0 - mb * mb;
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Negates every candidate whose sample correlation with `x` is negative.
/// Zero correlation keeps the original sign.
pub fn orient_candidates(ds: &Dataset) -> (Dataset, Vec<bool>) {
    let flip: Vec<bool> = (0..ds.m)
        .map(|j| {
            // sign of the covariance decides; the correlation denominator is positive
            let n = ds.n as i64;
            let (mut sw, mut sx, mut swx) = (0i64, 0i64, 0i64);
            for i in 0..ds.n {
                let w = ds.w[i * ds.m + j] as i64;
                let x = ds.x[i] as i64;
                sw += w;
                sx += x;
                swx += w * x;
            }
            // n * sum(wx) - sum(w) sum(x) has the sign of the covariance
            (n as i128) * (swx as i128) - (sw as i128) * (sx as i128) < 0
        })
        .collect();
    let mut out = ds.clone();
    for i in 0..ds.n {
        for (j, &f) in flip.iter().enumerate() {
            if f {
                out.w[i * ds.m + j] = -out.w[i * ds.m + j];
            }
        }
    }
    (out, flip)
}

/// Estimated valid candidate set and dependency edges among them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateGraph {
    valid: Vec<usize>,
    edges: Vec<(usize, usize)>,
    cliques: Vec<Vec<usize>>,
}

impl CandidateGraph {
    /// Builds the graph; `valid` is sorted and de-duplicated, edges normalised to
    /// `(min, max)` and checked to lie within `valid`.
    pub fn new(valid: impl IntoIterator<Item = usize>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let valid: Vec<usize> = valid.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let mut edge_set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(IvyError::InvalidArgument(format!("self-loop on candidate {a}")));
            }
            if valid.binary_search(&a).is_err() || valid.binary_search(&b).is_err() {
                return Err(IvyError::InvalidArgument(format!(
                    "edge ({a}, {b}) has an endpoint outside the valid set"
                )));
            }
            edge_set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = edge_set.into_iter().collect();
        let cliques = connected_components(&valid, &edges);
        Ok(CandidateGraph { valid, edges, cliques })
    }

    /// All `0..m` candidates valid and conditionally independent.
    pub fn conditionally_independent(m: usize) -> Self {
        CandidateGraph::new(0..m, []).expect("no edges")
    }

    pub fn valid(&self) -> &[usize] {
        &self.valid
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Connected components of (valid, edges), each sorted, ordered by smallest member.
    pub fn cliques(&self) -> &[Vec<usize>] {
        &self.cliques
    }

    /// Position of a candidate inside `valid`.
    pub fn local_index(&self, candidate: usize) -> Option<usize> {
        self.valid.binary_search(&candidate).ok()
    }

    /// Largest component size minus one.
    pub fn max_degree_bound(&self) -> usize {
        self.cliques.iter().map(|c| c.len()).max().unwrap_or(1).saturating_sub(1)
    }
}

fn connected_components(nodes: &[usize], edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let k = nodes.len();
    let pos = |c: usize| nodes.binary_search(&c).expect("edge endpoint in nodes");
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, pos(a)), find(&mut parent, pos(b)));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_slot = vec![usize::MAX; k];
    for i in 0..k {
        let r = find(&mut parent, i);
        if root_slot[r] == usize::MAX {
            root_slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_slot[r]].push(nodes[i]);
    }
    groups
}
