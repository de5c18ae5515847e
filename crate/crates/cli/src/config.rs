//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use ivy_core::effect::Method;
use ivy_core::evalharness::PairSet;
use ivy_core::structlearn::Hyperparams;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::read_json;

/// Fixed hyperparameters; a missing `t2` means no edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub t1: f64,
    #[serde(default)]
    pub t2: Option<f64>,
}

impl HyperConfig {
    pub fn to_hyper(self) -> Hyperparams {
        Hyperparams { lambda: self.lambda, gamma: self.gamma, t1: self.t1, t2: self.t2.unwrap_or(f64::INFINITY) }
    }

    pub fn from_hyper(h: &Hyperparams) -> Self {
        HyperConfig { lambda: h.lambda, gamma: h.gamma, t1: h.t1, t2: h.t2.is_finite().then_some(h.t2) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
    pub prior_z: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub hyper: Option<HyperConfig>,
    pub xi: Option<usize>,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub methods: Option<Vec<String>>,
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub zero_one_encoding: bool,
    pub reuse_structure: bool,
    pub unbiased_moment: bool,
    pub relearn_structure: bool,
    pub harness: Option<String>,
    pub datasets: Option<usize>,
    pub seeds: Option<usize>,
    pub n_list: Option<Vec<usize>>,
    pub accuracies: Option<Vec<f64>>,
    pub pair_set: Option<PairSet>,
    pub p1: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub level: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        read_json(path)
    }

    /// Fields set in `flags` replace those in `self`; boolean flags can only switch on.
    pub fn overlay(mut self, flags: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if flags.$f.is_some() { self.$f = flags.$f; } )* };
        }
        take!(
            seed, replicates, prior_z, hyper, xi, input, out, model, methods, preset, n, harness, datasets,
            seeds, n_list, accuracies, pair_set, p1, alpha, beta, level
        );
        if !flags.lambda_grid.is_empty() {
            self.lambda_grid = flags.lambda_grid;
        }
        if !flags.gamma_grid.is_empty() {
            self.gamma_grid = flags.gamma_grid;
        }
        self.zero_one_encoding |= flags.zero_one_encoding;
        self.reuse_structure |= flags.reuse_structure;
        self.unbiased_moment |= flags.unbiased_moment;
        self.relearn_structure |= flags.relearn_structure;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn replicates(&self) -> usize {
        self.replicates.unwrap_or(1000)
    }

    pub fn xi(&self) -> CliResult<usize> {
        match self.xi.unwrap_or(2) {
            xi @ (2 | 3) => Ok(xi),
            other => Err(CliError::Validation(format!("xi must be 2 or 3, got {other}"))),
        }
    }

    pub fn prior_z(&self) -> CliResult<f64> {
        let p = self.prior_z.unwrap_or(0.5);
        if p > 0.0 && p < 1.0 {
            Ok(p)
        } else {
            Err(CliError::Validation(format!("prior-z must lie in (0, 1), got {p}")))
        }
    }

    pub fn methods(&self) -> CliResult<Vec<Method>> {
        match &self.methods {
            None => Ok(vec![Method::Ivy, Method::Uas, Method::Was, Method::Association]),
            Some(list) => {
                let mut out: Vec<Method> = Vec::new();
                for name in list {
                    let m = Method::parse(name)?;
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                if out.is_empty() {
                    return Err(CliError::Validation("method list is empty".into()));
                }
                Ok(out)
            }
        }
    }

    pub fn require_input(&self) -> CliResult<&Path> {
        self.input.as_deref().ok_or_else(|| CliError::Validation("an input dataset is required (--input)".into()))
    }

    pub fn require_out(&self) -> CliResult<&Path> {
        self.out.as_deref().ok_or_else(|| CliError::Validation("an output path is required (--out)".into()))
    }
}
