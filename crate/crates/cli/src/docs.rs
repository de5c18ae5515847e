//! Versioned JSON documents written by the commands.

use ivy_core::effect::{EffectReport, Method};
use ivy_core::pipeline::LearnedStructure;
use ivy_core::posterior::CliqueParams;
use ivy_core::IvyError;
use serde::{Deserialize, Serialize};

use crate::config::HyperConfig;
use crate::error::kind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDoc {
    /// `selected`, `fixed` or `given`.
    pub source: String,
    pub valid: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub cliques: Vec<Vec<usize>>,
    #[serde(default)]
    pub hyper: Option<HyperConfig>,
    /// Validity score per candidate.
    #[serde(default)]
    pub scores: Option<Vec<f64>>,
    #[serde(default)]
    pub fallback: bool,
}

impl StructureDoc {
    pub fn new(s: &LearnedStructure, selected: bool) -> Self {
        let source = match (&s.fit, selected) {
            (None, _) => "given",
            (Some(_), true) => "selected",
            (Some(_), false) => "fixed",
        };
        StructureDoc {
            source: source.into(),
            valid: s.graph.valid().to_vec(),
            edges: s.graph.edges().to_vec(),
            cliques: s.graph.cliques().to_vec(),
            hyper: s.fit.as_ref().map(|f| HyperConfig::from_hyper(&f.hyper)),
            scores: s.fit.as_ref().map(|f| f.scores.clone()),
            fallback: s.fallback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub version: u32,
    pub kind: String,
    pub candidates: Vec<String>,
    /// Candidates negated before learning.
    pub flipped: Vec<bool>,
    pub structure: StructureDoc,
    pub prior_z: f64,
    /// `μ̂` in the order of `structure.valid`.
    pub mu: Vec<f64>,
    /// `Ô` rows in the order of `structure.valid`.
    pub second_moment: Vec<Vec<f64>>,
    pub clique_params: Vec<CliqueParams>,
    pub sign_violations: usize,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureDoc {
    pub method: Method,
    pub error: String,
    pub message: String,
}

impl FailureDoc {
    pub fn new(method: Method, e: &IvyError) -> Self {
        FailureDoc { method, error: kind(e).into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub version: u32,
    pub kind: String,
    pub command: String,
    pub seed: u64,
    pub replicates: usize,
    pub n: usize,
    pub m: usize,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub structure: Option<StructureDoc>,
    pub reports: Vec<EffectReport>,
    pub failures: Vec<FailureDoc>,
    pub diagnostics: Vec<String>,
}

/// Written in place of the regular output when a command fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDoc {
    pub version: u32,
    pub kind: String,
    pub command: String,
    pub exit_code: i32,
    pub diagnostics: Vec<String>,
}
