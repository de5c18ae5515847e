//! End-to-end orchestration: orientation, structure, effect estimation.

use serde::{Deserialize, Serialize};

use crate::baselines::{association, UasSummary, WasSummary};
use crate::data::{orient_candidates, validate, CandidateGraph, Dataset};
use crate::effect::{estimate_effect, run_replicates, EffectOptions, EffectReport, Method, SummaryBuilder};
use crate::error::{IvyError, Result};
use crate::paramlearn::{param_learn, ParamOptions};
use crate::posterior::{MomentOptions, Posterior};
use crate::structlearn::{default_grid, select_model, structure_learn, Hyperparams, SolverOptions, StructureFit};

/// How the valid set and dependency edges are obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StructureMode {
    /// Grid search; empty grids fall back to [`default_grid`].
    Select { lambda_grid: Vec<f64>, gamma_grid: Vec<f64>, xi: usize },
    Fixed { hyper: Hyperparams },
    Given { valid: Vec<usize>, edges: Vec<(usize, usize)> },
}

impl Default for StructureMode {
    fn default() -> Self {
        StructureMode::Select { lambda_grid: Vec::new(), gamma_grid: Vec::new(), xi: 2 }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub structure: StructureMode,
    pub methods: Vec<Method>,
    pub effect: EffectOptions,
    pub solver: SolverOptions,
    /// Negate candidates negatively correlated with `x` before learning.
    pub orient: bool,
    /// Re-learn the structure on every replicate's training half instead of
    /// once on the full data.
    pub relearn_structure: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            structure: StructureMode::default(),
            methods: vec![Method::Ivy, Method::Uas, Method::Was, Method::Association],
            effect: EffectOptions::default(),
            solver: SolverOptions::default(),
            orient: true,
            relearn_structure: false,
        }
    }
}

/// Structure chosen for a dataset.
#[derive(Debug, Clone)]
pub struct LearnedStructure {
    pub graph: CandidateGraph,
    /// Present unless the structure was given.
    pub fit: Option<StructureFit>,
    /// True when model selection fell back to the widest gap.
    pub fallback: bool,
}

/// Resolves `mode` on an (already oriented) dataset.
pub fn learn_structure(ds: &Dataset, mode: &StructureMode, solver: &SolverOptions) -> Result<LearnedStructure> {
    match mode {
        StructureMode::Select { lambda_grid, gamma_grid, xi } => {
            let (dl, dg) = default_grid(ds.m(), ds.n());
            let lg = if lambda_grid.is_empty() { &dl } else { lambda_grid };
            let gg = if gamma_grid.is_empty() { &dg } else { gamma_grid };
            let sel = select_model(ds, lg, gg, *xi, solver)?;
            Ok(LearnedStructure { graph: sel.fit.graph.clone(), fit: Some(sel.fit), fallback: sel.fallback })
        }
        StructureMode::Fixed { hyper } => {
            let fit = structure_learn(ds, hyper, solver)?;
            Ok(LearnedStructure { graph: fit.graph.clone(), fit: Some(fit), fallback: false })
        }
        StructureMode::Given { valid, edges } => {
            if let Some(&bad) = valid.iter().chain(edges.iter().flat_map(|(a, b)| [a, b])).find(|&&j| j >= ds.m()) {
                return Err(IvyError::InvalidArgument(format!(
                    "candidate index {bad} out of range for {} candidates",
                    ds.m()
                )));
            }
            Ok(LearnedStructure {
                graph: CandidateGraph::new(valid.iter().copied(), edges.iter().copied())?,
                fit: None,
                fallback: false,
            })
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutput {
    /// Candidates negated by orientation.
    pub flipped: Vec<bool>,
    /// `None` when only baselines were requested.
    pub structure: Option<LearnedStructure>,
    pub reports: Vec<EffectReport>,
    pub failures: Vec<(Method, IvyError)>,
    pub warnings: Vec<String>,
}

/// Runs every requested method on `ds`. Structure errors abort the run;
/// a method whose replicates all fail is recorded in `failures`.
pub fn run_pipeline(ds: &Dataset, opts: &PipelineOptions) -> Result<PipelineOutput> {
    validate(ds)?;
    if opts.methods.is_empty() {
        return Err(IvyError::InvalidArgument("method list is empty".into()));
    }
    let (oriented, flipped) = if opts.orient { orient_candidates(ds) } else { (ds.clone(), vec![false; ds.m()]) };
    let mut warnings = Vec::new();
    let structure = if opts.methods.contains(&Method::Ivy) && !opts.relearn_structure {
        let s = learn_structure(&oriented, &opts.structure, &opts.solver)?;
        if let Some(fit) = &s.fit {
            warnings.extend(fit.warnings.iter().cloned());
        }
        if s.fallback {
            warnings.push("model selection found no gap above 10; the widest gap was used".into());
        }
        Some(s)
    } else {
        None
    };
    let eo = &opts.effect;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &method in &opts.methods {
        let outcome = match method {
            Method::Ivy => match &structure {
                Some(s) => estimate_effect(&oriented, &s.graph, eo),
                None => {
                    let builder = RelearnSummary {
                        mode: &opts.structure,
                        solver: &opts.solver,
                        params: eo.params,
                        moments: eo.moments,
                    };
                    run_replicates(&oriented, &builder, eo.replicates, eo.seed, eo.beta_min)
                }
            },
            Method::Uas => run_replicates(&oriented, &UasSummary, eo.replicates, eo.seed, eo.beta_min),
            Method::Was => run_replicates(&oriented, &WasSummary, eo.replicates, eo.seed, eo.beta_min),
            Method::Association => association(&oriented, eo.replicates, eo.seed),
        };
        match outcome {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((method, e)),
        }
    }
    Ok(PipelineOutput { flipped, structure, reports, failures, warnings })
}

/// Ivy summary whose structure is learned from the training half alone.
pub struct RelearnSummary<'a> {
    pub mode: &'a StructureMode,
    pub solver: &'a SolverOptions,
    pub params: ParamOptions,
    pub moments: MomentOptions,
}

impl SummaryBuilder for RelearnSummary<'_> {
    fn method(&self) -> Method {
        Method::Ivy
    }

    fn summarize(&self, ds: &Dataset, train: &[usize], eval: &[usize]) -> Result<(Vec<f64>, Vec<String>)> {
        let half = ds.select_rows(train)?;
        let learned = learn_structure(&half, self.mode, self.solver)?;
        let model = param_learn(&half, None, &learned.graph, &self.params)?;
        let posterior = Posterior::new(&model, &self.moments)?;
        let mut warnings = model.warnings;
        warnings.extend(posterior.warnings.iter().cloned());
        Ok((eval.iter().map(|&i| posterior.probability(ds.row(i))).collect(), warnings))
    }
}
