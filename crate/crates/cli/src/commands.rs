use ivy_core::datagen::{sample, Preset, SyntheticSample};
use ivy_core::effect::{power, EffectOptions};
use ivy_core::evalharness::{calibration, robustness_sweep, scaling_curve, validity_auc, PairSet, SweepResult};
use ivy_core::paramlearn::{param_learn, ParamOptions};
use ivy_core::pipeline::{learn_structure, run_pipeline, PipelineOptions, PipelineOutput, StructureMode};
use ivy_core::posterior::{MomentOptions, Posterior};
use ivy_core::rng::{child_seed, domain};
use ivy_core::structlearn::SolverOptions;
use ivy_core::{orient_candidates, Dataset};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::docs::{FailureDoc, ModelDoc, ReportDoc, StructureDoc, FORMAT_VERSION};
use crate::error::{CliError, CliResult, EXIT_NUMERICAL};
use crate::files::{read_dataset, read_json, sidecar_path, write_dataset, write_json, write_sidecar};
use crate::Command;

/// Runs one command; the `Ok` value is the process exit status.
pub fn run(command: Command, cfg: &RunConfig) -> CliResult<i32> {
    match command {
        Command::Generate => generate(cfg),
        Command::Fit => fit(cfg),
        Command::Estimate => estimate(cfg),
        Command::Pipeline => pipeline(cfg),
        Command::Evaluate => evaluate(cfg),
        Command::Power => power_cmd(cfg),
    }
}

fn preset_of(cfg: &RunConfig) -> CliResult<Preset> {
    let name = cfg.preset.as_deref().ok_or_else(|| CliError::Validation("a preset is required (--preset)".into()))?;
    Ok(Preset::parse(name)?)
}

fn draw(cfg: &RunConfig, preset: &Preset) -> CliResult<SyntheticSample> {
    let n = cfg.n.unwrap_or_else(|| preset.default_n());
    Ok(sample(&preset.spec(), n, cfg.seed())?)
}

fn generate(cfg: &RunConfig) -> CliResult<i32> {
    let preset = preset_of(cfg)?;
    let out = cfg.require_out()?;
    let s = draw(cfg, &preset)?;
    write_dataset(out, &s.dataset, cfg.zero_one_encoding)?;
    let truth = sidecar_path(out);
    write_sidecar(&truth, &s)?;
    println!("wrote {} rows x {} candidates to {} (truth: {})", s.dataset.n(), s.dataset.m(), out.display(), truth.display());
    Ok(0)
}

fn structure_mode(cfg: &RunConfig) -> CliResult<StructureMode> {
    if let Some(h) = cfg.hyper {
        return Ok(StructureMode::Fixed { hyper: h.to_hyper() });
    }
    Ok(StructureMode::Select { lambda_grid: cfg.lambda_grid.clone(), gamma_grid: cfg.gamma_grid.clone(), xi: cfg.xi()? })
}

fn param_options(cfg: &RunConfig) -> CliResult<ParamOptions> {
    Ok(ParamOptions { prior_z: cfg.prior_z()?, unbiased: cfg.unbiased_moment, ..Default::default() })
}

fn load_input(cfg: &RunConfig) -> CliResult<Dataset> {
    read_dataset(cfg.require_input()?, cfg.zero_one_encoding)
}

fn fit(cfg: &RunConfig) -> CliResult<i32> {
    let ds = load_input(cfg)?;
    let out = cfg.require_out()?;
    let mode = structure_mode(cfg)?;
    let (oriented, flipped) = orient_candidates(&ds);
    let learned = learn_structure(&oriented, &mode, &SolverOptions::default())?;
    let model = param_learn(&oriented, None, &learned.graph, &param_options(cfg)?)?;
    let posterior = Posterior::new(&model, &MomentOptions::default())?;
    let mut diagnostics: Vec<String> = learned.fit.iter().flat_map(|f| f.warnings.iter().cloned()).collect();
    if learned.fallback {
        diagnostics.push("model selection found no gap above 10; the widest gap was used".into());
    }
    diagnostics.extend(model.warnings.iter().cloned());
    diagnostics.extend(posterior.warnings.iter().cloned());
    let k = model.mu.len();
    let doc = ModelDoc {
        version: FORMAT_VERSION,
        kind: "model".into(),
        candidates: ds.candidate_names().to_vec(),
        flipped,
        structure: StructureDoc::new(&learned, matches!(mode, StructureMode::Select { .. })),
        prior_z: model.prior_z,
        mu: model.mu.clone(),
        second_moment: (0..k).map(|a| (0..k).map(|b| model.second_moment[(a, b)]).collect()).collect(),
        clique_params: posterior.params(),
        sign_violations: model.sign_violations,
        diagnostics,
    };
    write_json(out, &doc)?;
    for d in &doc.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(0)
}

fn pipeline_options(cfg: &RunConfig, structure: StructureMode) -> CliResult<PipelineOptions> {
    let effect = EffectOptions {
        replicates: cfg.replicates(),
        seed: cfg.seed(),
        params: param_options(cfg)?,
        ..Default::default()
    };
    Ok(PipelineOptions {
        structure,
        methods: cfg.methods()?,
        effect,
        relearn_structure: cfg.relearn_structure,
        ..Default::default()
    })
}

fn report_doc(command: &str, cfg: &RunConfig, ds: &Dataset, out: PipelineOutput, selected: bool) -> ReportDoc {
    let mut diagnostics = out.warnings;
    for r in &out.reports {
        diagnostics.extend(r.diagnostics.iter().map(|d| format!("{}: {d}", r.method.label())));
    }
    let failures: Vec<FailureDoc> = out.failures.iter().map(|(m, e)| FailureDoc::new(*m, e)).collect();
    diagnostics.extend(failures.iter().map(|f| format!("{}: {}: {}", f.method.label(), f.error, f.message)));
    ReportDoc {
        version: FORMAT_VERSION,
        kind: "report".into(),
        command: command.into(),
        seed: cfg.seed(),
        replicates: cfg.replicates(),
        n: ds.n(),
        m: ds.m(),
        preset: cfg.preset.clone(),
        structure: out.structure.as_ref().map(|s| StructureDoc::new(s, selected)),
        reports: out.reports,
        failures,
        diagnostics,
    }
}

fn finish_report(doc: &ReportDoc, cfg: &RunConfig) -> CliResult<i32> {
    match &cfg.out {
        Some(path) => write_json(path, doc)?,
        None => println!("{}", serde_json::to_string_pretty(doc).expect("report serializes")),
    }
    for r in &doc.reports {
        eprintln!("{:<12} median {:>9.4}  95% CI [{:.4}, {:.4}]", r.method.label(), r.median, r.ci_low, r.ci_high);
    }
    for d in &doc.diagnostics {
        eprintln!("warning: {d}");
    }
    Ok(if doc.failures.is_empty() { 0 } else { EXIT_NUMERICAL })
}

fn estimate(cfg: &RunConfig) -> CliResult<i32> {
    let ds = load_input(cfg)?;
    let structure = if cfg.reuse_structure {
        let path = cfg.model.as_deref().ok_or_else(|| CliError::Validation("--reuse-structure needs --model".into()))?;
        let model: ModelDoc = read_json(path)?;
        if model.version != FORMAT_VERSION {
            return Err(CliError::Validation(format!("model file version {} is not supported", model.version)));
        }
        if model.candidates.len() != ds.m() {
            return Err(CliError::Validation(format!(
                "model has {} candidates but the dataset has {}",
                model.candidates.len(),
                ds.m()
            )));
        }
        StructureMode::Given { valid: model.structure.valid, edges: model.structure.edges }
    } else {
        structure_mode(cfg)?
    };
    let selected = matches!(structure, StructureMode::Select { .. });
    let opts = pipeline_options(cfg, structure)?;
    let out = run_pipeline(&ds, &opts)?;
    finish_report(&report_doc("estimate", cfg, &ds, out, selected), cfg)
}

fn pipeline(cfg: &RunConfig) -> CliResult<i32> {
    let ds = match (&cfg.input, &cfg.preset) {
        (Some(_), _) => load_input(cfg)?,
        (None, Some(_)) => draw(cfg, &preset_of(cfg)?)?.dataset,
        (None, None) => return Err(CliError::Validation("pipeline needs --input or --preset".into())),
    };
    let structure = structure_mode(cfg)?;
    let selected = matches!(structure, StructureMode::Select { .. });
    let opts = pipeline_options(cfg, structure)?;
    let out = run_pipeline(&ds, &opts)?;
    finish_report(&report_doc("pipeline", cfg, &ds, out, selected), cfg)
}

#[derive(Serialize)]
struct EvaluationDoc<T: Serialize> {
    version: u32,
    kind: &'static str,
    harness: String,
    seed: u64,
    result: T,
}

fn emit<T: Serialize>(cfg: &RunConfig, harness: &str, result: T, sweep: Option<&SweepResult>) -> CliResult<i32> {
    let doc = EvaluationDoc { version: FORMAT_VERSION, kind: "evaluation", harness: harness.into(), seed: cfg.seed(), result };
    match &cfg.out {
        Some(path) => {
            write_json(path, &doc)?;
            if let Some(sweep) = sweep {
                let csv_path = path.with_extension("csv");
                let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
                sweep.write_csv(std::io::BufWriter::new(file))?;
            }
        }
        None => println!("{}", serde_json::to_string_pretty(&doc).expect("evaluation serializes")),
    }
    Ok(0)
}

fn evaluate(cfg: &RunConfig) -> CliResult<i32> {
    let harness = cfg.harness.as_deref().ok_or_else(|| CliError::Validation("--harness is required".into()))?;
    let seed = cfg.seed();
    match harness {
        "auc" => {
            let preset = cfg.preset.as_deref().map_or(Ok(Preset::NullFig5a), Preset::parse)?;
            let n = cfg.n.unwrap_or_else(|| preset.default_n());
            let mode = structure_mode(cfg)?;
            let seeds = cfg.seeds.unwrap_or(10);
            let aucs = (0..seeds as u64)
                .map(|k| validity_auc(&preset.spec(), n, &mode, child_seed(seed, domain::DATASET, k)))
                .collect::<Result<Vec<f64>, _>>()?;
            let mean = aucs.iter().sum::<f64>() / aucs.len().max(1) as f64;
            emit(cfg, harness, json!({ "preset": preset.name(), "n": n, "auc": aucs, "mean_auc": mean }), None)
        }
        "calibration" => {
            let preset = cfg.preset.as_deref().map_or(Ok(Preset::CalibrationNull), Preset::parse)?;
            let n = cfg.n.unwrap_or(10_000);
            let datasets = cfg.datasets.unwrap_or(200);
            let replicates = cfg.replicates.unwrap_or(100);
            let c = calibration(&preset.spec(), datasets, n, replicates, seed)?;
            emit(cfg, harness, json!({ "preset": preset.name(), "n": n, "replicates": replicates, "calibration": c }), None)
        }
        "scaling" => {
            let preset = cfg.preset.as_deref().map_or(Ok(Preset::CalibrationNull), Preset::parse)?;
            let n_list = cfg.n_list.clone().unwrap_or_else(|| vec![2_500, 10_000]);
            let seeds: Vec<u64> = (0..cfg.seeds.unwrap_or(20) as u64).map(|k| child_seed(seed, domain::DATASET, k)).collect();
            let pairs = cfg.pair_set.unwrap_or(PairSet::True);
            let sweep = scaling_curve(&preset.spec(), &n_list, &seeds, pairs)?;
            let means = sweep.mean_error();
            emit(cfg, harness, json!({ "preset": preset.name(), "pair_set": pairs, "mean_error": means, "sweep": &sweep }), Some(&sweep))
        }
        "robustness" => {
            let accs = cfg.accuracies.clone().unwrap_or_else(|| Preset::INVALID_Z_ACCURACIES.to_vec());
            let n = cfg.n.unwrap_or(50_000);
            let replicates = cfg.replicates.unwrap_or(100);
            let sweep = robustness_sweep(&accs, n, replicates, seed)?;
            emit(cfg, harness, json!({ "n": n, "replicates": replicates, "sweep": &sweep }), Some(&sweep))
        }
        other => Err(CliError::Validation(format!(
            "unknown harness `{other}` (expected auc, calibration, scaling or robustness)"
        ))),
    }
}

fn power_cmd(cfg: &RunConfig) -> CliResult<i32> {
    let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Validation(format!("--{name} is required")));
    let n = cfg.n.ok_or_else(|| CliError::Validation("--n is required".into()))?;
    let p1 = need(cfg.p1, "p1")?;
    let alpha = need(cfg.alpha, "alpha")?;
    let beta = need(cfg.beta, "beta")?;
    let level = cfg.level.unwrap_or(0.05);
    let pi = power(n, p1, 1.0 - p1, alpha, beta, level)?;
    let doc = json!({ "version": FORMAT_VERSION, "kind": "power", "n": n, "p1": p1, "alpha_xy": alpha, "beta_zx": beta, "level": level, "power": pi });
    match &cfg.out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc).expect("power serializes")),
    }
    Ok(0)
}
