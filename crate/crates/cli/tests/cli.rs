use std::path::Path;
use std::process::{Command, Output};

use ivy_core::datagen::{preset, sample};
use ivy_core::paramlearn::{param_learn, ParamOptions};
use ivy_core::pipeline::{learn_structure, StructureMode};
use ivy_core::structlearn::SolverOptions;
use ivy_core::{orient_candidates, Dataset};
use serde_json::Value;

fn ivy(args: &[&str], dir: &Path, threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivy"));
    cmd.args(args).current_dir(dir);
    if let Some(t) = threads {
        cmd.env("RAYON_NUM_THREADS", t.to_string());
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<i8>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse::<i8>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn generated_file_matches_the_library_sample() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivy(&["generate", "--preset", "null_fig5a", "--n", "3000", "--seed", "5", "--out", "d.csv"], dir.path(), None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let s = sample(&preset("null_fig5a").unwrap(), 3000, 5).unwrap();
    let (header, rows) = read_csv(&dir.path().join("d.csv"));
    assert_eq!(header.len(), 22);
    assert_eq!(&header[..3], &["y", "x", "w1"]);
    assert_eq!(rows.len(), 3000);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], s.dataset.y()[i]);
        assert_eq!(row[1], s.dataset.x()[i]);
        assert_eq!(&row[2..], s.dataset.row(i));
    }

    let (truth_header, truth) = read_csv(&dir.path().join("d.truth.csv"));
    assert_eq!(&truth_header[..2], &["z", "c"]);
    for (i, row) in truth.iter().enumerate() {
        assert_eq!((row[0], row[1]), (s.z[i], s.c[i]));
        let mask: Vec<bool> = row[2..].iter().map(|&v| v == 1).collect();
        assert_eq!(mask, s.valid_mask);
    }
}

#[test]
fn zero_one_encoding_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ivy(&["generate", "--preset", "calibration_null", "--n", "2000", "--seed", "1", "--out", "a.csv"], p, None)), 0);
    assert_eq!(
        code(&ivy(&["generate", "--preset", "calibration_null", "--n", "2000", "--seed", "1", "--zero-one-encoding", "--out", "b.csv"], p, None)),
        0
    );
    let (_, a) = read_csv(&p.join("a.csv"));
    let (_, b) = read_csv(&p.join("b.csv"));
    for (ra, rb) in a.iter().zip(&b) {
        let mapped: Vec<i8> = rb.iter().map(|&v| 2 * v - 1).collect();
        assert_eq!(ra, &mapped);
    }
    // both encodings fit to the same model
    assert_eq!(code(&ivy(&["fit", "--input", "a.csv", "--out", "ma.json"], p, None)), 0);
    assert_eq!(code(&ivy(&["fit", "--input", "b.csv", "--zero-one-encoding", "--out", "mb.json"], p, None)), 0);
    assert_eq!(std::fs::read(p.join("ma.json")).unwrap(), std::fs::read(p.join("mb.json")).unwrap());
}

#[test]
fn model_file_keeps_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ivy(&["generate", "--preset", "null_fig5a", "--n", "20000", "--seed", "3", "--out", "d.csv"], p, None)), 0);
    let out = ivy(&["fit", "--input", "d.csv", "--out", "m.json"], p, None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // the same fit through the library
    let ds: Dataset = sample(&preset("null_fig5a").unwrap(), 20_000, 3).unwrap().dataset;
    let (oriented, _) = orient_candidates(&ds);
    let learned = learn_structure(&oriented, &StructureMode::default(), &SolverOptions::default()).unwrap();
    let model = param_learn(&oriented, None, &learned.graph, &ParamOptions::default()).unwrap();

    let doc = read_json(&p.join("m.json"));
    assert_eq!(doc["version"], 1);
    assert_eq!(doc["kind"], "model");
    let valid: Vec<usize> = doc["structure"]["valid"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(valid, learned.graph.valid());
    let mu: Vec<f64> = doc["mu"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(mu, model.mu);
    for (a, row) in doc["second_moment"].as_array().unwrap().iter().enumerate() {
        for (b, v) in row.as_array().unwrap().iter().enumerate() {
            assert_eq!(v.as_f64().unwrap().to_bits(), model.second_moment[(a, b)].to_bits());
        }
    }
    assert!(!doc["clique_params"].as_array().unwrap().is_empty());
}

#[test]
fn reused_structure_comes_from_the_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&ivy(&["generate", "--preset", "effect_fig5b", "--n", "20000", "--seed", "2", "--out", "d.csv"], p, None)), 0);
    assert_eq!(code(&ivy(&["fit", "--input", "d.csv", "--out", "m.json"], p, None)), 0);
    let out = ivy(
        &["estimate", "--input", "d.csv", "--model", "m.json", "--reuse-structure", "--methods", "ivy", "--replicates", "10", "--out", "r.json"],
        p,
        None,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model = read_json(&p.join("m.json"));
    let report = read_json(&p.join("r.json"));
    assert_eq!(report["structure"]["source"], "given");
    assert_eq!(report["structure"]["valid"], model["structure"]["valid"]);
    assert_eq!(report["structure"]["edges"], model["structure"]["edges"]);
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn estimate_reports_every_requested_method() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ivy(&["pipeline", "--preset", "effect_fig5b", "--seed", "4", "--replicates", "40", "--out", "r.json"], p, None);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&p.join("r.json"));
    let reports = report["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    let median = |i: usize| reports[i]["median"].as_f64().unwrap();
    let dist: Vec<f64> = (0..4).map(|i| (median(i) - 0.150).abs()).collect();
    let ivy_dist = dist[0];
    assert_eq!(reports[0]["method"], "ivy");
    assert!(dist.iter().all(|&d| ivy_dist <= d), "distances to 0.150: {dist:?}");
}

#[test]
fn parse_errors_exit_two_with_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.csv"), "y,x,w1,w2,w3\n1,-1,1,1,1\n1,1,-1,2,1\n").unwrap();
    let out = ivy(&["fit", "--input", "bad.csv", "--out", "e.json"], p, None);
    assert_eq!(code(&out), 2);
    let doc = read_json(&p.join("e.json"));
    assert_eq!(doc["kind"], "error");
    assert_eq!(doc["exit_code"], 2);
    let msg = doc["diagnostics"][0].as_str().unwrap();
    assert!(msg.contains("ParseError") && msg.contains("line 3") && msg.contains("column 4"), "{msg}");

    assert_eq!(code(&ivy(&["no-such-command"], p, None)), 2);
    assert_eq!(code(&ivy(&["fit", "--input", "missing.csv", "--out", "e.json"], p, None)), 2);
    assert_eq!(code(&ivy(&["generate", "--preset", "nonsense", "--out", "d.csv"], p, None)), 2);
}

#[test]
fn too_few_candidates_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut text = String::from("y,x,w1,w2\n");
    let s = sample(&preset("calibration_null").unwrap(), 2000, 9).unwrap().dataset;
    for i in 0..s.n() {
        text.push_str(&format!("{},{},{},{}\n", s.y()[i], s.x()[i], s.row(i)[0], s.row(i)[1]));
    }
    std::fs::write(p.join("two.csv"), text).unwrap();
    let out = ivy(&["fit", "--input", "two.csv", "--out", "e.json"], p, None);
    assert_eq!(code(&out), 3);
    let doc = read_json(&p.join("e.json"));
    assert_eq!(doc["exit_code"], 3);
    assert!(doc["diagnostics"][0].as_str().unwrap().starts_with("TooFewValid"));
}

#[test]
fn power_command_gives_half_the_level_at_zero_effect() {
    let dir = tempfile::tempdir().unwrap();
    let out = ivy(&["power", "--n", "10000", "--p1", "0.5", "--alpha", "0", "--beta", "0.6", "--level", "0.05"], dir.path(), None);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["power"].as_f64().unwrap(), 0.025);
    let bad = ivy(&["power", "--n", "10000", "--p1", "1.5", "--alpha", "0.1", "--beta", "0.6"], dir.path(), None);
    assert_eq!(code(&bad), 2);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("run.json"), r#"{"preset": "calibration_null", "n": 1500, "seed": 1, "out": "from_config.csv"}"#).unwrap();
    assert_eq!(code(&ivy(&["generate", "--config", "run.json", "--seed", "2", "--out", "d.csv"], p, None)), 0);
    assert!(!p.join("from_config.csv").exists());
    let (_, rows) = read_csv(&p.join("d.csv"));
    let s = sample(&preset("calibration_null").unwrap(), 1500, 2).unwrap().dataset;
    assert_eq!(rows.len(), 1500);
    assert_eq!(&rows[7][2..], s.row(7));
}

#[test]
fn pipeline_reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = |out: &'static str| ["pipeline", "--preset", "null_fig5a", "--n", "20000", "--seed", "7", "--replicates", "20", "--out", out];
    assert_eq!(code(&ivy(&args("a.json"), p, None)), 0);
    assert_eq!(code(&ivy(&args("b.json"), p, None)), 0);
    assert_eq!(code(&ivy(&args("c.json"), p, Some(1))), 0);
    let a = std::fs::read(p.join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.json")).unwrap());
    assert_eq!(a, std::fs::read(p.join("c.json")).unwrap());
}
