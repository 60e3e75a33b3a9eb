use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use peg_core::simlab::{generate_dataset, SimConfig, TrueParams};
use peg_core::peg::FitControls;
use peg_core::{load_dataset, Analysis, InferenceOptions, Method, ModelIndexSet, Schema};

fn peg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_peg"))
        .args(args)
        .env("PEG_NUM_THREADS", "2")
        .output()
        .expect("run peg")
}

fn write_sim_csv(dir: &Path) -> PathBuf {
    let cfg = SimConfig { n: 200, k: 17, ..SimConfig::default() };
    let draw = generate_dataset(&cfg, &TrueParams::standard(17), 0).unwrap();
    let d = &draw.dataset;
    let path = dir.join("d.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    let mut header = vec!["id".to_string(), "time".into(), "y".into(), "a".into()];
    header.extend(d.names()[1..].iter().cloned());
    writeln!(f, "{}", header.join(",")).unwrap();
    for s in d.subjects() {
        for j in 0..s.sessions() {
            let mut row = vec![s.id.clone(), j.to_string(), format!("{:?}", s.y[j]), format!("{}", s.a[j])];
            row.extend((1..d.k()).map(|c| format!("{:?}", s.h[(j, c)])));
            writeln!(f, "{}", row.join(",")).unwrap();
        }
    }
    path
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_reader(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn fit_then_infer_matches_library_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sim_csv(dir.path());
    let fit = dir.path().join("fit.json");
    let os = dir.path().join("os.json");
    let d = data.to_str().unwrap();
    let out = peg(&["fit", "--data", d, "--corstr", "exch", "--out", fit.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = peg(&[
        "infer", "--method", "os-lasso", "--fit", fit.to_str().unwrap(), "--data", d, "--seed", "9", "--out",
        os.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let dataset = load_dataset(&data, &Schema::default()).unwrap();
    let analysis = Analysis::new(
        &dataset,
        &ModelIndexSet::full(dataset.k()),
        peg_core::CorrKind::Exchangeable,
        None,
        &FitControls::default(),
    )
    .unwrap();
    let opts = InferenceOptions { seed: 9, ..InferenceOptions::default() };
    let direct = analysis.infer(Method::OsLasso, &opts).unwrap();

    let report = json(&os);
    let got = &report["report"]["intervals"];
    let want = serde_json::to_value(&direct.intervals).unwrap();
    assert_eq!(got, &want);
    assert_eq!(report["config"]["method"], "os-lasso");
    assert_eq!(report["seed"], 9);
    assert_eq!(report["version"], env!("CARGO_PKG_VERSION"));

    let saved = json(&fit);
    assert_eq!(saved["selected"], serde_json::to_value(analysis.fit().selected.indices()).unwrap());
    assert_eq!(saved["config"]["corstr"], "exchangeable");
}

#[test]
fn simulate_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = peg(&["simulate", "--reps", "1", "--out", dir.path().join("m.csv").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn unknown_method_lists_all_five() {
    let out = peg(&["infer", "--method", "bogus", "--fit", "f.json", "--data", "d.csv", "--out", "o.json"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    for m in Method::ALL {
        assert!(err.contains(m.name()), "missing {m} in: {err}");
    }
    let out = peg(&["simulate", "--seed", "1", "--methods", "naive,nope", "--out", "m.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uposi_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_sim_csv(dir.path());
    let out = peg(&[
        "infer", "--method", "uposi", "--fit", "missing.json", "--data", data.to_str().unwrap(), "--out", "o.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_tables_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    std::fs::write(&config, r#"{"n": 150, "k": 17, "boot": 200}"#).unwrap();
    let metrics = dir.path().join("m.csv");
    let plot = dir.path().join("p.csv");
    let report = dir.path().join("r.json");
    let out = peg(&[
        "simulate", "--config", config.to_str().unwrap(), "--reps", "2", "--methods", "naive,os-full", "--seed", "4",
        "--out", metrics.to_str().unwrap(), "--plot-data", plot.to_str().unwrap(), "--report",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(std::fs::read_to_string(&plot).unwrap().lines().count() >= 3);
    let r = json(&report);
    assert_eq!(r["config"]["seed"], 4);
    assert_eq!(r["config"]["reps"], 2);
    assert_eq!(r["config"]["n"], 150);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("sim.json");
    std::fs::write(&config, r#"{"n": 150, "kk": 17}"#).unwrap();
    let out = peg(&[
        "simulate", "--config", config.to_str().unwrap(), "--seed", "1", "--out",
        dir.path().join("m.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
