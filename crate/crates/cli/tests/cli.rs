use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn vpp(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vpp"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn corrupt_network_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"base\": ").unwrap();
    let out = vpp(&["rank", "--network"], &[&bad]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage load"));
}

#[test]
fn missing_network_and_bad_flags_fail() {
    let out = vpp(&["rank"], &[]);
    assert_eq!(out.status.code(), Some(1));
    let out = vpp(&["rank", "--tol-area", "0", "--network"], &[&fixture("three_bus.json")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tol_area"));
}

#[test]
fn rank_is_sorted() {
    let out = vpp(&["rank", "--network"], &[&fixture("feeder16.json")]);
    ok(&out);
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["der_id", "period", "score"]);
    let scores: Vec<f64> = rdr.records().map(|r| r.unwrap()[2].parse().unwrap()).collect();
    assert!(!scores.is_empty());
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn staged_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let net = fixture("three_bus.json");
    let cfg = d.join("run.cfg");
    std::fs::write(&cfg, format!("network = {}\nsamples = 20\nrealizations = 2\nseed = 3\n", net.display())).unwrap();

    ok(&vpp(&["params", "--config"], &[&cfg, Path::new("-o"), &d.join("params.json")]));
    ok(&vpp(
        &["region", "--config"],
        &[&cfg, Path::new("--params"), &d.join("params.json"), Path::new("-o"), &d.join("region.csv")],
    ));
    assert!(d.join("region_meta.json").exists());
    let region = csv_rows(&d.join("region.csv"));
    assert!(region.len() >= 3 * 2);

    ok(&vpp(&["cost", "--config"], &[&cfg, Path::new("--region"), &d.join("region_meta.json"), Path::new("-o"), &d.join("cost.csv")]));
    assert!(d.join("bid.json").exists());
    assert!(csv_rows(&d.join("cost.csv")).iter().all(|r| &r[4] == "true"));

    // The flag wins over the config file.
    ok(&vpp(
        &["validate", "--samples", "5", "--config"],
        &[&cfg, Path::new("--bid"), &d.join("bid.json"), Path::new("-o"), &d.join("report.json")],
    ));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 5);
    assert_eq!(report["n_traces"], 10);

    let plots = d.join("plots");
    ok(&vpp(
        &["plotdata", "--report"],
        &[&d.join("report.json"), Path::new("--traces"), &d.join("traces.jsonl"), Path::new("--out-dir"), &plots],
    ));
    assert_eq!(csv_rows(&plots.join("coverage.csv")).len(), 5);
    // One generator and one storage unit over two periods per trace; ramps
    // only exist between consecutive periods.
    assert_eq!(csv_rows(&plots.join("ramps.csv")).len(), 10);
    assert_eq!(csv_rows(&plots.join("storage.csv")).len(), 10 * 2);
}
