use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bose-kms"))
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/acceptance.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(run(&["--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["partition", "--nope"]).status.code(), Some(2));
    assert_eq!(run(&["cumulants"]).status.code(), Some(2));
}

#[test]
fn selftest_quick_passes() {
    let out = run(&["selftest", "--quick"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
    assert!(!text.contains("FAIL "));
}

#[test]
fn cumulant_counts() {
    let out = run(&["cumulants", "--count-graphs", "4", "--count-pairings", "3", "--bell", "5"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "38\n15\n52\n");
    let out = run(&["cumulants", "--count-pairings", "4", "--kind", "charged"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "24\n");
}

#[test]
fn region_csv_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("region.csv");
    let st = run(&["region", "--config", config().to_str().unwrap(), "--sweep", "beta=0.5:4:4,phi0=0:1:3", "--out", out.to_str().unwrap()]);
    assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "beta,phi0,v0,g_l1,g_norm,vtilde_gg,epsilon,c_tilde,dim,r,margin,verdict,gamma,intro_margin,intro_verdict"
    );
    assert_eq!(lines.count(), 12);
    let manifest = json(&dir.path().join("region.csv.manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
}

#[test]
fn partition_inside_bound_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let mut values = Vec::new();
    for (name, workers) in [("a.json", "1"), ("b.json", "3")] {
        let out = dir.path().join(name);
        let st = run(&["--workers", workers, "partition", "--config", cfg.to_str().unwrap(), "--samples", "3000", "--seed", "4", "--out", out.to_str().unwrap()]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        let v = json(&out);
        assert_eq!(v["inside_interval"], true);
        assert_eq!(v["e_convergent"], true);
        assert!(dir.path().join(format!("{name}.manifest.json")).exists());
        values.push(v["z"].as_f64().unwrap());
    }
    assert_eq!(values[0].to_bits(), values[1].to_bits());
}

#[test]
fn invariant_violation_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("a.csv");
    // a field far outside the series domain
    let rows: String = (0..6).flat_map(|s| (0..4).map(move |t| format!("{s},{t},50.0\n"))).collect();
    std::fs::write(&field, format!("site,time,value\n{rows}")).unwrap();
    let out = dir.path().join("w.json");
    let st = run(&["entropy", "--config", config().to_str().unwrap(), "--field", field.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(st.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&st.stderr).is_empty());
}

#[test]
fn propagator_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.csv");
    let st = run(&["propagator", "--config", config().to_str().unwrap(), "--u", "0.5", "--out", out.to_str().unwrap()]);
    assert!(st.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "p,k,value");
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn mc_json_is_flat_with_strata_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut means = Vec::new();
    for (name, workers) in [("a.json", "1"), ("b.json", "4")] {
        let out = dir.path().join(name);
        let st = run(&["--workers", workers, "mc", "--config", config().to_str().unwrap(), "--hs", "--x", "0", "--y", "2", "--samples", "2000", "--n-max", "4", "--steps", "16", "--seed", "8", "--out", out.to_str().unwrap()]);
        assert!(st.status.success(), "{}", String::from_utf8_lossy(&st.stderr));
        let v = json(&out);
        let obj = v.as_object().unwrap();
        assert!(obj.values().all(|x| !x.is_array() && !x.is_object()));
        assert!(v["mean"].as_f64().unwrap() <= v["free_reference"].as_f64().unwrap());
        let table = std::fs::read_to_string(dir.path().join(format!("{name}.strata.csv"))).unwrap();
        assert_eq!(table.lines().next().unwrap(), "tau,weight,mean,std_error,n_samples,step");
        assert_eq!(table.lines().count() as u64, 1 + v["n_strata"].as_u64().unwrap());
        means.push(v["mean"].as_f64().unwrap());
    }
    assert_eq!(means[0].to_bits(), means[1].to_bits());
}
