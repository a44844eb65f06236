use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ris_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ris-sim"))
        .args(args)
        .env("RIS_SIM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, "m = 8\nn1 = 4\nn2 = 2\ng_t = 64\nceo_population = 20\nceo_iterations = 3\n").unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fig4_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = ris_sim(&["fig4", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "2", "--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("high variance"));
    assert!(stdout(&o).is_empty());
    let csv = fs::read_to_string(out.join("fig4.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scheme,axis,axis_value,per_user_bits,mean_rate,stderr,trials,seed");
    assert_eq!(lines.len(), 12);
    assert!(lines.iter().any(|l| l.starts_with("perfect_csit,codeword_bits,,,")));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fig4");
    assert_eq!(manifest["config"]["m"], 8);
    assert_eq!(manifest["config"]["g_t"], 512);
    assert_eq!(manifest["ceo"]["population"], 20);
    assert_eq!(manifest["trials"], 2);
}

#[test]
fn same_seed_gives_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = ris_sim(&["fig4", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "3", "--seed", "42", "--quiet"]);
        assert!(o.status.success(), "{}", stderr(&o));
        runs.push(fs::read(out.join("fig4.csv")).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let out = dir.path().join("c");
    let o = ris_sim(&["fig4", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "3", "--seed", "43", "--quiet"]);
    assert!(o.status.success());
    assert_ne!(fs::read(out.join("fig4.csv")).unwrap(), runs[0]);
}

#[test]
fn fig5_honors_grid_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("f5");
    let o = ris_sim(&["fig5", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "2", "--gt", "64,256"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote fig5.csv"));
    let csv = fs::read_to_string(out.join("fig5.csv")).unwrap();
    let values: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("proposed,"))
        .map(|l| l.split(',').nth(2).unwrap())
        .collect();
    assert_eq!(values, ["64", "256"]);
    assert!(csv.lines().any(|l| l.starts_with("proposed_perfect_aod,grid_resolution,,")));
}

#[test]
fn malformed_grid_list_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = ris_sim(&["fig5", "--out", dir.path().to_str().unwrap(), "--gt", "64,,x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--gt"));
}

#[test]
fn unwritable_output_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("sub");
    let o = ris_sim(&["fig4", "--out", out.to_str().unwrap(), "--trials", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot"));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "m = 0\n").unwrap();
    let o = ris_sim(&["fig4", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    fs::write(&path, "unknown_key = 3\n").unwrap();
    let o = ris_sim(&["fig4", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = ris_sim(&["sweep", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = ris_sim(&["fig4", "--schemes", "proposed,nope", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn generic_sweep_and_scheme_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("s");
    let o = ris_sim(&[
        "sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--trials", "1", "--bits", "2,3", "--schemes", "proposed",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn overhead_breakdown_and_table() {
    let o = ris_sim(&["overhead"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("36 bits raw  x 0.25 / 10 = 0.9"), "{text}");
    assert!(text.contains("(0.9 / 11.2 / 40)"), "{text}");

    let o = ris_sim(&["overhead", "--bits", "1,10"]);
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["1", "0.9", "11.2", "4", "152", "16.1"]);

    // no amortization: every step counted in full
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.toml");
    fs::write(&path, "coherence_ratio = 1\nstep1_user_fraction = 1.0\n").unwrap();
    let o = ris_sim(&["overhead", "--config", path.to_str().unwrap()]);
    let text = stdout(&o);
    assert!(text.contains("raw total              188 bits"), "{text}");
    assert!(text.contains("per-user amortized   188 bits"), "{text}");
}
