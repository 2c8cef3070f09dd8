use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sunsense() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sunsense"));
    c.env_remove("SUNSENSE_SEED");
    c
}

fn scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/pinhole_bcm.json")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn bench_matches_golden_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = run(sunsense().arg("bench").arg(scenario()).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/pinhole_bcm_metrics.csv");
    assert_eq!(fs::read_to_string(out).unwrap(), fs::read_to_string(golden).unwrap());
}

#[test]
fn bench_output_ignores_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in ["1", "3"] {
        let (m, l) = (dir.path().join(format!("m{workers}.csv")), dir.path().join(format!("l{workers}.csv")));
        let o = run(sunsense().arg("bench").arg(scenario()).args(["--workers", workers]).arg("--out").arg(&m).arg("--log").arg(&l));
        assert!(o.status.success());
        files.push((fs::read(m).unwrap(), fs::read(l).unwrap()));
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn seed_override_changes_noisy_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    assert!(run(sunsense().arg("bench").arg(scenario()).arg("--out").arg(&a)).status.success());
    assert!(run(sunsense().env("SUNSENSE_SEED", "99").arg("bench").arg(scenario()).arg("--out").arg(&b)).status.success());
    assert_ne!(fs::read(a).unwrap(), fs::read(b).unwrap());

    let o = run(sunsense().env("SUNSENSE_SEED", "abc").arg("bench").arg(scenario()).arg("--out").arg(dir.path().join("c.csv")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");

    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{").unwrap();
    let o = run(sunsense().arg("bench").arg(&broken).arg("--out").arg(&out));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("broken.json"));

    let text = fs::read_to_string(scenario()).unwrap();
    let bad_trials = dir.path().join("trials.json");
    fs::write(&bad_trials, text.replace("\"trials\": 4", "\"trials\": 0")).unwrap();
    assert_eq!(run(sunsense().arg("bench").arg(&bad_trials).arg("--out").arg(&out)).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run(sunsense().arg("bench").arg(&missing).arg("--out").arg(&out)).status.code(), Some(2));

    let data = dir.path().join("spots.csv");
    fs::write(&data, "x_mm,y_mm,alpha_deg,beta_deg\n0,0,0,0\n").unwrap();
    let o = run(sunsense().args(["calibrate", "--model", "lsq-geom", "--data"]).arg(&data).arg("--out").arg(dir.path().join("m.json")));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_with_three() {
    let o = run(sunsense().arg("bench").arg(scenario()).arg("--out").arg("/nonexistent-dir/m.csv"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_then_extract_recovers_boresight() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(sunsense().arg("simulate").arg(scenario()).arg("--out-dir").arg(dir.path()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let truth = fs::read_to_string(dir.path().join("truth.csv")).unwrap();
    let rows: Vec<&str> = truth.lines().skip(1).collect();
    assert_eq!(rows.len(), 25);
    let (file, a, b) = rows
        .iter()
        .map(|r| {
            let f: Vec<&str> = r.split(',').collect();
            (f[0].to_string(), f[1].parse::<f64>().unwrap(), f[2].parse::<f64>().unwrap())
        })
        .find(|(_, a, b)| *a != 0.0 && *b != 0.0)
        .unwrap();

    let o = run(sunsense().args(["extract", "--algo", "bcm", "--image"]).arg(dir.path().join(&file)).arg("--scenario").arg(scenario()));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["alpha_deg"].as_f64().unwrap() - a).abs() < 0.05, "{v} vs ({a}, {b})");
    assert!((v["beta_deg"].as_f64().unwrap() - b).abs() < 0.05, "{v} vs ({a}, {b})");

    let o = run(sunsense().args(["extract", "--algo", "bcm", "--image"]).arg(dir.path().join(&file)));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["x"].is_number() && v["flags"].is_array());

    let o = run(sunsense().args(["extract", "--algo", "nope", "--image"]).arg(dir.path().join(&file)));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_then_apply() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut text = String::from("feature,angle_deg\n");
    for i in 0..41 {
        let x = -1.0 + i as f64 * 0.05;
        text += &format!("{x},{}\n", 2.0 + 30.0 * x - 4.0 * x * x);
    }
    fs::write(&data, text).unwrap();
    let model = dir.path().join("m.json");
    let o = run(sunsense().args(["calibrate", "--model", "polynomial", "--degree", "2", "--data"]).arg(&data).arg("--out").arg(&model));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(sunsense().args(["apply", "--model"]).arg(&model).args(["--feature", "-0.5"]));
    assert!(o.status.success());
    let got: f64 = stdout(&o).trim().parse().unwrap();
    assert!((got - (2.0 - 15.0 - 1.0)).abs() < 1e-9, "{got}");

    let o = run(sunsense().args(["apply", "--model"]).arg(&model).args(["--feature", "x"]));
    assert_eq!(o.status.code(), Some(2));
}
