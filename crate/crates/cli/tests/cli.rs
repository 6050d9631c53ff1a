use std::path::Path;
use std::process::{Command, Output};

fn mixconf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixconf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn lambda_diag_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diag.csv");
    let res = mixconf(&["lambda-diag", "--seed", "5", "--out", out.to_str().unwrap()]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("bin_lo,bin_hi,center,hist_prob,pdf_prob,hist_density,pdf,lambda_b"));
    assert_eq!(text.lines().count(), 51);
    let meta = read_json(&dir.path().join("diag.meta.json"));
    assert_eq!(meta["seed"], 5);
    assert_eq!(meta["config"]["kind"], "lambda_diagnostics");
}

#[test]
fn ssl_from_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ssl.toml");
    write(
        &cfg,
        "seed = 1\nrepeats = 3\n[dataset]\nn_samples = 300\n[split]\nn_test = 100\n[ssl]\niterations = 40\n",
    );
    let out = dir.path().join("ssl.json");
    let res = mixconf(&[
        "ssl",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--repeats",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report = read_json(&out);
    assert_eq!(report["seed"], 9);
    assert_eq!(report["config"]["repeats"], 1);
    assert_eq!(report["config"]["ssl"]["iterations"], 40);
    assert_eq!(report["ssl"]["errors"].as_array().unwrap().len(), 1);
    assert_eq!(report["baseline"]["ssl"]["lambda_u"], 0.0);
    assert!(dir.path().join("ssl.repeat0.csv").exists());
}

#[test]
fn calibrate_and_sweep_run() {
    let dir = tempfile::tempdir().unwrap();
    let cal_cfg = dir.path().join("cal.toml");
    write(
        &cal_cfg,
        "repeats = 1\n[dataset]\nn_samples = 400\n[split]\nn_validation = 50\nn_test = 100\n\
         [calibration]\nproportions = [1.0]\niterations = 20\n",
    );
    let cal_out = dir.path().join("cal.json");
    let res = mixconf(&[
        "calibrate",
        "--config",
        cal_cfg.to_str().unwrap(),
        "--out",
        cal_out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert_eq!(read_json(&cal_out)["cells"].as_array().unwrap().len(), 2);

    let sweep_cfg = dir.path().join("sweep.toml");
    write(
        &sweep_cfg,
        "repeats = 1\n[dataset]\nn_samples = 300\n[split]\nn_test = 100\n[ssl]\niterations = 20\n\
         [sweep]\nthresholds = [0.9, 0.6]\n",
    );
    let sweep_out = dir.path().join("sweep.json");
    let res = mixconf(&[
        "sweep-threshold",
        "--config",
        sweep_cfg.to_str().unwrap(),
        "--out",
        sweep_out.to_str().unwrap(),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = read_json(&sweep_out)["rows"].as_array().unwrap().clone();
    assert_eq!(rows[0]["c_thr"], 0.6);
    assert_eq!(rows[1]["c_thr"], 0.9);
}

fn assert_json_error(res: &Output) {
    assert!(!res.status.success());
    let stderr = String::from_utf8_lossy(&res.stderr);
    let last = stderr.lines().last().unwrap();
    let value: serde_json::Value = serde_json::from_str(last).unwrap();
    assert!(value["error"].as_str().is_some_and(|s| !s.is_empty()));
}

#[test]
fn invalid_inputs_fail_with_json_error() {
    assert_json_error(&mixconf(&["ssl", "--repeats", "0"]));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    write(&bad, "[ssl]\nc_thr = 1.5\n");
    assert_json_error(&mixconf(&["ssl", "--config", bad.to_str().unwrap()]));

    write(&bad, "[ssl\n");
    assert_json_error(&mixconf(&["ssl", "--config", bad.to_str().unwrap()]));

    assert_json_error(&mixconf(&[
        "calibrate",
        "--config",
        "/nonexistent/cal.toml",
    ]));

    write(
        &bad,
        "[diagnostics]\nkernel = { kind = \"mixup\", alpha = 1.0 }\n",
    );
    assert_json_error(&mixconf(&[
        "lambda-diag",
        "--config",
        bad.to_str().unwrap(),
    ]));
}
