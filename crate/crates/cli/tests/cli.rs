//! Black-box tests of the swaybench binary: each verb end to end, plus
//! the exit code contract.

use std::path::Path;
use std::process::Output;

use num_complex::Complex64;
use swaybench_core::{
    extract_peaks, fit_reference, passthrough_recording, plan_for_recording, save_recording,
    save_reference, weights_from_input, Frf, TrialConfig,
};

fn swaybench(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_swaybench"))
        .args(args)
        .output()
        .expect("binary should run")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn path_str(path: &Path) -> &str {
    path.to_str().expect("temp paths are valid UTF-8")
}

#[test]
fn stimulus_file_has_declared_shape() {
    let dir = tempfile::tempdir().unwrap();
    let out = swaybench(&["generate-stimulus", "--out-dir", path_str(dir.path())]);
    assert_exit(&out, 0);

    let text = std::fs::read_to_string(dir.path().join("stimulus.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# swaybench-stimulus v1"));
    assert!(text.contains("# sample_rate_hz=100"));
    assert!(text.contains("time_s,support_tilt_deg"));
    let data_rows = text.lines().filter(|l| !l.starts_with(['#', 't'])).count();
    assert_eq!(data_rows, 4000);
}

#[test]
fn trial_reference_analysis_chain_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let trial_dir = dir.path().join("trial");
    let out = swaybench(&[
        "run-trial",
        "--preset",
        "standard",
        "--seed",
        "5",
        "--out-dir",
        path_str(&trial_dir),
    ]);
    assert_exit(&out, 0);
    let manifest = std::fs::read_to_string(trial_dir.join("manifest.json")).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(manifest["preset"], "standard");
    assert_eq!(
        manifest["derived"]["plant"]["gravity_levers_nm_per_rad"]
            .as_array()
            .unwrap()
            .len(),
        4
    );
    assert_eq!(
        manifest["derived"]["controller"]["controlled_variables"][0],
        "com-sway"
    );
    assert_eq!(manifest["result"]["completed"], true);

    let surrogate = dir.path().join("surrogate.json");
    std::fs::write(&surrogate, r#"{"n_subjects": 6, "master_seed": 3}"#).unwrap();
    let ref_dir = dir.path().join("ref");
    let out = swaybench(&[
        "make-reference",
        "--config",
        path_str(&surrogate),
        "--out-dir",
        path_str(&ref_dir),
    ]);
    assert_exit(&out, 0);
    let reference = ref_dir.join("reference.json");

    let analysis_dir = dir.path().join("analysis");
    let out = swaybench(&[
        "analyze",
        "--input",
        path_str(&trial_dir.join("recording.csv")),
        "--reference",
        path_str(&reference),
        "--out-dir",
        path_str(&analysis_dir),
    ]);
    assert_exit(&out, 0);
    let printed = stdout(&out);
    assert!(
        printed.contains("score: D ="),
        "summary missing score:\n{printed}"
    );

    let report = analysis_dir.join("report.json");
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["preset"], "standard");
    assert_eq!(parsed["band_f_x_hz"].as_array().unwrap().len(), 11);
    let frf_rows = std::fs::read_to_string(analysis_dir.join("frf.csv")).unwrap();
    assert_eq!(frf_rows.lines().count(), 12);
    let curve = std::fs::read_to_string(analysis_dir.join("cdf_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 7);
    assert!(analysis_dir.join("score.csv").exists());

    let out = swaybench(&[
        "score",
        "--input",
        path_str(&report),
        "--reference",
        path_str(&reference),
    ]);
    assert_exit(&out, 0);
    assert!(stdout(&out).contains("D ="));

    let plot_dir = dir.path().join("plots");
    let out = swaybench(&[
        "report",
        "--input",
        path_str(&report),
        "--reference",
        path_str(&reference),
        "--out-dir",
        path_str(&plot_dir),
    ]);
    assert_exit(&out, 0);
    for file in ["frf.csv", "score.csv", "cdf_curve.csv"] {
        assert!(plot_dir.join(file).exists(), "missing {file}");
    }
}

#[test]
fn invalid_configuration_exits_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"stimulus": {"sample_rate": -5}}"#).unwrap();
    let out = swaybench(&["run-trial", "--config", path_str(&config)]);
    assert_exit(&out, 2);

    let out = swaybench(&["run-trial", "--preset", "bogus"]);
    assert_exit(&out, 2);

    let out = swaybench(&[
        "analyze",
        "--input",
        path_str(&dir.path().join("missing.csv")),
        "--reference",
        path_str(&dir.path().join("missing.json")),
    ]);
    assert_exit(&out, 2);
}

#[test]
fn falling_trial_exits_fall_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("fall.json");
    std::fs::write(&config, r#"{"stimulus": {"peak_to_peak": 60.0}}"#).unwrap();
    let out = swaybench(&[
        "run-trial",
        "--config",
        path_str(&config),
        "--out-dir",
        path_str(dir.path()),
    ]);
    assert_exit(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("fall detected"));
}

#[test]
fn unalignable_recording_exits_analysis_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrialConfig::default();
    let mut recording = passthrough_recording(&config).unwrap();
    let plan = plan_for_recording(&recording).unwrap();

    let u = extract_peaks(&recording.stimulus_deg, &plan, 2).unwrap();
    let weights = weights_from_input(&u, &plan).unwrap();
    let frfs: Vec<Frf> = (0..25)
        .map(|i| {
            let h = (0..plan.n_bands())
                .map(|k| {
                    let a = (7.0 * ((i + 1) * (k + 1)) as f64).sin();
                    let b = (5.0 * ((i + 1) * (k + 1)) as f64).cos();
                    Complex64::new(1.0 + 0.03 * a, 0.03 * b)
                })
                .collect();
            Frf {
                plan: plan.clone(),
                h,
            }
        })
        .collect();
    let reference = fit_reference(&frfs, &weights).unwrap();
    let ref_path = dir.path().join("reference.json");
    save_reference(&reference, &ref_path).unwrap();

    recording.measured_tilt_deg.values = vec![0.0; recording.n_samples()];
    let rec_path = dir.path().join("flat.csv");
    save_recording(&recording, &rec_path).unwrap();

    let out = swaybench(&[
        "analyze",
        "--input",
        path_str(&rec_path),
        "--reference",
        path_str(&ref_path),
    ]);
    assert_exit(&out, 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("align"));
}

#[test]
fn foreign_csv_ingests_with_schema_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t,platform,sensor,body\n");
    for k in 0..200 {
        let t = k as f64 / 50.0;
        let x = (std::f64::consts::TAU * t / 2.0).sin();
        csv.push_str(&format!("{t},{x},{x},{}\n", 0.5 * x));
    }
    let input = dir.path().join("foreign.csv");
    std::fs::write(&input, csv).unwrap();
    let schema = dir.path().join("schema.json");
    std::fs::write(
        &schema,
        r#"{
            "time_column": "t",
            "stimulus_column": "platform",
            "measured_tilt_column": "sensor",
            "sway_column": "body",
            "sample_rate_hz": 50.0,
            "n_periods": 2,
            "samples_per_period": 100
        }"#,
    )
    .unwrap();

    let out_dir = dir.path().join("native");
    let out = swaybench(&[
        "ingest",
        "--input",
        path_str(&input),
        "--schema",
        path_str(&schema),
        "--out-dir",
        path_str(&out_dir),
    ]);
    assert_exit(&out, 0);
    let native = std::fs::read_to_string(out_dir.join("recording.csv")).unwrap();
    assert!(native.starts_with("# swaybench-recording v1"));
    assert!(native.contains("time_s,support_tilt_deg,measured_tilt_deg,com_sway_deg"));

    let again = dir.path().join("again");
    let out = swaybench(&[
        "ingest",
        "--input",
        path_str(&out_dir.join("recording.csv")),
        "--out-dir",
        path_str(&again),
    ]);
    assert_exit(&out, 0);
}
