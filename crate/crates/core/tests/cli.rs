use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sphere-mi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("run.toml");
    std::fs::write(
        &p,
        "repeats = 1\n[digitizer]\nsample_rate = 2e9\nn_samples = 1000000\nbit_depth = 8\nfull_scale = 255.0\n",
    )
    .unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn oracle_check_passes() {
    let o = cli(&["oracle-check", "--random", "3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("4 tuples"));
}

#[test]
fn exit_codes() {
    assert_eq!(
        cli(&["pipeline", "--band-mhz", "3:1"]).status.code(),
        Some(2)
    );
    assert_eq!(
        cli(&["pipeline", "--step-ns", "0.3"]).status.code(),
        Some(2)
    );
    assert_eq!(
        cli(&["analyze", "/nonexistent/a.csv", "/nonexistent/b.csv"])
            .status
            .code(),
        Some(3)
    );

    let dir = tempfile::tempdir().unwrap();
    let ramp = dir.path().join("ramp.csv");
    let mut text = String::from("delay_ns,mi,spread\n");
    for i in 0..=100 {
        text += &format!("{},{},0\n", i as f64 * 0.5 - 25.0, i as f64);
    }
    std::fs::write(&ramp, text).unwrap();
    let o = cli(&["fit", ramp.to_str().unwrap(), "--sigma0-ns", "32.1"]);
    assert_eq!(o.status.code(), Some(4), "{o:?}");
}

#[test]
fn simulate_analyze_spectrum_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().to_str().unwrap();
    for scenario in ["twin-unobstructed", "twin-channel", "split-coherent"] {
        let o = cli(&[
            "simulate",
            "--config",
            &cfg,
            "--scenario",
            scenario,
            "--out-dir",
            out,
        ]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let file = |s: &str| dir.path().join(s).to_str().unwrap().to_owned();

    let o = cli(&[
        "spectrum",
        &file("twin-unobstructed_a.twbm"),
        &file("twin-unobstructed_b.twbm"),
        &file("split-coherent_a.twbm"),
        &file("split-coherent_b.twbm"),
        "--config",
        &cfg,
        "--out",
        &file("spectrum.csv"),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let db: f64 = stdout(&o)
        .trim()
        .trim_start_matches("in-band mean: ")
        .trim_end_matches(" dB")
        .parse()
        .unwrap();
    assert!((db + 7.0).abs() < 1.0, "{db}");

    for (name, scenario) in [
        ("twin.csv", "twin-unobstructed"),
        ("chan.csv", "twin-channel"),
    ] {
        let o = cli(&[
            "analyze",
            &file(&format!("{scenario}_a.twbm")),
            &file(&format!("{scenario}_b.twbm")),
            "--config",
            &cfg,
            "--out",
            &file(name),
        ]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let o = cli(&["fit", &file("chan.csv"), "--reference", &file("twin.csv")]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let fit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let tau0 = fit["tau0"].as_f64().unwrap();
    assert!((tau0 - 32.7e-9).abs() < 5e-9, "{tau0}");
}

#[test]
fn pipeline_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = cli(&[
        "pipeline",
        "--config",
        &cfg,
        "--seed",
        "3",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).contains("twin-channel"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([3]));
    for s in [
        "twin-unobstructed",
        "twin-channel",
        "split-thermal",
        "split-coherent",
    ] {
        assert!(out.join(format!("curve_{s}.csv")).exists(), "{s}");
    }
}
