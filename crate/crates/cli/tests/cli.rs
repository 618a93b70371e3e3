//! Contract tests for the command-line surface: artifact layout, exit
//! codes, and pipeline round-trips.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sica() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sica"))
}

fn write_cfg(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    let base = r#"
dataset = "ar7"
d = 2
t = 128
mix_steps = 2
flow = "wgf"
iterations = 1
dre_epochs = 1
dre_batch = 64
kl_monitor = "off"
seed = 5
"#;
    std::fs::write(&path, format!("{base}\n{extra}\n")).unwrap();
    path
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn unmixed_pipeline_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "mix_steps = 0");
    let out = dir.path().join("run");
    run_ok(sica().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(sica().args(["mix", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(sica().args(["eval", "--config"]).arg(&cfg).arg("--out").arg(&out)
        .args(["--recovered"]).arg(out.join("mixed.csv")));
    let mcc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("mcc.json")).unwrap()).unwrap();
    assert!((mcc["mcc"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn demix_then_apply_reproduces_output_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out = dir.path().join("run");
    run_ok(sica().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(sica().args(["mix", "--config"]).arg(&cfg).arg("--out").arg(&out));
    run_ok(sica().args(["demix", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let replay = out.join("replayed.csv");
    run_ok(
        sica()
            .args(["apply", "--input"])
            .arg(out.join("mixed.csv"))
            .arg("--models")
            .arg(out.join("models"))
            .arg("--output")
            .arg(&replay),
    );
    let a = std::fs::read_to_string(out.join("recovered.csv")).unwrap();
    let b = std::fs::read_to_string(&replay).unwrap();
    // artifacts differ only in their provenance comment
    let strip = |s: &str| {
        s.lines()
            .filter(|l| !l.starts_with('#'))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn bad_csv_header_exits_3_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out = dir.path().join("run");
    std::fs::create_dir_all(&out).unwrap();
    let bad = out.join("sources.csv");
    std::fs::write(&bad, "1,2,3\n4,5,6\n").unwrap();
    let result = sica()
        .args(["mix", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("sources.csv:1"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "not_a_real_key = 3\n").unwrap();
    let result = sica()
        .args(["gen", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn missing_input_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let result = sica()
        .args(["demix", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("empty"))
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn sweep_emits_methods_times_cells_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "sweep = [0, 2]\nruns = 2\nmethods = [\"baseline\", \"fastica\"]\nt = 256",
    );
    let out = dir.path().join("run");
    run_ok(sica().args(["sweep", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("method,"))
        .collect();
    assert_eq!(rows.len(), 2 * 2 * 2, "rows: {rows:?}");
    // baseline at j_mix=0 compares sources with themselves
    for row in &rows {
        let cells: Vec<&str> = row.split(',').collect();
        if cells[0] == "baseline" && cells[1] == "0" {
            let score: f64 = cells[3].parse().unwrap();
            assert!((score - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn heart_demo_emits_crosscorr() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "t = 128\niterations = 1\nrf_epochs = 1\nflow = \"rf\"\neuler_steps = 2");
    let out = dir.path().join("run");
    run_ok(sica().args(["demo", "heart", "--config"]).arg(&cfg).arg("--out").arg(&out));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("crosscorr.json")).unwrap())
            .unwrap();
    assert!(json["before"].as_f64().is_some());
    assert!(json["after"].as_f64().is_some());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    run_ok(sica().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&out_a).args(["--seed", "9"]));
    run_ok(sica().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&out_b).args(["--seed", "9"]));
    let a = std::fs::read_to_string(out_a.join("sources.csv")).unwrap();
    let b = std::fs::read_to_string(out_b.join("sources.csv")).unwrap();
    assert_eq!(a, b);
    let out_c = dir.path().join("c");
    run_ok(sica().args(["gen", "--config"]).arg(&cfg).arg("--out").arg(&out_c).args(["--seed", "10"]));
    let c = std::fs::read_to_string(out_c.join("sources.csv")).unwrap();
    assert_ne!(a, c);
}
