use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tightstack::knode::{load_weights, save_weights, Mlp};
use tightstack::sim::{aggregate_stats, read_metrics, summarize_log};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tightstack"));
    c.env_remove("TIGHTSTACK_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(cmd: &mut Command) -> (i32, String, String) {
    let Output {
        status,
        stdout,
        stderr,
    } = cmd.output().expect("spawn");
    (
        status.code().expect("exit code"),
        String::from_utf8_lossy(&stdout).into_owned(),
        String::from_utf8_lossy(&stderr).into_owned(),
    )
}

const TWO_VEHICLES: &str = r#"
name = "pair"
duration = 3.0

[trajectory]
kind = "hover"
start = [1.0, 0.0, 1.0]

[[vehicles]]
variant = "mpc"
rate_hz = 200

[[vehicles]]
variant = "l1_mpc"
rate_hz = 400
offset = [0.0, 0.5, 0.0]
"#;

#[test]
fn hover_config_succeeds_and_tracks() {
    let out = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = run(bin()
        .arg("simulate")
        .arg(configs().join("hover.toml"))
        .arg("--out")
        .arg(out.path()));
    assert_eq!(code, 0, "{stdout}{stderr}");
    let m = read_metrics(&out.path().join("hover_seed1.metrics.json")).unwrap();
    assert!(m.vehicles[0].rmse < 0.005, "{}", m.vehicles[0].rmse);
    assert!(out.path().join("hover_seed1.csv").is_file());
    assert!(out.path().join("hover_seed1.timing.csv").is_file());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let out = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(bin()
        .env("TIGHTSTACK_OUT", out.path())
        .arg("simulate")
        .arg(configs().join("hover.toml")));
    assert_eq!(code, 0, "{stderr}");
    assert!(out.path().join("hover_seed1.csv").is_file());
}

#[test]
fn knode_without_weights_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        TWO_VEHICLES.replace("\"l1_mpc\"", "\"l1_knode_dw_mpc\""),
    )
    .unwrap();
    let (code, _, stderr) = run(bin()
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 1);
    assert!(stderr.contains("vehicle 1"), "{stderr}");
}

#[test]
fn unknown_key_reports_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, TWO_VEHICLES.replace("offset =", "ofset =")).unwrap();
    let (code, _, stderr) = run(bin()
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 1);
    assert!(
        stderr.contains("line 16, column 1") && stderr.contains("ofset"),
        "{stderr}"
    );
}

#[test]
fn collision_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("crossing.toml");
    // The second vehicle's line passes straight through the first one.
    let text = TWO_VEHICLES
        .replace("duration = 3.0", "duration = 6.0")
        .replace(
            "offset = [0.0, 0.5, 0.0]",
            "[vehicles.trajectory]\nkind = \"line\"\nstart = [0.0, 0.0, 1.0]\nhover_before = 0.5",
        );
    std::fs::write(&path, text).unwrap();
    let (code, stdout, stderr) = run(bin()
        .arg("simulate")
        .arg(&path)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 2, "{stdout}{stderr}");
    assert!(stdout.contains("collision"), "{stdout}");
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.txt");
    let (code, stdout, stderr) = run(bin()
        .args([
            "train",
            "--scenario",
            "static_top",
            "--seeds",
            "1",
            "--epochs",
            "0",
            "--out",
        ])
        .arg(&weights));
    assert_eq!(code, 0, "{stdout}{stderr}");
    let saved = load_weights(&weights).unwrap();
    let init = Mlp::init(&[8, 32, 32, 3], saved.output_scale, 7).unwrap();
    assert_eq!(saved.params(), init.params());
    let losses = std::fs::read_to_string(dir.path().join("w.loss.csv")).unwrap();
    assert_eq!(losses.lines().count(), 2, "{losses}");
    assert!(stdout.contains("held-out"), "{stdout}");
}

#[test]
fn training_is_deterministic_and_divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train",
        "--scenario",
        "static_top",
        "--seeds",
        "1",
        "--epochs",
        "3",
        "--out",
    ];
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    assert_eq!(run(bin().args(args).arg(&a)).0, 0);
    assert_eq!(run(bin().args(args).arg(&b)).0, 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let c = dir.path().join("c.txt");
    let (code, _, stderr) = run(bin().args(args).arg(&c).args(["--learning-rate", "1e300"]));
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("diverged"), "{stderr}");
    let checkpoint = load_weights(&c).unwrap();
    assert!(checkpoint.params().iter().all(|p| p.is_finite()));
}

#[test]
fn sweep_without_weights_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(bin()
        .args(["sweep", "--experiment", "tight", "--weights"])
        .arg(dir.path().join("missing.txt"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 1);
    assert!(stderr.contains("missing.txt"), "{stderr}");
}

#[test]
fn tight_sweep_reports_every_vehicle() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.txt");
    save_weights(&Mlp::init(&[8, 8, 3], 0.33, 1).unwrap(), &weights).unwrap();
    let (code, stdout, stderr) = run(bin()
        .args([
            "sweep",
            "--experiment",
            "tight",
            "--seeds",
            "1",
            "--weights",
        ])
        .arg(&weights)
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(code, 0, "{stdout}{stderr}");
    let summary = std::fs::read_to_string(dir.path().join("tight/report/summary.csv")).unwrap();
    // Two groups of three vehicles each.
    assert_eq!(summary.lines().count(), 1 + 6, "{summary}");
    for role in ["bottom", "center", "top"] {
        assert_eq!(summary.matches(&format!(",{role},")).count(), 2);
    }
    let runs = std::fs::read_to_string(dir.path().join("tight/report/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 6);
}

#[test]
fn report_tables_equal_aggregate_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.toml");
    std::fs::write(
        &path,
        TWO_VEHICLES.replace("duration = 3.0", "duration = 1.0\nseeds = [1, 2, 3]"),
    )
    .unwrap();
    let runs = dir.path().join("runs");
    assert_eq!(
        run(bin().arg("simulate").arg(&path).arg("--out").arg(&runs)).0,
        0
    );
    let (code, _, stderr) = run(bin().arg("report").arg("--in").arg(&runs));
    assert_eq!(code, 0, "{stderr}");

    let mut logs: Vec<_> = std::fs::read_dir(&runs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.to_str().unwrap().ends_with("seed1.csv")
                || p.to_str().unwrap().ends_with("seed2.csv")
                || p.to_str().unwrap().ends_with("seed3.csv")
        })
        .collect();
    logs.sort();
    assert_eq!(logs.len(), 3);
    let summaries: Vec<_> = logs.iter().map(|p| summarize_log(p).unwrap().1).collect();
    let stats = aggregate_stats(&summaries).unwrap();
    let table = std::fs::read_to_string(runs.join("report/summary.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 2);
    for (row, v) in rows.iter().zip(&stats[0].vehicles) {
        let f = |i: usize| row[i].parse::<f64>().unwrap();
        assert_eq!(
            (f(6), f(7), f(8), f(9)),
            (v.rmse_mean, v.rmse_std, v.z_max_mean, v.z_max_std)
        );
        assert_eq!(row[4], "3");
    }
    assert!(runs.join("report/series/pair_seed2.z_thrust.csv").is_file());
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, stderr) = run(bin().arg("report").arg("--in").arg(dir.path()));
    assert_eq!(code, 1);
    assert!(stderr.contains("no runs found"), "{stderr}");
}

#[test]
fn corrupt_log_names_file_and_row() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(bin()
            .arg("simulate")
            .arg(configs().join("hover.toml"))
            .arg("--out")
            .arg(dir.path()))
        .0,
        0
    );
    let log = dir.path().join("hover_seed1.csv");
    let text = std::fs::read_to_string(&log).unwrap();
    let broken: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 20 {
                l.replace(',', ";")
            } else {
                l.to_string()
            }
        })
        .collect();
    std::fs::write(&log, broken.join("\n")).unwrap();
    let (code, _, stderr) = run(bin().arg("report").arg("--in").arg(dir.path()));
    assert_eq!(code, 1);
    assert!(
        stderr.contains("hover_seed1.csv") && stderr.contains("row 21"),
        "{stderr}"
    );
}
