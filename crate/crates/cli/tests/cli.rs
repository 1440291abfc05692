use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;

fn tensorcf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorcf")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn header(path: &Path) -> csv::StringRecord {
    csv::Reader::from_path(path).unwrap().headers().unwrap().clone()
}

fn field<'a>(path: &Path, row: &'a csv::StringRecord, name: &str) -> &'a str {
    let idx = header(path).iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    &row[idx]
}

/// Write a long-format panel: `layers[0]` is the primary outcome `y`,
/// later layers are controls `z1, z2, ...`.
fn write_panel(path: &Path, layers: &[DMatrix<f64>], w: &DMatrix<bool>) {
    let mut wtr = csv::Writer::from_path(path).unwrap();
    wtr.write_record(["unit_id", "period", "outcome_id", "value", "treated"]).unwrap();
    let (n, t) = layers[0].shape();
    for i in 0..n {
        for p in 0..t {
            for (k, layer) in layers.iter().enumerate() {
                let name = if k == 0 { "y".to_string() } else { format!("z{k}") };
                let treated = k == 0 && w[(i, p)];
                wtr.write_record([
                    format!("u{i:02}"),
                    (p + 1).to_string(),
                    name,
                    layer[(i, p)].to_string(),
                    u8::from(treated).to_string(),
                ])
                .unwrap();
            }
        }
    }
    wtr.flush().unwrap();
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn simulate_is_byte_identical_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&tensorcf(&["simulate", "--scenario", "S1", "--reps", "3", "--seed", "11", "--out", out.to_str().unwrap()]));
    }
    for f in ["simulation_summary.csv", "simulation_reps.csv"] {
        let (x, y) = (std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f} differs between runs");
    }
    let summary = a.join("simulation_summary.csv");
    let rows = records(&summary);
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let d: f64 = field(&summary, r, "mean_delta_hat").parse().unwrap();
        assert!(d.is_finite());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 11);
    assert_eq!(
        manifest["config_sha256"],
        serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap()
            ["config_sha256"]
    );
}

#[test]
fn fit_with_one_outcome_gives_identical_tensor_and_matrix_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (n, t) = (20, 6);
    let y = DMatrix::from_fn(n, t, |i, p| ((i * 13 + p * 7) % 17 + 3 * p + i) as f64);
    let w = DMatrix::from_fn(n, t, |i, p| i >= 15 && p >= 4);
    write_panel(&dir.path().join("panel.csv"), &[y], &w);
    let cfg = write_config(
        dir.path(),
        "data = \"panel.csv\"\nprimary_outcome = \"y\"\nmethods = [\"TC\", \"MC1\"]\nbootstrap_reps = 10\noos_folds = 3\ncv_folds = 3\n",
    );
    let out = dir.path().join("out");
    ok(&tensorcf(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let table = out.join("fit.csv");
    let rows = records(&table);
    assert_eq!(rows.len(), 2);
    assert_eq!((&rows[0][0], &rows[1][0]), ("TC", "MC1"));
    assert_eq!(rows[0].iter().skip(1).collect::<Vec<_>>(), rows[1].iter().skip(1).collect::<Vec<_>>());
    assert!(!field(&table, &rows[0], "delta_hat").is_empty());

    let imputations = records(&out.join("imputations.csv"));
    assert_eq!(imputations.len(), 2 * 10);
    for (a, b) in imputations[..10].iter().zip(&imputations[10..]) {
        assert_eq!(a.iter().skip(1).collect::<Vec<_>>(), b.iter().skip(1).collect::<Vec<_>>());
    }
}

#[test]
fn fit_recovers_the_effect_on_a_noiseless_rank_two_panel() {
    let dir = tempfile::tempdir().unwrap();
    let (n, t) = (30, 8);
    let a =
        DMatrix::from_fn(n, 2, |i, c| if c == 0 { 2.0 + 0.05 * i as f64 } else { 1.0 + ((i * 7) % 5) as f64 * 0.2 });
    let b =
        DMatrix::from_fn(t, 2, |p, c| if c == 0 { 1.0 + 0.1 * p as f64 } else { 0.5 + ((p * 3) % 4) as f64 * 0.25 });
    let mix = DMatrix::from_row_slice(2, 2, &[0.8, 0.3, 0.1, 1.1]);
    let log_y0 = &a * b.transpose();
    let log_z = &a * mix * b.transpose();
    let y0 = log_y0.map(f64::exp_m1);
    let w = DMatrix::from_fn(n, t, |i, p| (i * 5 + p * 3) % 11 == 0);
    let y_obs = DMatrix::from_fn(n, t, |i, p| if w[(i, p)] { 0.9 * y0[(i, p)] } else { y0[(i, p)] });
    write_panel(&dir.path().join("panel.csv"), &[y_obs, log_z.map(f64::exp_m1)], &w);
    let cfg = write_config(
        dir.path(),
        "data = \"panel.csv\"\nprimary_outcome = \"y\"\ncontrol_outcomes = [\"z1\"]\nmethods = [\"TC\"]\n\
         bootstrap_reps = 0\noos_folds = 0\n[solver]\nlambda = 0.0\ntol = 1e-12\nmax_iters = 5000\n",
    );
    let out = dir.path().join("out");
    ok(&tensorcf(&["fit", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let table = out.join("fit.csv");
    let rows = records(&table);
    let delta: f64 = field(&table, &rows[0], "delta_hat").parse().unwrap();
    let truth = 1.0 / 0.9 - 1.0;
    assert!((delta - truth).abs() < 1e-3, "delta {delta} vs {truth}");
}

#[test]
fn cv_and_bootstrap_write_parseable_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (n, t) = (15, 6);
    let y = DMatrix::from_fn(n, t, |i, p| (20 + (i * 31 + p * 17) % 23 + 2 * i) as f64);
    let z = DMatrix::from_fn(n, t, |i, p| (10 + (i * 7 + p * 5) % 13 + i) as f64);
    let w = DMatrix::from_fn(n, t, |i, p| i < 3 && p >= 3);
    write_panel(&dir.path().join("panel.csv"), &[y, z], &w);
    let cfg = write_config(
        dir.path(),
        "data = \"panel.csv\"\nprimary_outcome = \"y\"\ncontrol_outcomes = [\"z1\"]\nmethods = [\"TC\", \"LL1\"]\nlambda_grid = [2.0, 1.0, 0.5]\ncv_folds = 3\n",
    );
    let out = dir.path().join("out");
    let c = cfg.to_str().unwrap();
    ok(&tensorcf(&["cv", "--config", c, "--out", out.to_str().unwrap()]));
    let cv = records(&out.join("cv.csv"));
    assert_eq!(cv.len(), 3);
    assert_eq!(cv.iter().filter(|r| &r[3] == "true").count(), 1);

    ok(&tensorcf(&["bootstrap", "--config", c, "--out", out.to_str().unwrap(), "--reps", "12", "--seed", "5"]));
    let bs = out.join("bootstrap.csv");
    let row = &records(&bs)[0];
    let (lo, point, hi): (f64, f64, f64) = (
        field(&bs, row, "ci_lo").parse().unwrap(),
        field(&bs, row, "delta_hat").parse().unwrap(),
        field(&bs, row, "ci_hi").parse().unwrap(),
    );
    assert!(lo <= hi && point.is_finite());
    assert_eq!(records(&out.join("bootstrap_draws.csv")).len(), 12);
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("panel.csv"),
        "unit_id,period,outcome_id,value,treated\na,1,y,1,0\na,2,y,2,1\na,1,y,3,0\n",
    )
    .unwrap();
    let cfg = write_config(dir.path(), "data = \"panel.csv\"\nprimary_outcome = \"y\"\n");
    let out = tensorcf(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4") && err.contains("line 2"), "{err}");

    let out = tensorcf(&["fit", "--config", cfg.to_str().unwrap(), "--methods", "TC,NOPE"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown method 'NOPE'"));

    assert_eq!(tensorcf(&["fit", "--config", "/nonexistent/run.toml"]).status.code(), Some(1));
    assert_eq!(tensorcf(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(tensorcf(&["--help"]).status.code(), Some(0));
}

#[test]
fn rate_command_reports_every_seed_and_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    ok(&tensorcf(&["rate", "--seeds", "3", "--k-grid", "1,2,4", "--noise-sd", "0.5", "--out", out.to_str().unwrap()]));
    assert_eq!(records(&out.join("rate.csv")).len(), 9);
    assert_eq!(records(&out.join("rate_summary.csv")).len(), 3);
}
