use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tailcomb::experiments::format::fmt_g17;
use tailcomb::experiments::{CalibrationRecord, FalsifierReport, PowerRecord};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tailcomb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn lambda_prints_closed_form() {
    let o = run(&["lambda", "--nu", "1", "--rho", "0"]);
    assert!(o.status.success());
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
}

#[test]
fn combine_each_test() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(
        dir.path(),
        "p.txt",
        "0.01 0.5 0.2 0.9\n# comment\n\n0.3,0.3,0.3,0.3\n",
    );
    for test in ["pct", "cct", "tippett", "fct"] {
        let o = run(&["combine", "--test", test, "--pvalues", &pv]);
        assert!(
            o.status.success(),
            "{test}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let lines: Vec<f64> = stdout(&o).lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|p| (0.0..=1.0).contains(p)));
    }
    let o = run(&["combine", "--test", "tippett", "--pvalues", &pv]);
    let first: f64 = stdout(&o).lines().next().unwrap().parse().unwrap();
    assert!((first - (1.0 - 0.99f64.powi(4))).abs() < 1e-15);
}

#[test]
fn combine_fct_blocks_and_weights() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(dir.path(), "p.txt", "0.5 0.5 0.5 0.5\n");
    let blocks = write(dir.path(), "b.txt", "1 2\n3,4\n");
    let weights = write(dir.path(), "w.txt", "0.5 0.5\n");
    let o = run(&[
        "combine",
        "--test",
        "fct",
        "--blocks",
        &blocks,
        "--weights",
        &weights,
        "--pvalues",
        &pv,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: f64 = stdout(&o).trim().parse().unwrap();
    // Y_j = Psi(0.75) = 1/ln 4, Y_w = Y_j / 2, c_w = 1
    let expected = 1.0 - (-2.0 * 4f64.ln()).exp();
    assert!((v - expected).abs() < 1e-14, "{v} vs {expected}");
    assert_eq!(stdout(&o), format!("{}\n", fmt_g17(v)));
}

#[test]
fn combine_power_mean_needs_gamma() {
    let dir = tempfile::tempdir().unwrap();
    let pv = write(dir.path(), "p.txt", "0.1 0.2\n");
    assert_eq!(
        run(&["combine", "--test", "powermean", "--pvalues", &pv])
            .status
            .code(),
        Some(2)
    );
    let o = run(&[
        "combine",
        "--test",
        "powermean",
        "--gamma",
        "1",
        "--pvalues",
        &pv,
    ]);
    let pct = run(&["combine", "--test", "pct", "--pvalues", &pv]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), stdout(&pct));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = write(dir.path(), "p.txt", "0.1 0.2\n0.3\n");
    let bad = write(dir.path(), "q.txt", "0.1 1.5\n");
    assert_eq!(
        run(&["combine", "--test", "pct", "--pvalues", &ragged])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["combine", "--test", "pct", "--pvalues", &bad])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["combine", "--test", "nope", "--pvalues", &ragged])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["lambda", "--nu", "1"]).status.code(), Some(2));
    assert_eq!(
        run(&["calibrate", "--model", "t", "--alphas", "0.7", "--n", "10"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["power", "--effects", "1,2", "--n", "10"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["falsify", "--combiner", "tippett", "--budget", "5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
}

#[test]
fn config_file_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[lambda]\nnu = 1.0\nrho = 0.5\n");
    let from_file = run(&["--config", &cfg, "lambda"]);
    assert!(from_file.status.success());
    assert!((stdout(&from_file).trim().parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
    let flag = run(&["lambda", "--config", &cfg, "--rho", "0"]);
    assert!((stdout(&flag).trim().parse::<f64>().unwrap() - (1.0 - 0.5f64.sqrt())).abs() < 1e-12);
    let broken = write(dir.path(), "bad.toml", "[lambda\n");
    assert_eq!(run(&["--config", &broken, "lambda"]).status.code(), Some(2));
}

#[test]
fn ratio_reports_class() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.json",
        r#"{"version":1,"beta":1.0,"signed":false,"atoms":[[1,0],[0,1]],"weights":[0.5,0.5]}"#,
    );
    let o = run(&["ratio", "--combiner", "powermean:2", "--measure", &m]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("ratio 1.414213562373095"), "{out}");
    assert!(out.contains("class liberal"));
    let o = run(&["ratio", "--combiner", "tippett", "--measure", &m]);
    assert!(stdout(&o).contains("class calibrated"));
}

#[test]
fn calibrate_writes_csv_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cal.csv");
    let out = out.to_str().unwrap();
    let args = [
        "calibrate",
        "--model",
        "t",
        "--nu",
        "2,5",
        "--d",
        "4",
        "--tests",
        "pct,cct",
        "--alphas",
        "1e-2",
        "--n",
        "4000",
        "--seed",
        "9",
        "--out",
        out,
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
    let first = fs::read_to_string(out).unwrap();
    assert!(first.starts_with(
        "test,model,nu,d,sigma_kind,rho,alpha,n_sims,rejections,alpha_hat_ratio,se_ratio,seed\n"
    ));
    assert_eq!(CalibrationRecord::parse_csv(&first).unwrap().len(), 4);
    run(&args);
    assert_eq!(fs::read_to_string(out).unwrap(), first);
}

#[test]
fn calibrate_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = write(
        dir.path(),
        "model.json",
        r#"{"kind":"multivariate_t","d":3,"nu":3,"sigma":{"kind":"ar","rho":0.5}}"#,
    );
    let o = run(&[
        "calibrate",
        "--model",
        &model,
        "--tests",
        "tippett",
        "--alphas",
        "0.05",
        "--n",
        "4000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = CalibrationRecord::parse_csv(&stdout(&o)).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].d, 3);
}

#[test]
fn power_and_falsify_outputs() {
    let o = run(&[
        "power",
        "--d",
        "4",
        "--effects",
        "0,2",
        "--n",
        "3000",
        "--tests",
        "pct",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let recs = PowerRecord::parse_csv(&stdout(&o)).unwrap();
    assert_eq!(recs.len(), 4);

    let o = run(&[
        "falsify",
        "--combiner",
        "tippett",
        "--d",
        "2",
        "--atoms",
        "4",
        "--budget",
        "400",
    ]);
    assert!(o.status.success());
    let report: FalsifierReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(report.best_ratio < 1.0);
    assert_eq!(report.evaluations, 400);
}

#[test]
fn tailscale_csv() {
    let o = run(&[
        "tailscale",
        "--model",
        "breiman-axes",
        "--d",
        "3",
        "--combiner",
        "tippett",
        "--thresholds",
        "10,100",
        "--n",
        "20000",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.starts_with("combiner,model,threshold,"));
    assert_eq!(out.lines().count(), 3);
    assert_eq!(
        run(&[
            "tailscale",
            "--model",
            "gaussian",
            "--combiner",
            "tippett",
            "--n",
            "10"
        ])
        .status
        .code(),
        Some(2)
    );
}
