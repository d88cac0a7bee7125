use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mcgd::solver::parse_run_csv;
use serde_json::Value;

fn mcgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcgd")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn build_chain_writes_matrices_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "seeds = [5]\n");
    let out = dir.path().join("nested/out");
    let o = mcgd(&["build-chain", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("chain_seed5.json")).unwrap()).unwrap();
    assert_eq!(meta["reversible_p"], true);
    assert_eq!(meta["reversible_q"], false);
    assert_eq!(meta["cycles"].as_array().unwrap().len(), 5);
    let p = mcgd::markov::TransitionMatrix::from_text(&fs::read_to_string(out.join("P_seed5.txt")).unwrap()).unwrap();
    assert_eq!(p.size(), 20);
}

#[test]
fn zero_cycle_weight_gives_identical_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "[chain]\nw0_factor = 0.0\n");
    let out = dir.path().join("out");
    assert!(mcgd(&["build-chain", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "2"]).status.success());
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("chain_seed2.json")).unwrap()).unwrap();
    let p = meta["eigen_moduli_p"].as_array().unwrap();
    let q = meta["eigen_moduli_q"].as_array().unwrap();
    assert_eq!(p.len(), q.len());
    for (a, b) in p.iter().zip(q) {
        assert!((a.as_f64().unwrap() - b.as_f64().unwrap()).abs() <= 1e-10);
    }
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "");
    let blocker = write(dir.path(), "file", "");
    let o = mcgd(&["build-chain", "--config", &cfg, "--out", &format!("{blocker}/sub")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot create"));
}

#[test]
fn analyze_mixing_two_state_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "p.txt", "2\n0.7 0.3\n0.3 0.7\n");
    let cfg = write(dir.path(), "c.toml", "[chain]\nmatrix = \"p.txt\"\n[mixing]\nk_max = 50\n");
    let out = dir.path().join("out");
    let o = mcgd(&["analyze-mixing", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("mixing.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,deviation_inf_norm,bound_value,fitted_rate,lambda_P,psi_P");
    let mut rows = 0;
    for line in lines {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 6);
        let k = cells[0] as i32;
        assert!((cells[1] - 0.5 * 0.4f64.powi(k)).abs() <= 1e-12);
        assert!(cells[2] >= cells[1]);
        rows += 1;
    }
    assert_eq!(rows, 51);
}

#[test]
fn analyze_mixing_rejects_periodic_chains() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "p.txt", "2\n0 1\n1 0\n");
    let cfg = write(dir.path(), "c.toml", "[chain]\nmatrix = \"p.txt\"\n");
    let o = mcgd(&["analyze-mixing", "--config", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ergodic"));
}

#[test]
fn validate_reports_named_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let ok = write(dir.path(), "ok.toml", "[schedule]\nq = 0.501\n[noise]\nc = 1.0\np = 0.6\n");
    let o = mcgd(&["validate", "--config", &ok]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));

    let bad = write(dir.path(), "bad.toml", "[schedule]\nq = 0.4\n");
    let o = mcgd(&["validate", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("convex step-size condition"));

    write(dir.path(), "perm.txt", "2\n0 1\n1 0\n");
    let per = write(dir.path(), "per.toml", "experiment = \"custom\"\n[chain]\nmatrix = \"perm.txt\"\n");
    let o = mcgd(&["validate", "--config", &per]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ergodic chain"));
}

#[test]
fn run_gate_and_unsafe_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "experiment = \"chain_comparison\"\niterations = 20\nlog_every = 5\n[schedule]\nq = 0.4\n",
    );
    let out = dir.path().join("out");
    let o = mcgd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let o = mcgd(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--unsafe"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn single_iteration_runs_produce_single_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "experiment = \"ar_comparison\"\niterations = 1\nseeds = [1, 2]\n[objective]\nar_dimension = 4\neval_samples = 20\n",
    );
    let out = dir.path().join("out");
    let o = mcgd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut csvs = 0;
    for e in fs::read_dir(&out).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.starts_with("ar_") {
            let rows = parse_run_csv(&fs::read_to_string(&path).unwrap()).unwrap();
            assert_eq!(rows.len(), 1);
            csvs += 1;
        }
    }
    assert_eq!(csvs, 2 * 2 * 7);
}

#[test]
fn summary_totals_match_run_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "experiment = \"custom\"\niterations = 300\nlog_every = 10\nseeds = [3]\n\
         [objective]\nloss = \"sigmoid_sq\"\n[sgdt]\nt_list = [2, 5]\n",
    );
    let out = dir.path().join("out");
    let o = mcgd(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let mut total = 0;
    for run in meta["runs"].as_array().unwrap() {
        assert_eq!(run["seed"], 4);
        let rows = parse_run_csv(&fs::read_to_string(out.join(run["file"].as_str().unwrap())).unwrap()).unwrap();
        let last = rows.last().unwrap();
        assert_eq!(run["samples_consumed"].as_u64().unwrap(), last.samples_consumed);
        assert_eq!(run["iterations"].as_u64().unwrap(), last.k);
        assert_eq!(run["metric"], "min_grad_norm_sq");
        total += last.samples_consumed;
    }
    assert_eq!(total, 300 + 600 + 1500);
    assert_eq!(meta["total_samples"].as_u64().unwrap(), total);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    let plot = fs::read_to_string(out.join("plot_data.csv")).unwrap();
    assert!(plot.starts_with("experiment,loss,method,seed,samples_consumed,metric,value\n"));
}

#[test]
fn chain_comparison_records_both_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "experiment = \"chain_comparison\"\niterations = 50\nlog_every = 10\n");
    let out = dir.path().join("out");
    assert!(mcgd(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]).status.success());
    assert!(out.join("chain_P_seed1.csv").exists() && out.join("chain_Q_seed1.csv").exists());
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("metadata.json")).unwrap()).unwrap();
    let chain = &meta["chains"][0];
    assert!(chain["lambda2_p"].as_f64().unwrap() < 1.0);
    assert!(chain["lambda2_q"].as_f64().unwrap() < 1.0);
}

#[test]
fn malformed_config_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "iterations = \"many\"\n");
    assert_eq!(mcgd(&["validate", "--config", &cfg]).status.code(), Some(1));
    let cfg = write(dir.path(), "d.toml", "iterations = 0\n");
    assert_eq!(mcgd(&["validate", "--config", &cfg]).status.code(), Some(1));
}
