use std::path::Path;
use std::process::Command;

use friendly_core::cli::{cmd_grid, cmd_gradcheck_with, cmd_train, run, ExperimentConfig, GridSpec};
use friendly_core::curriculum::Strategy;
use friendly_core::nn::{gradcheck, Architecture};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_friendly"))
}

fn moons_config(dir: &Path, strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        epochs: 4,
        batch_size: 16,
        tau1: 5,
        eta: 0.5,
        seeds: vec![0, 1],
        output_dir: dir.to_path_buf(),
        adam: friendly_core::optim::AdamConfig {
            alpha: 0.01,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn train_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = moons_config(dir.path(), Strategy::Friendly);
    cfg.trace = true;
    cfg.dump_epochs = vec![1];
    let summary = cmd_train(&cfg).unwrap();
    assert_eq!(summary.rows.len(), 2);
    let history = read(dir.path().join("history_seed0.csv"));
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_err,val_err,test_err,mean_tau,seconds");
    assert_eq!(lines.len(), 1 + cfg.epochs);
    assert!(read(dir.path().join("summary.csv")).starts_with("strategy,seed,best_epoch,test_err\nFT,0,"));
    assert!(read(dir.path().join("aggregate.csv")).starts_with("strategy,seeds,mean_test_err,std_test_err_population\nFT,2,"));
    let trace = read(dir.path().join("trace_seed1.csv"));
    assert!(trace.starts_with("gamma,tau,frozen_fraction,batch_loss\n1,5,"));
    // 200 examples in batches of 16: 13 iterations per epoch.
    assert_eq!(trace.lines().count(), 1 + 4 * 13);
    let meta: serde_json::Value = serde_json::from_str(&read(dir.path().join("dump_seed0_epoch1.json"))).unwrap();
    assert_eq!(meta["shape"], serde_json::json!([16, 2]));
    let raw = std::fs::read(dir.path().join("dump_seed0_epoch1_delta.f64")).unwrap();
    assert_eq!(raw.len(), 16 * 2 * 8);
    let snapshot = friendly_core::eval::ModelSnapshot::load(dir.path().join("best_seed0.json")).unwrap();
    assert_eq!(snapshot.epoch, summary.rows[0].best_epoch);
    let resolved = ExperimentConfig::load(dir.path().join("config.json")).unwrap();
    assert_eq!(resolved, cfg);
}

#[test]
fn repeated_train_gives_byte_identical_histories() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for strategy in [Strategy::Classic, Strategy::Friendly, Strategy::EasyFirst] {
        cmd_train(&moons_config(a.path(), strategy)).unwrap();
        cmd_train(&moons_config(b.path(), strategy)).unwrap();
        for seed in [0, 1] {
            let name = format!("history_seed{seed}.csv");
            assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
        }
    }
}

#[test]
fn ft_without_inner_steps_matches_ct_history() {
    let ct = tempfile::tempdir().unwrap();
    let ft = tempfile::tempdir().unwrap();
    cmd_train(&moons_config(ct.path(), Strategy::Classic)).unwrap();
    let mut cfg = moons_config(ft.path(), Strategy::Friendly);
    cfg.tau1 = 0;
    cmd_train(&cfg).unwrap();
    assert_eq!(read(ct.path().join("history_seed0.csv")), read(ft.path().join("history_seed0.csv")));
}

#[test]
fn grid_counts_and_sorts_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = moons_config(dir.path(), Strategy::Friendly);
    cfg.seeds = vec![3];
    cfg.epochs = 2;
    cfg.grid = Some(GridSpec {
        eta: Some(vec![0.1, 2.0]),
        tau1: Some(vec![1, 6]),
        ..Default::default()
    });
    let rows = cmd_grid(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    let best = rows
        .iter()
        .map(|r| r.validation_error().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(rows[0].validation_error().unwrap(), best);
    assert!(rows.windows(2).all(|w| w[0].validation_error() <= w[1].validation_error()));
    let csv = read(dir.path().join("grid.csv"));
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("run_0/history_seed3.csv").exists());

    cfg.grid = None;
    assert_eq!(cmd_grid(&cfg).unwrap().len(), 1);
}

#[test]
fn failing_grid_points_are_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = moons_config(dir.path(), Strategy::Friendly);
    cfg.seeds = vec![0];
    cfg.epochs = 1;
    // An absurd Adam step overflows the weights on the second iteration.
    cfg.adam.alpha = 1e308;
    cfg.grid = Some(GridSpec {
        eta: Some(vec![0.5, 1.0]),
        ..Default::default()
    });
    let rows = cmd_grid(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        let failed = row.outcome.as_ref().unwrap_err();
        assert!(failed.contains("numeric failure"), "{failed}");
    }
    let csv = read(dir.path().join("grid.csv"));
    assert_eq!(csv.lines().filter(|l| l.contains(",failed,")).count(), 2);
    assert!(dir.path().join("run_1/history_seed0.csv").exists());
}

#[test]
fn numeric_failure_keeps_partial_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--adam-alpha", "3e307", "--batch-size", "200", "--epochs", "10"])
        .arg("--output-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch 2"));
    let history = read(dir.path().join("history_seed0.csv"));
    assert_eq!(history.lines().count(), 2, "{history}");
    assert!(history.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn gradcheck_flags_corrupted_backward() {
    let arch = Architecture::preset("toy-moons").unwrap();
    let ok = cmd_gradcheck_with(&arch, 0, gradcheck::analytic_gradients).unwrap();
    assert!(ok.passed());
    let bad = cmd_gradcheck_with(&arch, 0, |m, x, y, mode, masks| {
        let mut g = gradcheck::analytic_gradients(m, x, y, mode, masks)?;
        let w = g.params[0].data_mut();
        w[0] *= 1.5;
        w[0] += 0.01;
        Ok(g)
    })
    .unwrap();
    assert!(!bad.passed());
    assert!(bad.render().contains("FAIL"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    // 0: success
    let status = bin()
        .args(["train", "--epochs", "1", "--seeds", "4", "--output-dir", out_s])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(out.join("history_seed4.csv").exists());

    // 1: config errors, including unknown flags and out-of-range values
    for args in [
        vec!["train", "-c", "1.0000001", "--output-dir", out_s],
        vec!["train", "--gamma-max-simp-fraction", "1.0", "--output-dir", out_s],
        vec!["train", "--strategy", "XYZ"],
        vec!["train", "--no-such-flag"],
    ] {
        assert_eq!(run(std::iter::once("friendly").chain(args.iter().copied())), 1, "{args:?}");
    }
    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, r#"{"epochs": 1, "unknown_field": 3}"#).unwrap();
    assert_eq!(run(["friendly", "train", "--config", bad_json.to_str().unwrap()]), 1);

    // 2: numeric failure
    let status = bin()
        .args(["train", "--adam-alpha", "1e308", "--epochs", "1", "--output-dir", out_s])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // 3: I/O errors
    assert_eq!(run(["friendly", "train", "--config", "/nonexistent/cfg.json"]), 3);
    assert_eq!(run(["friendly", "inspect-amat", "/nonexistent.amat"]), 3);

    // gradcheck on a tiny preset passes
    assert_eq!(run(["friendly", "gradcheck", "--architecture", "toy-moons"]), 0);
}

#[test]
fn make_moons_then_inspect() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("moons.amat");
    let p = path.to_str().unwrap();
    assert_eq!(run(["friendly", "make-moons", "--n", "51", "--seed", "2", "--output", p]), 0);
    let summary = friendly_core::cli::cmd_inspect_amat(&path, 2, None).unwrap();
    assert_eq!(summary.examples, 51);
    assert_eq!(summary.class_counts, vec![26, 25]);
    let out = bin().args(["inspect-amat", p, "--features", "2"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("examples  51"));
    // Wrong feature count is a format (I/O class) error.
    assert_eq!(run(["friendly", "inspect-amat", p, "--features", "3"]), 3);
}

#[test]
fn amat_dataset_config_trains() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.amat");
    let test = dir.path().join("test.amat");
    friendly_core::cli::cmd_make_moons(120, 0.1, 1, &train).unwrap();
    friendly_core::cli::cmd_make_moons(40, 0.1, 2, &test).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    let text = serde_json::json!({
        "dataset": {"kind": "amat", "train": train, "test": test, "validation_fraction": 0.25, "train_limit": 100},
        "architecture": "toy-moons",
        "strategy": "EEF",
        "epochs": 2,
        "batch_size": 10,
        "seeds": [7],
        "output_dir": dir.path().join("out"),
        "trace": true
    });
    std::fs::write(&cfg_path, text.to_string()).unwrap();
    let out = bin().args(["train", "--config", cfg_path.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = read(dir.path().join("out/trace_seed7.csv"));
    assert!(trace.starts_with("gamma,tau,frozen_fraction,batch_loss,k\n1,0,0,"));
    // 75 training rows in batches of 10: 8 iterations per epoch.
    assert_eq!(trace.lines().count(), 1 + 16);
}
