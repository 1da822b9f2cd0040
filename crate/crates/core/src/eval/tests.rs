use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::curriculum::Strategy;
use crate::data::two_moons;
use crate::nn::LayerSpec;
use crate::tensor::Tensor;

fn identity_model(classes: usize) -> Model {
    let arch = Architecture {
        name: "identity".into(),
        input_shape: vec![classes],
        classes,
        layers: vec![LayerSpec::Linear { units: classes }],
    };
    let mut model = Model::new(arch, 0).unwrap();
    let w = model.params_mut()[0].value.data_mut();
    w.fill(0.0);
    for c in 0..classes {
        w[c * classes + c] = 1.0;
    }
    model
}

fn one_hot_dataset(shown: &[usize], labels: &[usize], classes: usize) -> Dataset {
    let mut data = vec![0.0; shown.len() * classes];
    for (i, &c) in shown.iter().enumerate() {
        data[i * classes + c] = 1.0;
    }
    Dataset::new(Tensor::new(vec![shown.len(), classes], data).unwrap(), labels.to_vec(), classes).unwrap()
}

fn record(epoch: usize, validation_error: f64) -> RunRecord {
    RunRecord {
        epoch,
        train_error: 0.0,
        validation_error,
        test_error: validation_error / 2.0,
        mean_tau: 0.0,
        seconds: 0.0,
    }
}

#[test]
fn perfect_model_has_zero_error() {
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    assert_eq!(error_rate(&identity_model(3), &one_hot_dataset(&labels, &labels, 3)).unwrap(), 0.0);
}

#[test]
fn constant_logits_predict_class_zero() {
    let mut model = identity_model(4);
    model.params_mut()[0].value.data_mut().fill(0.0);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let err = error_rate(&model, &one_hot_dataset(&labels, &labels, 4)).unwrap();
    assert_eq!(err, 0.75);
}

#[test]
fn hand_labeled_misclassifications() {
    let labels = [0, 1, 2, 0, 1, 2, 0, 1, 2, 0];
    let mut shown = labels;
    shown[1] = 0;
    shown[4] = 2;
    shown[9] = 1;
    let err = error_rate(&identity_model(3), &one_hot_dataset(&shown, &labels, 3)).unwrap();
    assert!((err - 0.3).abs() < 1e-15);
}

#[test]
fn class_count_mismatch_is_an_input_error() {
    let d = one_hot_dataset(&[0, 1], &[0, 1], 2).with_classes(3);
    let err = error_rate(&identity_model(2), &d.unwrap()).unwrap_err();
    assert!(matches!(err, Error::InvalidInput(_)));
}

#[test]
fn error_rate_spans_many_chunks() {
    let n = 3 * EVAL_CHUNK + 17;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let shown: Vec<usize> = (0..n).map(|i| if i % 5 == 0 { 1 - labels[i] } else { labels[i] }).collect();
    let err = error_rate(&identity_model(2), &one_hot_dataset(&shown, &labels, 2)).unwrap();
    let wrong = (0..n).filter(|i| i % 5 == 0).count();
    assert_eq!(err, wrong as f64 / n as f64);
}

proptest! {
    #[test]
    fn error_rate_ignores_row_order(seed in any::<u64>()) {
        let d = two_moons(60, 0.3, seed).unwrap();
        let model = Model::new(Architecture::preset("toy-moons").unwrap(), seed).unwrap();
        let mut order: Vec<usize> = (0..d.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled = d.subset(&order).unwrap();
        prop_assert_eq!(error_rate(&model, &d).unwrap(), error_rate(&model, &shuffled).unwrap());
    }

    #[test]
    fn select_best_matches_linear_scan(errors in proptest::collection::vec(0u8..20, 1..50)) {
        let history: Vec<RunRecord> = errors.iter().enumerate().map(|(i, &e)| record(i + 1, e as f64 / 20.0)).collect();
        let min = history.iter().map(|r| r.validation_error).fold(f64::INFINITY, f64::min);
        let oracle = history.iter().position(|r| r.validation_error == min).unwrap();
        prop_assert_eq!(select_best(&history).unwrap(), oracle);
        let unique = history.iter().filter(|r| r.validation_error == min).count() == 1;
        if unique {
            let reversed: Vec<RunRecord> = history.iter().rev().copied().collect();
            prop_assert_eq!(select_best(&reversed).unwrap(), history.len() - 1 - oracle);
        }
    }
}

#[test]
fn select_best_examples() {
    let h = [record(1, 0.30), record(2, 0.20), record(3, 0.25)];
    assert_eq!(select_best(&h).unwrap(), 1);
    assert_eq!(select_best(&[record(1, 0.4), record(2, 0.4), record(3, 0.4)]).unwrap(), 0);
    assert!(select_best(&[]).is_err());
}

#[test]
fn population_statistics() {
    assert_eq!(mean_std(&[0.4]).unwrap(), (0.4, 0.0));
    assert_eq!(mean_std(&[0.25, 0.25, 0.25]).unwrap().1, 0.0);
    let (m, s) = mean_std(&[0.1, 0.2, 0.3]).unwrap();
    assert!((m - 0.2).abs() < 1e-15);
    assert!((s - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
    assert!((s - 0.0816497).abs() < 1e-7);
    assert!(mean_std(&[]).is_err());
}

#[test]
fn snapshot_round_trip_preserves_eval_logits() {
    let mut arch = Architecture::preset("toy-moons").unwrap();
    arch.layers.insert(1, LayerSpec::BatchNorm { momentum: 0.1, epsilon: 1e-5 });
    let mut model = Model::new(arch, 3).unwrap();
    let probe = two_moons(16, 0.2, 1).unwrap().features().clone();
    model.forward(&probe, crate::nn::Mode::Train).unwrap();
    let snap = ModelSnapshot::capture(&model, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.json");
    snap.save(&path).unwrap();
    let loaded = ModelSnapshot::load(&path).unwrap();
    assert_eq!(loaded, snap);
    let restored = loaded.restore().unwrap();
    let (a, b) = (model.predict(&probe).unwrap(), restored.predict(&probe).unwrap());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-12);
    }
    assert_eq!(a, b);
}

#[test]
fn csv_layouts() {
    let h = history_csv(&[record(1, 0.5)]).unwrap();
    assert_eq!(
        String::from_utf8(h).unwrap(),
        "epoch,train_err,val_err,test_err,mean_tau,seconds\n1,0,0.5,0.25,0,0\n"
    );
    let rows = [SummaryRow {
        strategy: "FT".into(),
        seed: 2,
        best_epoch: 4,
        test_err: 0.125,
    }];
    assert_eq!(
        String::from_utf8(summary_csv(&rows).unwrap()).unwrap(),
        "strategy,seed,best_epoch,test_err\nFT,2,4,0.125\n"
    );
    let a = String::from_utf8(aggregate_csv("CT", 3, 0.2, 0.1).unwrap()).unwrap();
    assert!(a.starts_with("strategy,seeds,mean_test_err,std_test_err_population\n"));
    let m = crate::curriculum::StepMetrics {
        gamma: 1,
        tau: 3,
        frozen_fraction: 0.5,
        batch_loss: 0.7,
        k: 8,
    };
    assert_eq!(
        String::from_utf8(trace_csv(&[m], false).unwrap()).unwrap(),
        "gamma,tau,frozen_fraction,batch_loss\n1,3,0.5,0.7\n"
    );
    assert!(String::from_utf8(trace_csv(&[m], true).unwrap()).unwrap().ends_with(",8\n"));
}

#[test]
fn atomic_write_replaces_whole_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    write_atomic(&path, b"first\n").unwrap();
    write_atomic(&path, b"second\n").unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "second\n");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    assert!(matches!(
        write_atomic(dir.path().join("missing/out.csv"), b"x"),
        Err(Error::Io { .. })
    ));
}

#[test]
fn seeded_repeat_aggregates_best_epochs() {
    let splits = Splits::new(
        two_moons(32, 0.2, 1).unwrap(),
        two_moons(20, 0.2, 2).unwrap(),
        two_moons(20, 0.2, 3).unwrap(),
    )
    .unwrap();
    let cfg = TrainerConfig {
        strategy: Strategy::Friendly,
        epochs: 4,
        batch_size: 8,
        tau1: 2,
        ..Default::default()
    };
    let arch = Architecture::preset("toy-moons").unwrap();
    let summary = seeded_repeat(&arch, &splits, &cfg, &[1, 2, 3]).unwrap();
    assert_eq!(summary.runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![1, 2, 3]);
    let errors: Vec<f64> = summary.runs.iter().map(|r| r.best.test_error).collect();
    assert_eq!(mean_std(&errors).unwrap(), (summary.mean_test_error, summary.std_test_error));
    for run in &summary.runs {
        assert_eq!(run.best_index, select_best(&run.report.history).unwrap());
    }
    let single = seeded_repeat(&arch, &splits, &cfg, &[2]).unwrap();
    assert_eq!(single.std_test_error, 0.0);
    assert_eq!(single.runs[0].report.history, summary.runs[1].report.history);
    assert!(seeded_repeat(&arch, &splits, &cfg, &[]).is_err());
}
