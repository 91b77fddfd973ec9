//! End-to-end runs on MNIST: isolation, determinism, persistence and the
//! behaviour of each training mode.

mod common;

use std::collections::HashSet;

use adnet::context::{build_prototype_given, ContextMode, PrototypeStore};
use adnet::data::TaskStream;
use adnet::harness::{
    cluster_stream, encode_checkpoint, evaluate, init_network, load_checkpoint, load_stream, mean,
    read_metrics_jsonl, run, run_observed, task_logits, task_logits_factorized, train_data,
    write_outputs, EvalContext, Event, ExperimentConfig, Mode, Precision,
};
use adnet::model::{DendriteLayers, HiddenKind};

fn small(tasks: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk(tasks);
    c.model.hidden = vec![48, 32];
    c.model.density = 0.1;
    c.data.train_samples_per_task = Some(600);
    c.data.test_samples_per_task = Some(500);
    c.train.batch_size = 64;
    c.train.epochs = Some(2);
    c
}

fn row_key<T: Copy + Into<f64>>(row: &[T]) -> Vec<u64> {
    row.iter().map(|&v| v.into().to_bits()).collect()
}

fn task_rows(cfg: &ExperimentConfig, stream: &TaskStream<f32>) -> Vec<HashSet<Vec<u64>>> {
    (0..cfg.tasks)
        .map(|t| {
            let d = train_data(cfg, stream, t).unwrap();
            (0..d.len()).map(|r| row_key(d.images.row(r))).collect()
        })
        .collect()
}

/// Every training batch consists of rows of the task it is attributed to,
/// and sequential runs never revisit an earlier task.
#[test]
fn batches_come_only_from_the_current_task() {
    for (mode, context) in [
        (Mode::Continual, ContextMode::PrototypeInferred),
        (Mode::Continual, ContextMode::PrototypeGiven),
        (Mode::BaselineMlp, ContextMode::PrototypeGiven),
        (Mode::Multitask, ContextMode::Onehot),
    ] {
        let mut cfg = small(3);
        cfg.mode = mode;
        cfg.context.mode = context;
        let Some(cfg) = common::with_mnist(cfg, "batches_come_only_from_the_current_task") else {
            return;
        };
        let stream = load_stream::<f32>(&cfg).unwrap();
        let rows = task_rows(&cfg, &stream);
        let mut current = None;
        let mut seen = Vec::new();
        let mut batches = 0;
        run_observed(&cfg, &stream, &mut |e| match e {
            Event::TaskStart { task } => {
                current = Some(task);
                seen.push(task);
            }
            Event::Batch { task, images, .. } => {
                if mode != Mode::Multitask {
                    assert_eq!(Some(task), current);
                }
                for r in 0..images.rows() {
                    let key = row_key(images.row(r));
                    assert!(
                        rows[task].contains(&key),
                        "{mode:?}: row not in task {task}"
                    );
                    for (other, set) in rows.iter().enumerate() {
                        assert!(
                            other == task || !set.contains(&key),
                            "{mode:?}: task {other} row in task {task}"
                        );
                    }
                }
                batches += 1;
            }
            Event::Epoch { .. } => {}
        })
        .unwrap();
        if mode == Mode::Multitask {
            assert!(seen.is_empty());
        } else {
            assert_eq!(seen, vec![0, 1, 2]);
        }
        // 600 samples in batches of 64 → 10 per task per epoch
        assert_eq!(batches, 3 * 2 * 10, "{mode:?}");
    }
}

#[test]
fn identical_config_and_seed_reproduce_files() {
    let mut cfg = small(2);
    cfg.train.precision = Precision::F64;
    cfg.context.mode = ContextMode::PrototypeInferred;
    let Some(mut cfg) = common::with_mnist(cfg, "identical_config_and_seed_reproduce_files") else {
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let stream = load_stream::<f64>(&cfg).unwrap();
    let mut files = Vec::new();
    let mut records = Vec::new();
    let mut models = Vec::new();
    for name in ["a", "b"] {
        cfg.output.dir = dir.path().join(name);
        let out = run::<f64>(&cfg, &stream).unwrap();
        files.push(write_outputs(&cfg, &out).unwrap());
        models.push(encode_checkpoint(&out.network, out.store.as_ref(), None).unwrap());
        records.push(out.metrics);
    }
    assert_eq!(models[0], models[1]);
    assert!(records[0].same_results(&records[1]));
    let read = |p: &std::path::Path| std::fs::read(p).unwrap();
    let (a, b) = (&files[0], &files[1]);
    assert_eq!(read(&a.summary), read(&b.summary));
    // files differ only in the echoed output directory
    let text = |p: &std::path::Path| String::from_utf8_lossy(&read(p)).replace("/a\"", "/b\"");
    assert_eq!(text(&a.metrics), text(&b.metrics));
    assert_eq!(
        text(a.checkpoint.as_ref().unwrap()),
        text(b.checkpoint.as_ref().unwrap())
    );
    assert!(read_metrics_jsonl(&a.metrics)
        .unwrap()
        .same_results(&records[0]));

    let mut other = cfg.clone();
    other.seed += 1;
    let other_stream = load_stream::<f64>(&other).unwrap();
    assert!(!run::<f64>(&other, &other_stream)
        .unwrap()
        .metrics
        .same_results(&records[0]));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let mut cfg = small(3);
    cfg.context.mode = ContextMode::PrototypeInferred;
    let Some(mut cfg) = common::with_mnist(cfg, "checkpoint_round_trip_preserves_evaluation")
    else {
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    cfg.output.dir = dir.path().to_path_buf();
    let stream = load_stream::<f32>(&cfg).unwrap();
    let out = run::<f32>(&cfg, &stream).unwrap();
    let files = write_outputs(&cfg, &out).unwrap();
    let ck = load_checkpoint::<f32>(files.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(ck.config.as_ref(), Some(&cfg));
    assert_eq!(ck.network, out.network);
    let store = ck.store.as_ref().unwrap();
    assert_eq!(store.len(), out.store.as_ref().unwrap().len());
    for task in 0..cfg.tasks {
        let before = task_logits(
            &cfg,
            &stream,
            &out.network,
            out.store.as_ref(),
            task,
            EvalContext::Standard,
        )
        .unwrap();
        let after = task_logits(
            &cfg,
            &stream,
            &ck.network,
            Some(store),
            task,
            EvalContext::Standard,
        )
        .unwrap();
        assert_eq!(before.1, after.1);
        assert_eq!(before.2, after.2);
    }
    let eval = evaluate(
        &cfg,
        &stream,
        &ck.network,
        Some(store),
        EvalContext::Standard,
    )
    .unwrap();
    assert_eq!(eval.task_accuracy, out.metrics.task_accuracy);
}

#[test]
fn clustering_pass_matches_training_assignments() {
    let mut cfg = small(3);
    cfg.context.mode = ContextMode::PrototypeInferred;
    let Some(cfg) = common::with_mnist(cfg, "clustering_pass_matches_training_assignments") else {
        return;
    };
    let stream = load_stream::<f32>(&cfg).unwrap();
    let out = run::<f32>(&cfg, &stream).unwrap();
    let (store, assignments) = cluster_stream(&cfg, &stream).unwrap();
    assert_eq!(Some(&assignments), out.metrics.assignments.as_ref());
    assert_eq!(Some(store.len()), out.metrics.clusters);
    assert_eq!(Some(&store), out.store.as_ref());
}

#[test]
fn gate_factors_reproduce_trained_outputs() {
    let cfg = small(3);
    let Some(cfg) = common::with_mnist(cfg, "gate_factors_reproduce_trained_outputs") else {
        return;
    };
    let stream = load_stream::<f32>(&cfg).unwrap();
    let out = run::<f32>(&cfg, &stream).unwrap();
    let store = out.store.as_ref().unwrap();
    for task in 0..cfg.tasks {
        let (_, full, _) = task_logits(
            &cfg,
            &stream,
            &out.network,
            Some(store),
            task,
            EvalContext::Standard,
        )
        .unwrap();
        let fact = task_logits_factorized(&cfg, &stream, &out.network, store, task).unwrap();
        assert_eq!(full, fact);
    }
}

#[test]
fn untrained_network_scores_chance() {
    let Some(cfg) = common::with_mnist(
        ExperimentConfig::desk(10),
        "untrained_network_scores_chance",
    ) else {
        return;
    };
    let stream = load_stream::<f32>(&cfg).unwrap();
    let mut store = PrototypeStore::new(784);
    for t in 0..cfg.tasks {
        let train = train_data(&cfg, &stream, t).unwrap();
        store
            .push(build_prototype_given(&train.images, false).unwrap())
            .unwrap();
    }
    let net = init_network::<f32>(&cfg).unwrap();
    let eval = evaluate(&cfg, &stream, &net, Some(&store), EvalContext::Standard).unwrap();
    assert!(eval.context_accuracy.unwrap().iter().all(|&a| a > 0.99));
    let m = mean(&eval.task_accuracy);
    eprintln!("untrained mean accuracy {m:.4}");
    assert!((m - 0.10).abs() <= 0.03, "{m}");
}

#[test]
fn baseline_learns_one_task_and_forgets_many() {
    let Some(one) = common::with_mnist(
        ExperimentConfig::desk(1).baseline(),
        "baseline_learns_one_task",
    ) else {
        return;
    };
    let stream = load_stream::<f32>(&one).unwrap();
    let acc = run::<f32>(&one, &stream).unwrap().metrics.mean_accuracy;
    eprintln!("baseline T=1 accuracy {acc:.4}");
    assert!(acc > 0.90, "{acc}");

    let mut ten = ExperimentConfig::desk(10).baseline();
    ten.data.dir = one.data.dir.clone();
    let stream = load_stream::<f32>(&ten).unwrap();
    let m = run::<f32>(&ten, &stream).unwrap().metrics;
    eprintln!("baseline T=10 accuracies {:?}", m.task_accuracy);
    assert!(m.mean_accuracy < 0.60, "{}", m.mean_accuracy);
    // the first task is largely overwritten while the last is learned
    assert!(m.task_accuracy[0] < 0.5 && m.task_accuracy[9] > 0.9);
}

fn multitask_config() -> Option<ExperimentConfig> {
    let mut cfg = ExperimentConfig::desk(5);
    cfg.mode = Mode::Multitask;
    cfg.context.mode = ContextMode::Onehot;
    common::with_mnist(cfg, "multitask")
}

#[test]
fn multitask_dendrites_use_their_context() {
    let Some(cfg) = multitask_config() else {
        return;
    };
    let stream = load_stream::<f32>(&cfg).unwrap();
    let out = run::<f32>(&cfg, &stream).unwrap();
    let right = out.metrics.mean_accuracy;
    for shift in 1..cfg.tasks {
        let shifted = evaluate(
            &cfg,
            &stream,
            &out.network,
            None,
            EvalContext::ShiftedOnehot(shift),
        )
        .unwrap();
        let wrong = mean(&shifted.task_accuracy);
        eprintln!("multitask T=5: true context {right:.4}, shifted by {shift} {wrong:.4}");
        assert!(wrong < right - 0.05, "shift {shift}: {wrong} vs {right}");
    }
}

/// Measured on seed 0: 0.876 for the dendritic net, 0.912 for the MLP.
#[test]
#[ignore = "does not hold at desk scale: the one-hot MLP learns the interleaved tasks faster"]
fn multitask_dendrites_beat_onehot_mlp() {
    let Some(cfg) = multitask_config() else {
        return;
    };
    let stream = load_stream::<f32>(&cfg).unwrap();
    let dendritic = run::<f32>(&cfg, &stream).unwrap().metrics.mean_accuracy;
    let mut mlp = cfg.clone();
    mlp.model.dendrite_layers = DendriteLayers::None;
    mlp.model.plain = HiddenKind::Relu;
    mlp.model.input_context = true;
    let concat = run::<f32>(&mlp, &stream).unwrap().metrics.mean_accuracy;
    eprintln!("multitask T=5: dendritic {dendritic:.4}, one-hot MLP {concat:.4}");
    assert!(dendritic > concat, "{dendritic} vs {concat}");
}
