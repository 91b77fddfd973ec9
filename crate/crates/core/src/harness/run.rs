use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::context::{build_prototype_given, onehot_context, ContextMode, PrototypeStore};
use crate::data::{Dataset, MnistPaths, TaskStream};
use crate::error::{Error, Result};
use crate::model::{Network, Trainer};
use crate::nn::{argmax_rows, AdamConfig, Matrix};
use crate::scalar::Scalar;

use super::checkpoint::save_checkpoint;
use super::config::{ExperimentConfig, Mode};
use super::metrics::{mean, write_metrics_jsonl, write_summary_csv, EpochLoss, MetricsRecord};

/// Rows per inference call during evaluation.
const EVAL_CHUNK: usize = 1000;

/// Independent seed streams derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum SeedUse {
    Init = 1,
    TrainSubsample = 2,
    TestSubsample = 3,
    Shuffle = 4,
}

/// SplitMix64 over `(seed, use, a, b)`.
pub fn derive_seed(seed: u64, purpose: SeedUse, a: u64, b: u64) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    [purpose as u64, a, b]
        .into_iter()
        .fold(mix(seed), |z, v| mix(mix(z) ^ v))
}

/// Progress notifications; batches carry the exact images fed to the model.
#[derive(Debug)]
pub enum Event<'a, T> {
    TaskStart {
        task: usize,
    },
    Batch {
        task: usize,
        epoch: usize,
        images: &'a Matrix<T>,
    },
    Epoch {
        task: Option<usize>,
        epoch: usize,
        loss: f64,
    },
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub metrics: MetricsRecord,
    pub network: Network<T>,
    pub store: Option<PrototypeStore>,
}

/// How test contexts are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalContext {
    /// Nearest prototype for prototype modes, the true one-hot otherwise.
    Standard,
    /// One-hot of task `(τ + shift) mod T`; a control for context dependence.
    ShiftedOnehot(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub task_accuracy: Vec<f64>,
    pub context_accuracy: Option<Vec<f64>>,
}

pub fn load_stream<T: Scalar>(cfg: &ExperimentConfig) -> Result<TaskStream<T>> {
    let paths = MnistPaths::in_dir(&cfg.data.dir);
    if !paths.exist() {
        return Err(Error::Config(format!(
            "MNIST files not found in {} (run `adnet fetch-mnist`)",
            cfg.data.dir.display()
        )));
    }
    let (train, test) = paths.load::<T>()?;
    let n = cfg.data.normalization;
    TaskStream::new(train.normalized(n), test.normalized(n), cfg.tasks, cfg.seed)
}

/// Training set of `task`, subsampled when the config asks for it.
pub fn train_data<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    task: usize,
) -> Result<Dataset<T>> {
    let base = stream.base_train();
    let perm = stream.permutation(task)?;
    Ok(match cfg.data.train_samples_per_task {
        Some(n) if n < base.len() => base
            .subsample(
                n,
                derive_seed(cfg.seed, SeedUse::TrainSubsample, task as u64, 0),
            )
            .permuted(perm),
        _ => base.permuted(perm),
    })
}

pub fn test_data<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    task: usize,
) -> Result<Dataset<T>> {
    let base = stream.base_test();
    let perm = stream.permutation(task)?;
    Ok(match cfg.data.test_samples_per_task {
        Some(n) if n < base.len() => base
            .subsample(
                n,
                derive_seed(cfg.seed, SeedUse::TestSubsample, task as u64, 0),
            )
            .permuted(perm),
        _ => base.permuted(perm),
    })
}

pub fn shuffle_seed(cfg: &ExperimentConfig, task: usize, epoch: usize) -> u64 {
    derive_seed(cfg.seed, SeedUse::Shuffle, task as u64, epoch as u64)
}

/// Freshly initialised network for `cfg`.
pub fn init_network<T: Scalar>(cfg: &ExperimentConfig) -> Result<Network<T>> {
    let spec = cfg.network_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SeedUse::Init, 0, 0));
    Network::init(&spec, &mut rng)
}

fn repeat_row<T: Scalar>(row: &[T], n: usize) -> Matrix<T> {
    Matrix::from_fn(n, row.len(), |_, c| row[c])
}

fn with_location(e: Error, task: Option<usize>, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(msg) => {
            let task = task.map_or("interleaved".to_string(), |t| format!("task {t}"));
            Error::NonFinite(format!("{task}, epoch {epoch}, batch {batch}: {msg}"))
        }
        e => e,
    }
}

/// Files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

/// Writes `metrics.jsonl`, `summary.csv` and, if configured, `model.adnet`
/// into the output directory. The checkpointed store keeps prototype means
/// only; scatter matrices are needed to resume clustering, not to evaluate.
pub fn write_outputs<T: Scalar>(cfg: &ExperimentConfig, out: &Outcome<T>) -> Result<RunFiles> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let files = RunFiles {
        metrics: dir.join("metrics.jsonl"),
        summary: dir.join("summary.csv"),
        checkpoint: cfg.output.checkpoint.then(|| dir.join("model.adnet")),
    };
    write_metrics_jsonl(&files.metrics, cfg, &out.metrics)?;
    write_summary_csv(&files.summary, &out.metrics)?;
    if let Some(path) = &files.checkpoint {
        let store = out
            .store
            .as_ref()
            .map(PrototypeStore::without_covariance)
            .transpose()?;
        save_checkpoint(path, &out.network, store.as_ref(), Some(cfg))?;
    }
    Ok(files)
}

/// Runs the experiment the config describes.
pub fn run<T: Scalar>(cfg: &ExperimentConfig, stream: &TaskStream<T>) -> Result<Outcome<T>> {
    run_observed(cfg, stream, &mut |_| {})
}

pub fn run_observed<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    observer: &mut dyn FnMut(Event<'_, T>),
) -> Result<Outcome<T>> {
    cfg.validate()?;
    if stream.tasks() != cfg.tasks || stream.seed() != cfg.seed {
        return Err(Error::Config(format!(
            "stream has {} tasks with seed {}, config wants {} with seed {}",
            stream.tasks(),
            stream.seed(),
            cfg.tasks,
            cfg.seed
        )));
    }
    match cfg.mode {
        Mode::Multitask => run_interleaved(cfg, stream, observer),
        Mode::Continual | Mode::BaselineMlp => run_sequential(cfg, stream, observer),
    }
}

/// Sequential tasks with task-specific or inferred contexts.
pub fn run_continual<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
) -> Result<Outcome<T>> {
    expect_mode(cfg, Mode::Continual)?;
    run(cfg, stream)
}

/// Interleaved training of all tasks with one-hot contexts.
pub fn run_multitask<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
) -> Result<Outcome<T>> {
    expect_mode(cfg, Mode::Multitask)?;
    run(cfg, stream)
}

/// Sequential tasks on a dense rectifier MLP without context.
pub fn run_baseline_mlp<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
) -> Result<Outcome<T>> {
    expect_mode(cfg, Mode::BaselineMlp)?;
    run(cfg, stream)
}

fn expect_mode(cfg: &ExperimentConfig, mode: Mode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::Config(format!(
            "config mode is {:?}, expected {mode:?}",
            cfg.mode
        )));
    }
    Ok(())
}

fn run_sequential<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    observer: &mut dyn FnMut(Event<'_, T>),
) -> Result<Outcome<T>> {
    let start = Instant::now();
    let epochs = cfg.epochs()?;
    let mut trainer = Trainer::new(init_network::<T>(cfg)?, AdamConfig::with_lr(cfg.lr()?));
    let uses_context = cfg.uses_context();
    let context_mode = cfg.context.mode;
    let mut store = cfg
        .uses_prototypes()
        .then(|| PrototypeStore::with_threshold(stream.dim(), cfg.context.p_threshold));
    let inferred = uses_context && context_mode == ContextMode::PrototypeInferred;
    let mut assignments: Vec<Vec<usize>> = Vec::new();
    let mut losses = Vec::new();

    for task in 0..cfg.tasks {
        observer(Event::TaskStart { task });
        let data = train_data(cfg, stream, task)?;
        // fixed context row for the task, if any
        let task_context: Option<Vec<T>> = match (uses_context, context_mode) {
            (false, _) | (true, ContextMode::PrototypeInferred) => None,
            (true, ContextMode::Onehot) => Some(onehot_context(task, cfg.tasks)?),
            (true, ContextMode::PrototypeGiven) => {
                let store = store.as_mut().expect("prototype modes keep a store");
                let j = store.push(build_prototype_given(&data.images, false)?)?;
                Some(store.clusters()[j].vector())
            }
        };
        // cluster of every training sample, fixed during the first epoch
        let mut sample_cluster = vec![usize::MAX; data.len()];
        let mut task_batches = Vec::new();
        for epoch in 0..epochs {
            let batches = data.batches(cfg.train.batch_size, shuffle_seed(cfg, task, epoch));
            let indices = batches.indices();
            let (mut sum, mut count) = (0.0, 0usize);
            for (b, (batch, idx)) in batches.zip(&indices).enumerate() {
                let ctx = if inferred {
                    let store = store.as_mut().expect("prototype modes keep a store");
                    if epoch == 0 {
                        let cluster = if batch.len() >= 2 {
                            store.cluster_batch(&batch.images)?.cluster
                        } else {
                            store.nearest(batch.images.row(0))?
                        };
                        task_batches.push(cluster);
                        for &i in idx {
                            sample_cluster[i] = cluster;
                        }
                    }
                    let rows: Vec<usize> = idx.iter().map(|&i| sample_cluster[i]).collect();
                    Some(store.prototypes::<T>().select_rows(&rows))
                } else {
                    task_context
                        .as_ref()
                        .map(|row| repeat_row(row, batch.len()))
                };
                observer(Event::Batch {
                    task,
                    epoch,
                    images: &batch.images,
                });
                let loss = trainer
                    .step(&batch.images, &batch.labels, ctx.as_ref())
                    .map_err(|e| with_location(e, Some(task), epoch, b))?;
                sum += loss.as_f64() * batch.len() as f64;
                count += batch.len();
            }
            let loss = sum / count as f64;
            observer(Event::Epoch {
                task: Some(task),
                epoch,
                loss,
            });
            losses.push(EpochLoss {
                task: Some(task),
                epoch,
                loss,
            });
        }
        if inferred {
            assignments.push(task_batches);
        }
    }

    let network = trainer.net;
    let eval = evaluate(cfg, stream, &network, store.as_ref(), EvalContext::Standard)?;
    let metrics = MetricsRecord {
        mode: cfg.mode,
        tasks: cfg.tasks,
        seed: cfg.seed,
        mean_accuracy: mean(&eval.task_accuracy),
        task_accuracy: eval.task_accuracy,
        epoch_loss: losses,
        context_accuracy: eval.context_accuracy,
        clusters: inferred.then(|| store.as_ref().map_or(0, PrototypeStore::len)),
        assignments: inferred.then_some(assignments),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        metrics,
        network,
        store,
    })
}

/// Online clustering alone, over the same first-epoch batches a
/// prototype-inferred run sees. Returns the store and each task's batch
/// clusters.
pub fn cluster_stream<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
) -> Result<(PrototypeStore, Vec<Vec<usize>>)> {
    let mut store = PrototypeStore::with_threshold(stream.dim(), cfg.context.p_threshold);
    let mut assignments = Vec::with_capacity(cfg.tasks);
    for task in 0..cfg.tasks {
        let data = train_data(cfg, stream, task)?;
        let mut clusters = Vec::new();
        for batch in data.batches(cfg.train.batch_size, shuffle_seed(cfg, task, 0)) {
            clusters.push(if batch.len() >= 2 {
                store.cluster_batch(&batch.images)?.cluster
            } else {
                store.nearest(batch.images.row(0))?
            });
        }
        assignments.push(clusters);
    }
    Ok((store, assignments))
}

fn run_interleaved<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    observer: &mut dyn FnMut(Event<'_, T>),
) -> Result<Outcome<T>> {
    let start = Instant::now();
    let epochs = cfg.epochs()?;
    let mut trainer = Trainer::new(init_network::<T>(cfg)?, AdamConfig::with_lr(cfg.lr()?));
    let data: Vec<Dataset<T>> = (0..cfg.tasks)
        .map(|t| train_data(cfg, stream, t))
        .collect::<Result<_>>()?;
    let contexts: Vec<Vec<T>> = (0..cfg.tasks)
        .map(|t| onehot_context(t, cfg.tasks))
        .collect::<Result<_>>()?;
    let mut losses = Vec::new();
    for epoch in 0..epochs {
        let mut iters: Vec<_> = data
            .iter()
            .enumerate()
            .map(|(t, d)| d.batches(cfg.train.batch_size, shuffle_seed(cfg, t, epoch)))
            .collect();
        let (mut sum, mut count, mut b) = (0.0, 0usize, 0usize);
        loop {
            let mut any = false;
            for (task, it) in iters.iter_mut().enumerate() {
                let Some(batch) = it.next() else { continue };
                any = true;
                let ctx = repeat_row(&contexts[task], batch.len());
                observer(Event::Batch {
                    task,
                    epoch,
                    images: &batch.images,
                });
                let loss = trainer
                    .step(&batch.images, &batch.labels, Some(&ctx))
                    .map_err(|e| with_location(e, None, epoch, b))?;
                sum += loss.as_f64() * batch.len() as f64;
                count += batch.len();
                b += 1;
            }
            if !any {
                break;
            }
        }
        let loss = sum / count as f64;
        observer(Event::Epoch {
            task: None,
            epoch,
            loss,
        });
        losses.push(EpochLoss {
            task: None,
            epoch,
            loss,
        });
    }
    let network = trainer.net;
    let eval = evaluate(cfg, stream, &network, None, EvalContext::Standard)?;
    let metrics = MetricsRecord {
        mode: cfg.mode,
        tasks: cfg.tasks,
        seed: cfg.seed,
        mean_accuracy: mean(&eval.task_accuracy),
        task_accuracy: eval.task_accuracy,
        epoch_loss: losses,
        context_accuracy: None,
        clusters: None,
        assignments: None,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        metrics,
        network,
        store: None,
    })
}

/// Context rows (absent without context) and, for prototype modes, the
/// prototype index of every row.
pub type ContextRows<T> = (Option<Matrix<T>>, Option<Vec<usize>>);

/// Context rows for test images of `task`.
pub fn eval_contexts<T: Scalar>(
    cfg: &ExperimentConfig,
    store: Option<&PrototypeStore>,
    images: &Matrix<T>,
    task: usize,
    how: EvalContext,
) -> Result<ContextRows<T>> {
    if !cfg.uses_context() {
        return Ok((None, None));
    }
    match (cfg.context.mode, how) {
        (ContextMode::Onehot, EvalContext::Standard) => Ok((
            Some(repeat_row(&onehot_context(task, cfg.tasks)?, images.rows())),
            None,
        )),
        (_, EvalContext::ShiftedOnehot(shift)) => {
            if cfg.context.mode != ContextMode::Onehot {
                return Err(Error::Config("shifted contexts need one-hot mode".into()));
            }
            let wrong = (task + shift) % cfg.tasks;
            Ok((
                Some(repeat_row(
                    &onehot_context(wrong, cfg.tasks)?,
                    images.rows(),
                )),
                None,
            ))
        }
        (_, EvalContext::Standard) => {
            let store = store.ok_or(Error::Empty("prototype store"))?;
            let which = store.nearest_rows(images)?;
            Ok((
                Some(store.prototypes::<T>().select_rows(&which)),
                Some(which),
            ))
        }
    }
}

/// Test set, logits, and matched prototype per row.
pub type TaskLogits<T> = (Dataset<T>, Matrix<T>, Option<Vec<usize>>);

/// Logits for every test image of `task`.
pub fn task_logits<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    net: &Network<T>,
    store: Option<&PrototypeStore>,
    task: usize,
    how: EvalContext,
) -> Result<TaskLogits<T>> {
    let test = test_data(cfg, stream, task)?;
    let mut logits = Matrix::zeros(test.len(), net.spec().outputs);
    let mut all_which = Vec::new();
    for start in (0..test.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(test.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = test.images.select_rows(&idx);
        let (ctx, which) = eval_contexts(cfg, store, &x, task, how)?;
        let out = net.infer(&x, ctx.as_ref())?;
        for (r, row) in out.iter_rows().enumerate() {
            logits.row_mut(start + r).copy_from_slice(row);
        }
        if let Some(w) = which {
            all_which.extend(w);
        }
    }
    let which = (!all_which.is_empty()).then_some(all_which);
    Ok((test, logits, which))
}

/// Logits for `task` with every dendritic computation replaced by the
/// precomputed gate factors of the prototype each test image is matched to.
pub fn task_logits_factorized<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    net: &Network<T>,
    store: &PrototypeStore,
    task: usize,
) -> Result<Matrix<T>> {
    let factors = net.gate_factors(&store.prototypes::<T>())?;
    let test = test_data(cfg, stream, task)?;
    let mut logits = Matrix::zeros(test.len(), net.spec().outputs);
    for start in (0..test.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(test.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = test.images.select_rows(&idx);
        let which = store.nearest_rows(&x)?;
        let out = net.infer_with_factors(&x, &factors, &which)?;
        for (r, row) in out.iter_rows().enumerate() {
            logits.row_mut(start + r).copy_from_slice(row);
        }
    }
    Ok(logits)
}

pub fn accuracy<T: Scalar>(logits: &Matrix<T>, labels: &[u8]) -> f64 {
    let pred = argmax_rows(logits);
    let hits = pred
        .iter()
        .zip(labels)
        .filter(|(&p, &l)| p == l as usize)
        .count();
    hits as f64 / labels.len() as f64
}

/// Test accuracy on every task.
pub fn evaluate<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    net: &Network<T>,
    store: Option<&PrototypeStore>,
    how: EvalContext,
) -> Result<Evaluation> {
    let mut task_accuracy = Vec::with_capacity(cfg.tasks);
    let mut context_accuracy = Vec::new();
    for task in 0..cfg.tasks {
        let (test, logits, which) = task_logits(cfg, stream, net, store, task, how)?;
        task_accuracy.push(accuracy(&logits, &test.labels));
        if let Some(w) = which {
            let hits = w.iter().filter(|&&j| j == task).count();
            context_accuracy.push(hits as f64 / w.len() as f64);
        }
    }
    let given = cfg.uses_context() && cfg.context.mode == ContextMode::PrototypeGiven;
    Ok(Evaluation {
        task_accuracy,
        context_accuracy: given.then_some(context_accuracy),
    })
}
