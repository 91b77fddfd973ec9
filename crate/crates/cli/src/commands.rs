use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adnet::analysis::{
    activation_frequency, dendrite_responses, emit_svg_heatmap, mean_off_diagonal, overlap,
    write_matrix_csv, ColorScale,
};
use adnet::context::PrototypeStore;
use adnet::data::TaskStream;
use adnet::dendrites::{DendriticProbe, Gating};
use adnet::harness::{
    accuracy, count_params, derive_seed, eval_contexts, evaluate, init_network, load_checkpoint,
    load_stream, read_checkpoint_header, run_observed, task_logits_factorized, test_data,
    write_outputs, Checkpoint, EvalContext, Event, ExperimentConfig, Precision, SeedUse,
};
use adnet::model::Network;
use adnet::nn::gradcheck::{grad_check, LinearProbe, Probe, SoftmaxProbe, DEFAULT_STEP};
use adnet::nn::Matrix;
use adnet::Scalar;

use crate::{
    AnalyzeArgs, ConfigArgs, EvalArgs, Failure, GradcheckArgs, MakeConfigArgs, ProfileArg,
    TrainArgs, DATA_DIR_ENV,
};

type Outcome = Result<(), Failure>;

fn env_data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Config file or profile defaults, then the data-directory variable, then
/// `--tasks`/`--seed`, then `--set` overrides in order.
pub fn resolve_config(a: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let base = match &a.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let tasks = a.tasks.unwrap_or(10);
            match a.profile {
                ProfileArg::Desk => ExperimentConfig::desk(tasks),
                ProfileArg::Fullscale => ExperimentConfig::fullscale(tasks),
            }
        }
    };
    let mut overrides = Vec::new();
    if let Some(dir) = env_data_dir() {
        overrides.push(format!("data.dir={}", dir.display()));
    }
    if let Some(t) = a.tasks {
        overrides.push(format!("tasks={t}"));
    }
    if let Some(s) = a.seed {
        overrides.push(format!("seed={s}"));
    }
    overrides.extend(a.set.iter().cloned());
    Ok(base.with_overrides(&overrides)?)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(&cfg, a.quiet),
        Precision::F64 => train_as::<f64>(&cfg, a.quiet),
    }
}

fn train_as<T: Scalar>(cfg: &ExperimentConfig, quiet: bool) -> Outcome {
    let stream = load_stream::<T>(cfg)?;
    let out = run_observed(cfg, &stream, &mut |e| {
        if let (false, Event::Epoch { task, epoch, loss }) = (quiet, e) {
            match task {
                Some(t) => eprintln!("task {t} epoch {epoch} loss {loss:.5}"),
                None => eprintln!("epoch {epoch} loss {loss:.5}"),
            }
        }
    })?;
    let files = write_outputs(cfg, &out)?;
    let m = &out.metrics;
    let mut s = String::new();
    for (t, acc) in m.task_accuracy.iter().enumerate() {
        writeln!(s, "task {t:>3}  accuracy {acc:.4}").unwrap();
    }
    writeln!(s, "mean accuracy {:.4}", m.mean_accuracy).unwrap();
    if let Some(c) = m.clusters {
        writeln!(s, "clusters {c}").unwrap();
    }
    writeln!(s, "wall clock {:.1} s", m.wall_clock_s).unwrap();
    writeln!(s, "wrote {}", files.metrics.display()).unwrap();
    writeln!(s, "wrote {}", files.summary.display()).unwrap();
    if let Some(p) = &files.checkpoint {
        writeln!(s, "wrote {}", p.display()).unwrap();
    }
    print!("{s}");
    Ok(())
}

/// Checkpoint config with the data directory resolved for this machine.
fn checkpoint_config(
    config: Option<&ExperimentConfig>,
    data_dir: &Option<PathBuf>,
) -> Result<ExperimentConfig, Failure> {
    let mut cfg = config
        .cloned()
        .ok_or_else(|| Failure::Validation("checkpoint carries no experiment config".into()))?;
    if let Some(dir) = data_dir.clone().or_else(env_data_dir) {
        cfg.data.dir = dir;
    }
    Ok(cfg)
}

pub fn eval(a: &EvalArgs) -> Outcome {
    match read_checkpoint_header(&a.checkpoint)?.dtype.as_str() {
        "f64" => eval_as::<f64>(a),
        _ => eval_as::<f32>(a),
    }
}

fn eval_as<T: Scalar>(a: &EvalArgs) -> Outcome {
    let ck: Checkpoint<T> = load_checkpoint(&a.checkpoint)?;
    let cfg = checkpoint_config(ck.config.as_ref(), &a.data_dir)?;
    let stream = load_stream::<T>(&cfg)?;
    let store = ck.store.as_ref();
    let how = a
        .shift
        .map_or(EvalContext::Standard, EvalContext::ShiftedOnehot);
    let e = evaluate(&cfg, &stream, &ck.network, store, how)?;
    let factorized = match (a.factorized, store) {
        (false, _) => None,
        (true, None) => {
            return Err(Failure::Validation(
                "gate factors need a prototype store in the checkpoint".into(),
            ))
        }
        (true, Some(s)) => Some(factorized_accuracy(&cfg, &stream, &ck.network, s)?),
    };
    let mut s = String::new();
    for (t, acc) in e.task_accuracy.iter().enumerate() {
        write!(s, "task {t:>3}  accuracy {acc:.4}").unwrap();
        if let Some(c) = &e.context_accuracy {
            write!(s, "  context {:.4}", c[t]).unwrap();
        }
        if let Some(f) = &factorized {
            write!(s, "  factorized {:.4}", f[t]).unwrap();
        }
        s.push('\n');
    }
    writeln!(
        s,
        "mean accuracy {:.4}",
        adnet::harness::mean(&e.task_accuracy)
    )
    .unwrap();
    if let Some(f) = &factorized {
        if *f != e.task_accuracy {
            return Err(Failure::Runtime(
                "gate-factor evaluation disagrees with the full network".into(),
            ));
        }
    }
    print!("{s}");
    Ok(())
}

fn factorized_accuracy<T: Scalar>(
    cfg: &ExperimentConfig,
    stream: &TaskStream<T>,
    net: &Network<T>,
    store: &PrototypeStore,
) -> Result<Vec<f64>, Failure> {
    (0..cfg.tasks)
        .map(|task| {
            let logits = task_logits_factorized(cfg, stream, net, store, task)?;
            let labels = test_data(cfg, stream, task)?.labels;
            Ok(accuracy(&logits, &labels))
        })
        .collect()
}

pub fn analyze(a: &AnalyzeArgs) -> Outcome {
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Failure::Validation("--threshold must lie in (0, 1)".into()));
    }
    if a.samples == 0 || a.neurons == 0 {
        return Err(Failure::Validation(
            "--samples and --neurons must be positive".into(),
        ));
    }
    match read_checkpoint_header(&a.checkpoint)?.dtype.as_str() {
        "f64" => analyze_as::<f64>(a),
        _ => analyze_as::<f32>(a),
    }
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn write_both(
    dir: &Path,
    name: &str,
    m: &Matrix<f64>,
    row: &str,
    col: &str,
    title: &str,
) -> Outcome {
    write_matrix_csv(
        &dir.join(format!("{name}.csv")),
        m,
        row,
        &labels(col, m.cols()),
    )?;
    emit_svg_heatmap(
        m,
        &dir.join(format!("{name}.svg")),
        title,
        ColorScale::default(),
    )?;
    Ok(())
}

fn leading_cols(m: &Matrix<f64>, n: usize) -> Matrix<f64> {
    m.select_cols(&(0..n.min(m.cols())).collect::<Vec<_>>())
}

fn analyze_as<T: Scalar>(a: &AnalyzeArgs) -> Outcome {
    let ck: Checkpoint<T> = load_checkpoint(&a.checkpoint)?;
    let cfg = checkpoint_config(ck.config.as_ref(), &a.data_dir)?;
    let dir = a
        .out
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("analysis"));
    let stream = load_stream::<T>(&cfg)?;
    let store = ck.store.as_ref();
    let mut inputs = Vec::with_capacity(cfg.tasks);
    for task in 0..cfg.tasks {
        let test = test_data(&cfg, &stream, task)?;
        let seed = derive_seed(cfg.seed, SeedUse::TestSubsample, task as u64, 1);
        let x = test.subsample(a.samples, seed).images;
        let (ctx, _) = eval_contexts(&cfg, store, &x, task, EvalContext::Standard)?;
        inputs.push((x, ctx));
    }
    let untrained = init_network::<T>(&cfg)?;
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;

    let mut s = String::new();
    for (tag, net) in [("trained", &ck.network), ("untrained", &untrained)] {
        let table = activation_frequency(net, &inputs)?;
        for (l, freq) in table.layers.iter().enumerate() {
            let ov = overlap(freq, a.threshold)?;
            write_both(
                &dir,
                &format!("frequency_{tag}_layer{l}"),
                freq,
                "task",
                "unit",
                &format!("winner frequency, {tag}, layer {l}"),
            )?;
            let shown = leading_cols(freq, a.neurons);
            emit_svg_heatmap(
                &shown,
                &dir.join(format!(
                    "frequency_{tag}_layer{l}_first{}.svg",
                    shown.cols()
                )),
                &format!(
                    "winner frequency, {tag}, layer {l}, first {} units",
                    shown.cols()
                ),
                ColorScale::default(),
            )?;
            write_both(
                &dir,
                &format!("overlap_{tag}_layer{l}"),
                &ov,
                "task",
                "task",
                &format!("winner-set overlap, {tag}, layer {l}"),
            )?;
            writeln!(
                s,
                "layer {l} {tag:<9} mean off-diagonal overlap {:.4}",
                mean_off_diagonal(&ov)
            )
            .unwrap();
        }
    }

    let contexts: Option<Matrix<T>> = match store {
        Some(st) => Some(st.prototypes::<T>()),
        None if cfg.uses_context() => Some(Matrix::from_fn(cfg.tasks, cfg.tasks, |r, c| {
            if r == c {
                T::one()
            } else {
                T::zero()
            }
        })),
        None => None,
    };
    if let Some(ctx) = contexts {
        for (tag, net) in [("after", &ck.network), ("before", &untrained)] {
            for table in dendrite_responses(net, &ctx, a.neurons)? {
                let l = table.layer;
                let m = table.as_matrix();
                write_both(
                    &dir,
                    &format!("responses_{tag}_layer{l}"),
                    &m,
                    "neuron_segment",
                    "context",
                    &format!("segment responses {tag} training, layer {l}"),
                )?;
                let (pos, neg, zero) = table.sign_counts();
                writeln!(
                    s,
                    "layer {l} responses {tag:<6} positive {pos} negative {neg} zero {zero}"
                )
                .unwrap();
            }
        }
    }
    writeln!(s, "wrote {}", dir.display()).unwrap();
    print!("{s}");
    Ok(())
}

/// `1234567` as `1,234,567`.
pub fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn params(a: &ConfigArgs) -> Outcome {
    let cfg = resolve_config(a)?;
    let p = count_params(&cfg)?;
    let rows = [
        ("feedforward", p.nonzero_ff),
        ("dendritic", p.nonzero_dendritic),
        ("prototypes", p.prototypes),
        ("total", p.nonzero_total),
        ("effective", p.effective_total),
    ];
    let mut s = format!("parameters for {} tasks\n", cfg.tasks);
    for (name, n) in rows {
        writeln!(s, "{name:<12}{:>14}", grouped(n)).unwrap();
    }
    writeln!(
        s,
        "total / effective: {} / {}",
        grouped(p.nonzero_total),
        grouped(p.effective_total)
    )
    .unwrap();
    print!("{s}");
    Ok(())
}

fn worst<P: Probe<f64>>(
    trials: u64,
    seed: u64,
    probe: impl Fn(u64) -> Result<P, Failure>,
) -> Result<f64, Failure> {
    let mut w = 0.0f64;
    for s in seed..seed + trials {
        w = w.max(grad_check(&probe(s)?, DEFAULT_STEP)?.max_rel_error);
    }
    Ok(w)
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    if a.trials == 0 {
        return Err(Failure::Validation("--trials must be positive".into()));
    }
    let (n, s) = (a.trials, a.seed);
    let suites = [
        (
            "linear",
            worst(n, s, |i| Ok(LinearProbe::<f64>::random(i, 3, 6, 5, 0.3)))?,
        ),
        (
            "softmax cross-entropy",
            worst(n, s, |i| Ok(SoftmaxProbe::<f64>::random(i, 4)))?,
        ),
        (
            "dendritic abs-max",
            worst(n, s, |i| {
                Ok(DendriticProbe::<f64>::random_away_from_ties(
                    i,
                    1e-3,
                    Gating::AbsMax,
                )?)
            })?,
        ),
        (
            "dendritic max",
            worst(n, s, |i| {
                Ok(DendriticProbe::<f64>::random_away_from_ties(
                    i,
                    1e-3,
                    Gating::Max,
                )?)
            })?,
        ),
    ];
    let mut failed = Vec::new();
    for (name, err) in suites {
        let ok = err < a.tolerance;
        println!(
            "{name:<24}{n:>5} instances  max relative error {err:.2e}  {}",
            if ok { "ok" } else { "FAILED" }
        );
        if !ok {
            failed.push(name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

pub fn make_config(a: &MakeConfigArgs) -> Outcome {
    let cfg = resolve_config(&a.config)?;
    match &a.out {
        Some(path) => Ok(cfg.save(path)?),
        None => {
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}
