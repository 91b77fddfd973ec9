//! Experiment orchestration: configs, training runs, metrics, parameter
//! counts and checkpoints.

mod checkpoint;
mod config;
mod metrics;
mod params;
mod run;

pub use checkpoint::{
    decode_checkpoint, decode_header, encode_checkpoint, load_checkpoint, read_checkpoint_header,
    save_checkpoint, Checkpoint, CheckpointHeader, ClusterInfo, MaskInfo, StoreInfo, TensorInfo,
    MAGIC,
};
pub use config::{
    fullscale_mlp_schedule, fullscale_schedule, ContextConfig, DataConfig, ExperimentConfig, Mode,
    ModelConfig, OutputConfig, Precision, Profile, TrainConfig, DESK_EPOCHS, DESK_LR,
};
pub use metrics::{
    mean, read_metrics_jsonl, write_metrics_jsonl, write_summary_csv, EpochLoss, MetricsRecord,
};
pub use params::{count_params, ParamCount};
pub use run::{
    accuracy, cluster_stream, derive_seed, eval_contexts, evaluate, init_network, load_stream, run,
    run_baseline_mlp, run_continual, run_multitask, run_observed, shuffle_seed, task_logits,
    task_logits_factorized, test_data, train_data, write_outputs, ContextRows, EvalContext,
    Evaluation, Event, Outcome, RunFiles, SeedUse, TaskLogits,
};
