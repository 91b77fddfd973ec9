//! Locating MNIST for tests that train on it.
#![allow(dead_code)]

use std::path::PathBuf;

use adnet::data::MnistPaths;
use adnet::harness::ExperimentConfig;

/// `ADNET_DATA_DIR`, else the workspace `data/` directory, if it holds the
/// four MNIST files.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("ADNET_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    MnistPaths::in_dir(&dir).exist().then_some(dir)
}

/// `cfg` pointed at MNIST, or `None` (with a note on stderr) when it is absent.
pub fn with_mnist(mut cfg: ExperimentConfig, test: &str) -> Option<ExperimentConfig> {
    match mnist_dir() {
        Some(dir) => {
            cfg.data.dir = dir;
            Some(cfg)
        }
        None => {
            eprintln!(
                "{test}: skipped, MNIST not found (run `adnet fetch-mnist` or set ADNET_DATA_DIR)"
            );
            None
        }
    }
}
