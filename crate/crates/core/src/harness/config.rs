use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::{ContextMode, DEFAULT_P_THRESHOLD};
use crate::data::{Normalization, MNIST_CLASSES, MNIST_PIXELS, PERMUTATION_GENERATOR};
use crate::dendrites::{Gating, KwtaConfig};
use crate::error::{Error, Result};
use crate::model::{kinds_for, DendriteLayers, HiddenKind, NetworkSpec};

use super::params::count_params;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Tasks trained strictly one after another.
    Continual,
    /// Every epoch interleaves batches of all tasks, each tagged with its one-hot context.
    Multitask,
    /// Sequential tasks on a rectifier MLP without context.
    BaselineMlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Desk,
    Fullscale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Segments per neuron; `null` means one per task.
    pub segments: Option<usize>,
    pub density: f64,
    pub ff_sparsity: f64,
    pub gating: Gating,
    pub dendrite_layers: DendriteLayers,
    /// Activation of hidden layers without dendrites.
    pub plain: HiddenKind,
    /// Concatenate the context vector onto the input.
    pub input_context: bool,
    /// Hidden width of the (always dense) baseline MLP; `null` matches the effective
    /// parameter count of the dendritic network.
    pub baseline_width: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextConfig {
    pub mode: ContextMode,
    pub p_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `null` takes the profile schedule for the task count.
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: usize,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dir: PathBuf,
    /// `null` uses all 60,000 training images.
    pub train_samples_per_task: Option<usize>,
    pub test_samples_per_task: Option<usize>,
    pub permutation_generator: String,
    #[serde(default)]
    pub normalization: Normalization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub mode: Mode,
    pub tasks: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub context: ContextConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

/// Learning rate and epochs per task count for the full-size network.
pub fn fullscale_schedule(tasks: usize, context: ContextMode) -> Option<(f64, usize)> {
    let given = context != ContextMode::PrototypeInferred;
    Some(match (tasks, given) {
        (2, true) | (5, true) => (5e-4, 1),
        (10, true) => (5e-4, 3),
        (25, true) => (3e-4, 5),
        (50, true) => (3e-4, 3),
        (100, true) => (1e-4, 3),
        (2, false) | (5, false) => (1e-3, 5),
        (10, false) => (1e-3, 3),
        (25, false) => (3e-4, 1),
        (50, false) | (100, false) => (1e-4, 3),
        _ => return None,
    })
}

/// Baseline MLP schedule for the full-size network.
pub fn fullscale_mlp_schedule(tasks: usize) -> Option<(f64, usize)> {
    match tasks {
        10 => Some((3e-6, 5)),
        100 => Some((1e-6, 3)),
        _ => None,
    }
}

pub const DESK_LR: f64 = 1e-3;
pub const DESK_EPOCHS: usize = 3;

impl ExperimentConfig {
    /// 2×256 hidden units, 10,000 training images per task.
    pub fn desk(tasks: usize) -> Self {
        ExperimentConfig {
            profile: Profile::Desk,
            mode: Mode::Continual,
            tasks,
            seed: 0,
            model: ModelConfig {
                hidden: vec![256, 256],
                segments: None,
                density: 0.05,
                ff_sparsity: 0.5,
                gating: Gating::AbsMax,
                dendrite_layers: DendriteLayers::All,
                plain: HiddenKind::Kwta,
                input_context: false,
                baseline_width: None,
            },
            context: ContextConfig {
                mode: ContextMode::PrototypeGiven,
                p_threshold: DEFAULT_P_THRESHOLD,
            },
            train: TrainConfig {
                lr: Some(DESK_LR),
                epochs: Some(DESK_EPOCHS),
                batch_size: 256,
                precision: Precision::F32,
            },
            data: DataConfig {
                dir: PathBuf::from("data"),
                train_samples_per_task: Some(10_000),
                test_samples_per_task: None,
                permutation_generator: PERMUTATION_GENERATOR.into(),
                normalization: Normalization::Standardize,
            },
            output: OutputConfig {
                dir: PathBuf::from("runs/desk"),
                checkpoint: true,
            },
        }
    }

    /// 2×2048 hidden units on the full training set; schedule by task count.
    pub fn fullscale(tasks: usize) -> Self {
        let mut c = Self::desk(tasks);
        c.profile = Profile::Fullscale;
        c.model.hidden = vec![2048, 2048];
        c.train.lr = None;
        c.train.epochs = None;
        c.data.train_samples_per_task = None;
        c.data.normalization = Normalization::Unit;
        c.output.dir = PathBuf::from("runs/fullscale");
        c
    }

    /// The same protocol on a parameter-matched rectifier MLP without context.
    pub fn baseline(&self) -> Self {
        let mut c = self.clone();
        c.mode = Mode::BaselineMlp;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::file(path, e))
    }

    /// Applies `key=value` overrides addressed by dotted paths such as
    /// `model.hidden=[128,128]`. Values parse as JSON, falling back to a string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
            set_dotted(&mut v, key, value)?;
        }
        let c: Self = serde_json::from_value(v)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::Config("tasks must be at least 1".into()));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::Config(
                "hidden sizes must be non-empty and positive".into(),
            ));
        }
        if self.model.segments == Some(0) {
            return Err(Error::OutOfRange {
                what: "segments per neuron",
                value: "0".into(),
                range: ">= 1".into(),
            });
        }
        for &h in &self.model.hidden {
            KwtaConfig::Density(self.model.density).k(h)?;
        }
        if !(0.0..1.0).contains(&self.model.ff_sparsity) {
            return Err(Error::OutOfRange {
                what: "ff_sparsity",
                value: self.model.ff_sparsity.to_string(),
                range: "[0, 1)".into(),
            });
        }
        if self.model.plain == HiddenKind::Dendritic {
            return Err(Error::Config("model.plain must be kwta or relu".into()));
        }
        if !(self.context.p_threshold.is_finite() && self.context.p_threshold > 0.0) {
            return Err(Error::Config("context.p_threshold must be positive".into()));
        }
        if self.mode == Mode::Multitask && self.context.mode != ContextMode::Onehot {
            return Err(Error::Config("multitask mode uses one-hot contexts".into()));
        }
        if self.train.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(lr) = self.train.lr {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!(
                    "learning rate {lr} must be positive"
                )));
            }
        }
        if self.train.epochs == Some(0) {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.data.permutation_generator != PERMUTATION_GENERATOR {
            return Err(Error::Config(format!(
                "unsupported permutation generator `{}` (have `{PERMUTATION_GENERATOR}`)",
                self.data.permutation_generator
            )));
        }
        if matches!(self.data.train_samples_per_task, Some(0))
            || matches!(self.data.test_samples_per_task, Some(0))
        {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        self.lr()?;
        self.epochs()?;
        Ok(())
    }

    pub fn lr(&self) -> Result<f64> {
        self.schedule().map(|s| s.0)
    }

    pub fn epochs(&self) -> Result<usize> {
        self.schedule().map(|s| s.1)
    }

    fn schedule(&self) -> Result<(f64, usize)> {
        let table = match (self.profile, self.mode) {
            (Profile::Desk, _) => Some((DESK_LR, DESK_EPOCHS)),
            (Profile::Fullscale, Mode::BaselineMlp) => fullscale_mlp_schedule(self.tasks),
            (Profile::Fullscale, _) => fullscale_schedule(self.tasks, self.context.mode),
        };
        match (self.train.lr, self.train.epochs, table) {
            (Some(lr), Some(e), _) => Ok((lr, e)),
            (lr, e, Some((tl, te))) => Ok((lr.unwrap_or(tl), e.unwrap_or(te))),
            _ => Err(Error::Config(format!(
                "no learning-rate schedule for {} tasks; set train.lr and train.epochs",
                self.tasks
            ))),
        }
    }

    pub fn segments(&self) -> usize {
        self.model.segments.unwrap_or(self.tasks)
    }

    /// Whether the network sees a context vector.
    pub fn uses_context(&self) -> bool {
        self.mode != Mode::BaselineMlp
    }

    /// Length of the context vector.
    pub fn context_dim(&self) -> usize {
        match self.context.mode {
            ContextMode::Onehot => self.tasks,
            ContextMode::PrototypeGiven | ContextMode::PrototypeInferred => MNIST_PIXELS,
        }
    }

    /// Whether prototypes are stored and used for inference.
    pub fn uses_prototypes(&self) -> bool {
        self.uses_context() && self.context.mode != ContextMode::Onehot
    }

    fn base_spec(&self, hidden: Vec<usize>) -> NetworkSpec {
        let baseline = self.mode == Mode::BaselineMlp;
        let (dendrites, plain) = if baseline {
            (DendriteLayers::None, HiddenKind::Relu)
        } else {
            (self.model.dendrite_layers, self.model.plain)
        };
        let kinds = kinds_for(hidden.len(), dendrites, plain);
        let has_dendrites = kinds.contains(&HiddenKind::Dendritic);
        NetworkSpec {
            input_dim: MNIST_PIXELS,
            kinds,
            hidden,
            outputs: MNIST_CLASSES,
            segments: if has_dendrites { self.segments() } else { 0 },
            context_dim: if has_dendrites { self.context_dim() } else { 0 },
            input_context_dim: if !baseline && self.model.input_context {
                self.context_dim()
            } else {
                0
            },
            density: self.model.density,
            ff_sparsity: if baseline {
                0.0
            } else {
                self.model.ff_sparsity
            },
            gating: self.model.gating,
        }
    }

    /// Architecture described by this config.
    pub fn network_spec(&self) -> Result<NetworkSpec> {
        self.validate()?;
        let hidden = if self.mode == Mode::BaselineMlp {
            let w = match self.model.baseline_width {
                Some(w) => w,
                None => self.matched_baseline_width()?,
            };
            vec![w; self.model.hidden.len()]
        } else {
            self.model.hidden.clone()
        };
        let spec = self.base_spec(hidden);
        spec.validate()?;
        Ok(spec)
    }

    /// Width whose dense MLP has the parameter count closest to the effective
    /// count of the dendritic network with this config's hidden sizes.
    pub fn matched_baseline_width(&self) -> Result<usize> {
        let mut dendritic = self.clone();
        if dendritic.mode == Mode::BaselineMlp {
            dendritic.mode = Mode::Continual;
        }
        let target = count_params(&dendritic)?.effective_total as f64;
        let mut mlp = self.clone();
        mlp.mode = Mode::BaselineMlp;
        let mut count = |w: usize| -> Result<f64> {
            mlp.model.baseline_width = Some(w);
            Ok(count_params(&mlp)?.nonzero_total as f64)
        };
        // parameter count is increasing in the width
        let (mut lo, mut hi) = (1usize, 1usize);
        while count(hi)? < target {
            lo = hi;
            hi *= 2;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if count(mid)? < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (cl, ch) = (count(lo)?, count(hi)?);
        Ok(if (target - cl).abs() <= (ch - target).abs() {
            lo
        } else {
            hi
        })
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*part).expect("checked above");
    }
    unreachable!("split yields at least one part")
}
