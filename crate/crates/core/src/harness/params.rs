use serde::Serialize;

use crate::error::Result;
use crate::model::HiddenKind;
use crate::nn::kept_inputs;

use super::config::ExperimentConfig;

/// Parameter counts of the network a config describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// Feedforward weights kept by the sparsity masks, plus biases.
    pub nonzero_ff: usize,
    /// Dendritic segment weights.
    pub nonzero_dendritic: usize,
    /// Stored prototype values (`T × input_dim`).
    pub prototypes: usize,
    pub nonzero_total: usize,
    /// Total after collapsing each neuron's segments into one gate factor per
    /// context.
    pub effective_total: usize,
}

/// Counts from the architecture alone. Each layer contributes
/// `n_l · round((1 − s)·n_{l−1}) + n_l` feedforward parameters and, if
/// dendritic, `n_l · segments · context_dim` segment weights, which collapse
/// to `T · n_l` gate factors in the effective count.
pub fn count_params(cfg: &ExperimentConfig) -> Result<ParamCount> {
    let spec = cfg.network_spec()?;
    let mut ff = 0;
    let mut dendritic = 0;
    let mut factors = 0;
    for l in 0..=spec.hidden.len() {
        let fan_in = spec.fan_in(l);
        let n = if l < spec.hidden.len() {
            spec.hidden[l]
        } else {
            spec.outputs
        };
        ff += n * kept_inputs(fan_in, spec.ff_sparsity) + n;
        if l < spec.hidden.len() && spec.kinds[l] == HiddenKind::Dendritic {
            dendritic += n * spec.segments * spec.context_dim;
            factors += cfg.tasks * n;
        }
    }
    let prototypes = if cfg.uses_prototypes() {
        cfg.tasks * spec.input_dim
    } else {
        0
    };
    Ok(ParamCount {
        nonzero_ff: ff,
        nonzero_dendritic: dendritic,
        prototypes,
        nonzero_total: ff + dendritic + prototypes,
        effective_total: ff + factors + prototypes,
    })
}
