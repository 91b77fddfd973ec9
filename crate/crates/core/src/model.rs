//! Feedforward networks built from dendritic, kWTA or ReLU hidden layers and
//! a shared linear output head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dendrites::{
    kwta_with_winners, ActiveDendritesLayer, DendriticSegments, Gating, KwtaConfig,
};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Linear, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenKind {
    /// Active Dendrites neurons followed by kWTA.
    Dendritic,
    /// Point neurons followed by kWTA.
    Kwta,
    /// Point neurons followed by a rectifier.
    Relu,
}

/// Architecture of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub kinds: Vec<HiddenKind>,
    pub outputs: usize,
    /// Segments per dendritic neuron.
    pub segments: usize,
    /// Length of the context vector seen by the dendrites.
    pub context_dim: usize,
    /// Length of a context vector concatenated onto the input (0 for none).
    pub input_context_dim: usize,
    /// Fraction of kWTA winners per layer.
    pub density: f64,
    /// Fraction of feedforward weights fixed at zero, output layer included.
    pub ff_sparsity: f64,
    pub gating: Gating,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.len() != self.kinds.len() {
            return Err(Error::Config(format!(
                "{} hidden sizes but {} layer kinds",
                self.hidden.len(),
                self.kinds.len()
            )));
        }
        if self.hidden.contains(&0) || self.outputs == 0 || self.input_dim == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.has_dendrites() {
            if self.segments == 0 {
                return Err(Error::OutOfRange {
                    what: "segments per neuron",
                    value: "0".into(),
                    range: ">= 1".into(),
                });
            }
            if self.context_dim == 0 {
                return Err(Error::Config(
                    "dendritic layers need a context dimension".into(),
                ));
            }
        }
        for (&h, &kind) in self.hidden.iter().zip(&self.kinds) {
            if kind != HiddenKind::Relu {
                KwtaConfig::Density(self.density).k(h)?;
            }
        }
        if !(0.0..1.0).contains(&self.ff_sparsity) {
            return Err(Error::OutOfRange {
                what: "feedforward weight sparsity",
                value: self.ff_sparsity.to_string(),
                range: "[0, 1)".into(),
            });
        }
        Ok(())
    }

    pub fn has_dendrites(&self) -> bool {
        self.kinds.contains(&HiddenKind::Dendritic)
    }

    /// Whether the network consumes a context vector at all.
    pub fn uses_context(&self) -> bool {
        self.has_dendrites() || self.input_context_dim > 0
    }

    pub fn k(&self, layer: usize) -> Result<usize> {
        KwtaConfig::Density(self.density).k(self.hidden[layer])
    }

    /// Expected fraction of nonzero inputs to layer `l`: the kWTA density
    /// after a kWTA or dendritic layer, 1 otherwise.
    pub fn input_density(&self, l: usize) -> f64 {
        match l.checked_sub(1).map(|p| self.kinds[p]) {
            Some(HiddenKind::Kwta | HiddenKind::Dendritic) => self
                .k(l - 1)
                .map_or(1.0, |k| k as f64 / self.hidden[l - 1] as f64),
            _ => 1.0,
        }
    }

    /// Fan-in of hidden layer `l`, or of the output layer for `l = hidden.len()`.
    pub fn fan_in(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim + self.input_context_dim
        } else {
            self.hidden[l - 1]
        }
    }
}

/// One hidden layer.
#[derive(Debug, Clone)]
pub enum Hidden<T> {
    Dendritic(ActiveDendritesLayer<T>),
    Kwta { ff: Linear<T>, k: usize },
    Relu(Linear<T>),
}

impl<T: Scalar> PartialEq for Hidden<T> {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Hidden::Dendritic(a), Hidden::Dendritic(b)) => a == b,
            (Hidden::Kwta { ff: a, k: ka }, Hidden::Kwta { ff: b, k: kb }) => a == b && ka == kb,
            (Hidden::Relu(a), Hidden::Relu(b)) => a == b,
            _ => false,
        }
    }
}

impl<T: Scalar> Hidden<T> {
    pub fn ff(&self) -> &Linear<T> {
        match self {
            Hidden::Dendritic(l) => l.ff(),
            Hidden::Kwta { ff, .. } | Hidden::Relu(ff) => ff,
        }
    }

    pub fn kind(&self) -> HiddenKind {
        match self {
            Hidden::Dendritic(_) => HiddenKind::Dendritic,
            Hidden::Kwta { .. } => HiddenKind::Kwta,
            Hidden::Relu(_) => HiddenKind::Relu,
        }
    }

    /// Output and active-unit flags (kWTA winners or positive rectifier inputs).
    fn infer(&self, x: &Matrix<T>, ctx: Option<&Matrix<T>>) -> Result<(Matrix<T>, Vec<bool>)> {
        match self {
            Hidden::Dendritic(l) => l.infer(x, ctx.ok_or_else(missing_context)?),
            Hidden::Kwta { ff, k } => kwta_with_winners(&ff.forward(x)?, *k),
            Hidden::Relu(ff) => {
                let mut y = ff.forward(x)?;
                let active: Vec<bool> = y.as_slice().iter().map(|&v| v > T::zero()).collect();
                for (v, &a) in y.as_mut_slice().iter_mut().zip(&active) {
                    if !a {
                        *v = T::zero();
                    }
                }
                Ok((y, active))
            }
        }
    }
}

fn missing_context() -> Error {
    Error::Config("network needs a context matrix".into())
}

/// Named view of one parameter tensor.
#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a, T> {
    pub name: &'static str,
    pub layer: usize,
    pub shape: [usize; 3],
    pub data: &'a [T],
}

/// Gradients in [`Network::tensors`] order.
pub type Gradients<T> = Vec<Vec<T>>;

#[derive(Debug, Clone)]
struct Trace<T> {
    /// Input of every plain hidden layer and of the output layer.
    inputs: Vec<Matrix<T>>,
    active: Vec<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: NetworkSpec,
    hidden: Vec<Hidden<T>>,
    output: Linear<T>,
    trace: Option<Trace<T>>,
}

impl<T: Scalar> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.hidden == other.hidden && self.output == other.output
    }
}

impl<T: Scalar> Network<T> {
    pub fn init<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut hidden = Vec::with_capacity(spec.hidden.len());
        for (l, (&width, &kind)) in spec.hidden.iter().zip(&spec.kinds).enumerate() {
            let (fan_in, density) = (spec.fan_in(l), spec.input_density(l));
            let ff = Linear::init_sparse(fan_in, width, spec.ff_sparsity, density, rng)?;
            hidden.push(match kind {
                HiddenKind::Dendritic => {
                    let dend =
                        DendriticSegments::init(width, spec.segments, spec.context_dim, rng)?;
                    Hidden::Dendritic(ActiveDendritesLayer::new(
                        ff,
                        dend,
                        spec.gating,
                        spec.k(l)?,
                    )?)
                }
                HiddenKind::Kwta => Hidden::Kwta { ff, k: spec.k(l)? },
                HiddenKind::Relu => Hidden::Relu(ff),
            });
        }
        let last = spec.hidden.len();
        let output = Linear::init_sparse(
            spec.fan_in(last),
            spec.outputs,
            spec.ff_sparsity,
            spec.input_density(last),
            rng,
        )?;
        Ok(Network {
            spec: spec.clone(),
            hidden,
            output,
            trace: None,
        })
    }

    /// Assembles a network from explicit layers, checking them against `spec`.
    pub fn from_layers(
        spec: NetworkSpec,
        hidden: Vec<Hidden<T>>,
        output: Linear<T>,
    ) -> Result<Self> {
        spec.validate()?;
        if hidden.len() != spec.hidden.len() {
            return Err(Error::shape(
                "Network layers",
                spec.hidden.len(),
                hidden.len(),
            ));
        }
        for (l, h) in hidden.iter().enumerate() {
            let ff = h.ff();
            if h.kind() != spec.kinds[l]
                || ff.fan_in() != spec.fan_in(l)
                || ff.fan_out() != spec.hidden[l]
            {
                return Err(Error::shape(
                    "Network hidden layer",
                    format!("{:?} {}->{}", spec.kinds[l], spec.fan_in(l), spec.hidden[l]),
                    format!("{:?} {}->{}", h.kind(), ff.fan_in(), ff.fan_out()),
                ));
            }
            match h {
                Hidden::Dendritic(d) => {
                    let s = d.segments();
                    if s.segments() != spec.segments
                        || s.context_dim() != spec.context_dim
                        || d.k() != spec.k(l)?
                    {
                        return Err(Error::shape(
                            "Network dendrites",
                            format!("{} x {}", spec.segments, spec.context_dim),
                            format!("{} x {}", s.segments(), s.context_dim()),
                        ));
                    }
                }
                Hidden::Kwta { k, .. } if *k != spec.k(l)? => {
                    return Err(Error::shape("Network kWTA k", spec.k(l)?, *k));
                }
                _ => {}
            }
        }
        let last = spec.fan_in(spec.hidden.len());
        if output.fan_in() != last || output.fan_out() != spec.outputs {
            return Err(Error::shape(
                "Network output",
                format!("{last}->{}", spec.outputs),
                format!("{}->{}", output.fan_in(), output.fan_out()),
            ));
        }
        Ok(Network {
            spec,
            hidden,
            output,
            trace: None,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn hidden(&self) -> &[Hidden<T>] {
        &self.hidden
    }

    pub fn output(&self) -> &Linear<T> {
        &self.output
    }

    fn input(&self, x: &Matrix<T>, ctx: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        if self.spec.input_context_dim == 0 {
            return Ok(x.clone());
        }
        let c = ctx.ok_or_else(missing_context)?;
        if c.cols() != self.spec.input_context_dim {
            return Err(Error::shape(
                "network input context",
                self.spec.input_context_dim,
                c.cols(),
            ));
        }
        x.hcat(c)
    }

    /// Logits and the active-unit flags of every hidden layer. `ctx` holds one
    /// context row per sample.
    pub fn infer_traced(
        &self,
        x: &Matrix<T>,
        ctx: Option<&Matrix<T>>,
    ) -> Result<(Matrix<T>, Vec<Vec<bool>>)> {
        let mut h = self.input(x, ctx)?;
        let mut active = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let (out, act) = layer.infer(&h, ctx)?;
            h = out;
            active.push(act);
        }
        Ok((self.output.forward(&h)?, active))
    }

    pub fn infer(&self, x: &Matrix<T>, ctx: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        Ok(self.infer_traced(x, ctx)?.0)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward(&mut self, x: &Matrix<T>, ctx: Option<&Matrix<T>>) -> Result<Matrix<T>> {
        let mut h = self.input(x, ctx)?;
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.hidden.len() + 1),
            active: Vec::with_capacity(self.hidden.len()),
        };
        for layer in self.hidden.iter_mut() {
            let out = match layer {
                Hidden::Dendritic(d) => {
                    trace.inputs.push(Matrix::zeros(0, 0));
                    trace.active.push(Vec::new());
                    d.forward(&h, ctx.ok_or_else(missing_context)?)?
                }
                plain => {
                    let (out, act) = plain.infer(&h, ctx)?;
                    trace.inputs.push(h);
                    trace.active.push(act);
                    out
                }
            };
            h = out;
        }
        let logits = self.output.forward(&h)?;
        trace.inputs.push(h);
        self.trace = Some(trace);
        Ok(logits)
    }

    /// Parameter gradients for the last [`Network::forward`], in
    /// [`Network::tensors`] order.
    pub fn backward(&self, d_logits: &Matrix<T>) -> Result<Gradients<T>> {
        let trace = self.trace.as_ref().ok_or(Error::NoForward)?;
        let n = self.hidden.len();
        let (mut dh, out_grads) = self.output.backward(&trace.inputs[n], d_logits)?;
        let mut per_layer: Vec<Gradients<T>> = Vec::with_capacity(n);
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let grads = match layer {
                Hidden::Dendritic(d) => {
                    let (dx, g) = d.backward(&dh)?;
                    dh = dx;
                    vec![g.ff.weight.into_vec(), g.ff.bias, g.segments]
                }
                Hidden::Kwta { ff, .. } | Hidden::Relu(ff) => {
                    for (g, &a) in dh.as_mut_slice().iter_mut().zip(&trace.active[l]) {
                        if !a {
                            *g = T::zero();
                        }
                    }
                    let (dx, g) = ff.backward(&trace.inputs[l], &dh)?;
                    dh = dx;
                    vec![g.weight.into_vec(), g.bias]
                }
            };
            per_layer.push(grads);
        }
        let mut out: Gradients<T> = per_layer.into_iter().rev().flatten().collect();
        out.push(out_grads.weight.into_vec());
        out.push(out_grads.bias);
        Ok(out)
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
        for layer in self.hidden.iter_mut() {
            if let Hidden::Dendritic(d) = layer {
                d.clear_record();
            }
        }
    }

    /// Every parameter tensor: per hidden layer weight, bias and (dendritic)
    /// segments, then the output weight and bias.
    pub fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter().enumerate() {
            let ff = layer.ff();
            out.push(TensorRef {
                name: "weight",
                layer: l,
                shape: [ff.fan_out(), ff.fan_in(), 1],
                data: ff.weight().as_slice(),
            });
            out.push(TensorRef {
                name: "bias",
                layer: l,
                shape: [ff.fan_out(), 1, 1],
                data: ff.bias(),
            });
            if let Hidden::Dendritic(d) = layer {
                let s = d.segments();
                out.push(TensorRef {
                    name: "segments",
                    layer: l,
                    shape: [s.neurons(), s.segments(), s.context_dim()],
                    data: s.as_slice(),
                });
            }
        }
        let l = self.hidden.len();
        out.push(TensorRef {
            name: "weight",
            layer: l,
            shape: [self.output.fan_out(), self.output.fan_in(), 1],
            data: self.output.weight().as_slice(),
        });
        out.push(TensorRef {
            name: "bias",
            layer: l,
            shape: [self.output.fan_out(), 1, 1],
            data: self.output.bias(),
        });
        out
    }

    /// Mutable slices in [`Network::tensors`] order. Callers must follow up
    /// with [`Network::apply_masks`].
    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for layer in self.hidden.iter_mut() {
            match layer {
                Hidden::Dendritic(d) => {
                    let (ff, seg) = d.parts_mut();
                    let (w, b) = ff.params_mut();
                    out.push(w.as_mut_slice());
                    out.push(b.as_mut_slice());
                    out.push(seg.as_mut_slice());
                }
                Hidden::Kwta { ff, .. } | Hidden::Relu(ff) => {
                    let (w, b) = ff.params_mut();
                    out.push(w.as_mut_slice());
                    out.push(b.as_mut_slice());
                }
            }
        }
        let (w, b) = self.output.params_mut();
        out.push(w.as_mut_slice());
        out.push(b.as_mut_slice());
        out
    }

    pub fn apply_masks(&mut self) {
        for layer in self.hidden.iter_mut() {
            match layer {
                Hidden::Dendritic(d) => d.parts_mut().0.apply_mask(),
                Hidden::Kwta { ff, .. } | Hidden::Relu(ff) => ff.apply_mask(),
            }
        }
        self.output.apply_mask();
    }

    /// Feedforward masks (hidden layers, then output) for layers that have one.
    pub fn masks(&self) -> Vec<Option<&Matrix<T>>> {
        self.hidden
            .iter()
            .map(|h| h.ff().mask())
            .chain(std::iter::once(self.output.mask()))
            .collect()
    }

    /// Linear layers in order, output last.
    pub fn linears(&self) -> Vec<&Linear<T>> {
        self.hidden
            .iter()
            .map(Hidden::ff)
            .chain(std::iter::once(&self.output))
            .collect()
    }

    /// Replaces the parameters tensor by tensor, in [`Network::tensors`] order.
    pub fn load_tensors(&mut self, values: &[Vec<T>]) -> Result<()> {
        let lens: Vec<usize> = self.tensors().iter().map(|t| t.data.len()).collect();
        if values.len() != lens.len() {
            return Err(Error::shape("load_tensors count", lens.len(), values.len()));
        }
        for (i, (&want, v)) in lens.iter().zip(values).enumerate() {
            if v.len() != want {
                return Err(Error::shape(
                    "load_tensors",
                    format!("tensor {i}: {want}"),
                    v.len(),
                ));
            }
        }
        for (dst, src) in self.tensors_mut().into_iter().zip(values) {
            dst.copy_from_slice(src);
        }
        self.trace = None;
        Ok(())
    }

    pub fn masks_respected(&self) -> bool {
        self.linears().iter().all(|l| l.mask_respected())
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let hidden = self
            .hidden
            .iter()
            .map(|h| match h {
                Hidden::Dendritic(d) => Hidden::Dendritic(d.cast()),
                Hidden::Kwta { ff, k } => Hidden::Kwta {
                    ff: ff.cast(),
                    k: *k,
                },
                Hidden::Relu(ff) => Hidden::Relu(ff.cast()),
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            hidden,
            output: self.output.cast(),
            trace: None,
        }
    }

    /// Stored parameters that may be nonzero: unmasked weights, biases and
    /// dendritic segment weights.
    pub fn nonzero_params(&self) -> ParamTally {
        let ff = self.linears().iter().map(|l| l.param_count()).sum();
        let dendritic = self
            .hidden
            .iter()
            .map(|h| match h {
                Hidden::Dendritic(d) => d.segments().len(),
                _ => 0,
            })
            .sum();
        ParamTally { ff, dendritic }
    }

    /// Gate factors of every dendritic layer for each row of `contexts`
    /// (`None` for other layers).
    pub fn gate_factors(&self, contexts: &Matrix<T>) -> Result<Vec<Option<Matrix<T>>>> {
        self.hidden
            .iter()
            .map(|h| match h {
                Hidden::Dendritic(d) => d.gate_factors(contexts).map(Some),
                _ => Ok(None),
            })
            .collect()
    }

    /// Inference where each sample's dendritic computation is replaced by the
    /// precomputed factors of context row `which[s]`.
    pub fn infer_with_factors(
        &self,
        x: &Matrix<T>,
        factors: &[Option<Matrix<T>>],
        which: &[usize],
    ) -> Result<Matrix<T>> {
        if self.spec.input_context_dim > 0 {
            return Err(Error::Config(
                "gate factors need a network without input context".into(),
            ));
        }
        let mut h = x.clone();
        for (layer, f) in self.hidden.iter().zip(factors) {
            h = match (layer, f) {
                (Hidden::Dendritic(d), Some(f)) => d.infer_with_factors(&h, f, which)?.0,
                (Hidden::Dendritic(_), None) => {
                    return Err(Error::Config(
                        "missing gate factors for a dendritic layer".into(),
                    ))
                }
                (plain, _) => plain.infer(&h, None)?.0,
            };
        }
        self.output.forward(&h)
    }
}

/// Nonzero parameter counts of an allocated network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamTally {
    /// Unmasked feedforward weights and biases, output layer included.
    pub ff: usize,
    pub dendritic: usize,
}

/// A network with one Adam state per parameter tensor.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub net: Network<T>,
    opt: Vec<AdamState<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(net: Network<T>, cfg: AdamConfig) -> Self {
        let opt = net
            .tensors()
            .iter()
            .map(|t| AdamState::new(t.data.len(), cfg))
            .collect();
        Trainer { net, opt }
    }

    pub fn set_lr(&mut self, lr: f64) {
        for s in self.opt.iter_mut() {
            s.set_lr(lr);
        }
    }

    /// One optimisation step on a batch; returns the mean loss.
    pub fn step(&mut self, x: &Matrix<T>, labels: &[u8], ctx: Option<&Matrix<T>>) -> Result<T> {
        let logits = self.net.forward(x, ctx)?;
        let (loss, d_logits) = crate::nn::softmax_xent(&logits, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        let grads = self.net.backward(&d_logits)?;
        for ((param, grad), state) in self
            .net
            .tensors_mut()
            .into_iter()
            .zip(&grads)
            .zip(self.opt.iter_mut())
        {
            state.step(param, grad)?;
        }
        self.net.apply_masks();
        self.net.clear_trace();
        Ok(loss)
    }
}

/// `dendritic` for every hidden layer, or only for the last one.
pub fn kinds_for(layers: usize, dendritic: DendriteLayers, plain: HiddenKind) -> Vec<HiddenKind> {
    (0..layers)
        .map(|l| match dendritic {
            DendriteLayers::All => HiddenKind::Dendritic,
            DendriteLayers::Last if l + 1 == layers => HiddenKind::Dendritic,
            DendriteLayers::Last => plain,
            DendriteLayers::None => plain,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DendriteLayers {
    #[default]
    All,
    Last,
    None,
}

/// Builds a segments tensor of the right shape for tests and loaders.
pub fn segments_like<T: Scalar>(
    spec: &NetworkSpec,
    layer: usize,
    data: Vec<T>,
) -> Result<DendriticSegments<T>> {
    DendriticSegments::from_vec(spec.hidden[layer], spec.segments, spec.context_dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, Probe, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(kinds: Vec<HiddenKind>) -> NetworkSpec {
        NetworkSpec {
            input_dim: 5,
            hidden: vec![6; kinds.len()],
            kinds,
            outputs: 3,
            segments: 3,
            context_dim: 4,
            input_context_dim: 0,
            density: 0.5,
            ff_sparsity: 0.3,
            gating: Gating::AbsMax,
        }
    }

    struct NetProbe {
        net: Network<f64>,
        x: Matrix<f64>,
        ctx: Matrix<f64>,
        labels: Vec<u8>,
    }

    impl NetProbe {
        fn new(spec: &NetworkSpec, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Network::init(spec, &mut rng).unwrap();
            let x = Matrix::uniform(3, spec.input_dim, 1.0, &mut rng);
            let cdim = spec.context_dim.max(spec.input_context_dim);
            let ctx = Matrix::uniform(3, cdim, 1.0, &mut rng);
            NetProbe {
                net,
                x,
                ctx,
                labels: vec![0, 2, 1],
            }
        }
    }

    impl Probe<f64> for NetProbe {
        fn point(&self) -> Vec<f64> {
            self.net
                .tensors()
                .iter()
                .flat_map(|t| t.data.iter().copied())
                .collect()
        }

        fn objective(&self, p: &[f64]) -> Result<f64> {
            let mut net = self.net.clone();
            let mut values = Vec::new();
            let mut at = 0;
            for t in self.net.tensors() {
                values.push(p[at..at + t.data.len()].to_vec());
                at += t.data.len();
            }
            net.load_tensors(&values)?;
            let logits = net.infer(&self.x, Some(&self.ctx))?;
            Ok(crate::nn::softmax_xent(&logits, &self.labels)?.0)
        }

        fn analytic(&self) -> Result<Vec<f64>> {
            let mut net = self.net.clone();
            let logits = net.forward(&self.x, Some(&self.ctx))?;
            let (_, d) = crate::nn::softmax_xent(&logits, &self.labels)?;
            let g = net.backward(&d)?;
            // masked weights are constants
            let mut out = Vec::new();
            for (t, gt) in net.tensors().iter().zip(g) {
                out.extend(gt.into_iter().zip(t.data).map(|(v, _)| v));
            }
            Ok(out)
        }

        fn tie_margin(&self) -> Result<Option<f64>> {
            let mut h = self.net.input(&self.x, Some(&self.ctx))?;
            let mut best: Option<f64> = None;
            for layer in self.net.hidden() {
                let m = match layer {
                    Hidden::Dendritic(d) => d.tie_margin(&h, &self.ctx)?,
                    Hidden::Kwta { ff, k } => crate::dendrites::kwta_margin(&ff.forward(&h)?, *k),
                    Hidden::Relu(ff) => Some(
                        ff.forward(&h)?
                            .as_slice()
                            .iter()
                            .fold(f64::INFINITY, |m, v| m.min(v.abs())),
                    ),
                };
                if let Some(m) = m {
                    best = Some(best.map_or(m, |b: f64| b.min(m)));
                }
                h = layer.infer(&h, Some(&self.ctx))?.0;
            }
            Ok(best)
        }
    }

    fn check(kinds: Vec<HiddenKind>, input_context: bool) {
        let mut s = spec(kinds);
        if input_context {
            s.input_context_dim = 4;
        }
        let mut checked = 0;
        for seed in 0..40 {
            let p = NetProbe::new(&s, seed);
            if p.tie_margin().unwrap().is_some_and(|m| m <= 1e-3) {
                continue;
            }
            // masked coordinates have zero analytic gradient; their numeric
            // gradient is generally nonzero, so compare on free coordinates only
            let free = free_coordinates(&p.net);
            let probe = Restricted {
                inner: &p,
                free: &free,
            };
            let r = grad_check(&probe, DEFAULT_STEP).unwrap();
            // components below ~1e-4 carry finite-difference round-off of ~1e-11
            assert!(r.norm_rel_error < 1e-7, "seed {seed}: {}", r.norm_rel_error);
            checked += 1;
        }
        assert!(checked >= 10, "{checked}");
    }

    fn free_coordinates(net: &Network<f64>) -> Vec<bool> {
        let mut free = Vec::new();
        let masks = net.masks();
        let mut linear = 0;
        for t in net.tensors() {
            if t.name == "weight" {
                match masks[linear] {
                    Some(m) => free.extend(m.as_slice().iter().map(|&v| v != 0.0)),
                    None => free.extend(std::iter::repeat_n(true, t.data.len())),
                }
                linear += 1;
            } else {
                free.extend(std::iter::repeat_n(true, t.data.len()));
            }
        }
        free
    }

    struct Restricted<'a> {
        inner: &'a NetProbe,
        free: &'a [bool],
    }

    impl Restricted<'_> {
        fn expand(&self, p: &[f64]) -> Vec<f64> {
            let mut full = self.inner.point();
            let mut it = p.iter();
            for (v, &f) in full.iter_mut().zip(self.free) {
                if f {
                    *v = *it.next().unwrap();
                }
            }
            full
        }

        fn restrict(&self, v: Vec<f64>) -> Vec<f64> {
            v.into_iter()
                .zip(self.free)
                .filter(|(_, &f)| f)
                .map(|(x, _)| x)
                .collect()
        }
    }

    impl Probe<f64> for Restricted<'_> {
        fn point(&self) -> Vec<f64> {
            self.restrict(self.inner.point())
        }

        fn objective(&self, p: &[f64]) -> Result<f64> {
            self.inner.objective(&self.expand(p))
        }

        fn analytic(&self) -> Result<Vec<f64>> {
            Ok(self.restrict(self.inner.analytic()?))
        }

        fn tie_margin(&self) -> Result<Option<f64>> {
            self.inner.tie_margin()
        }
    }

    #[test]
    fn dendritic_network_gradients() {
        check(vec![HiddenKind::Dendritic, HiddenKind::Dendritic], false);
    }

    #[test]
    fn mixed_network_gradients() {
        check(vec![HiddenKind::Kwta, HiddenKind::Dendritic], false);
    }

    #[test]
    fn relu_network_with_input_context_gradients() {
        let mut s = spec(vec![HiddenKind::Relu, HiddenKind::Relu]);
        s.context_dim = 0;
        s.segments = 0;
        s.input_context_dim = 4;
        s.ff_sparsity = 0.0;
        let mut checked = 0;
        for seed in 0..20 {
            let p = NetProbe::new(&s, seed);
            if p.tie_margin().unwrap().is_some_and(|m| m <= 1e-3) {
                continue;
            }
            let r = grad_check(&p, DEFAULT_STEP).unwrap();
            assert!(r.norm_rel_error < 1e-7, "seed {seed}: {}", r.norm_rel_error);
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn masks_survive_training() {
        let s = spec(vec![HiddenKind::Dendritic, HiddenKind::Kwta]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::<f64>::init(&s, &mut rng).unwrap();
        let mut tr = Trainer::new(net, AdamConfig::with_lr(0.05));
        let x = Matrix::uniform(4, 5, 1.0, &mut rng);
        let c = Matrix::uniform(4, 4, 1.0, &mut rng);
        let first = tr.step(&x, &[0, 1, 2, 0], Some(&c)).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = tr.step(&x, &[0, 1, 2, 0], Some(&c)).unwrap();
        }
        assert!(last < first);
        assert!(tr.net.masks_respected());
        assert!(tr.net.masks().iter().all(Option::is_some));
    }

    #[test]
    fn gate_factors_reproduce_inference() {
        let s = spec(vec![HiddenKind::Dendritic, HiddenKind::Dendritic]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::<f32>::init(&s, &mut rng).unwrap();
        let protos = Matrix::uniform(3, 4, 1.0, &mut rng);
        let which = [2usize, 0, 1, 1, 2];
        let x = Matrix::uniform(5, 5, 1.0, &mut rng);
        let ctx = protos.select_rows(&which);
        let direct = net.infer(&x, Some(&ctx)).unwrap();
        let factors = net.gate_factors(&protos).unwrap();
        assert_eq!(
            net.infer_with_factors(&x, &factors, &which).unwrap(),
            direct
        );
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(vec![HiddenKind::Dendritic]);
        s.segments = 0;
        assert!(Network::<f32>::init(&s, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let mut s = spec(vec![HiddenKind::Kwta]);
        s.density = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec(vec![HiddenKind::Relu]);
        s.kinds.push(HiddenKind::Relu);
        assert!(s.validate().is_err());
    }

    #[test]
    fn missing_context_is_reported() {
        let s = spec(vec![HiddenKind::Dendritic]);
        let net = Network::<f64>::init(&s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(net.infer(&Matrix::zeros(1, 5), None).is_err());
    }
}
