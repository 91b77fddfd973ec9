//! Binary model container.
//!
//! Layout: the magic `ADNET1`, a little-endian `u64` header length, a JSON
//! header, then the payload in header order: every parameter tensor in the
//! header dtype, every feedforward mask as one byte per entry, and the
//! prototype store's per-cluster `sum` and optional `d × d` `m2` as `f64`. All
//! numbers are little-endian. The file length must match the header exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::context::{Prototype, PrototypeStore};
use crate::dendrites::ActiveDendritesLayer;
use crate::error::{Error, Result};
use crate::model::{segments_like, Hidden, HiddenKind, Network, NetworkSpec};
use crate::nn::{Linear, Matrix};
use crate::scalar::Scalar;

use super::config::ExperimentConfig;

pub const MAGIC: &[u8; 6] = b"ADNET1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorInfo {
    pub name: String,
    pub layer: usize,
    pub shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskInfo {
    pub layer: usize,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterInfo {
    pub count: usize,
    pub covariance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreInfo {
    pub dim: usize,
    pub p_threshold: f64,
    pub clusters: Vec<ClusterInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub config: Option<ExperimentConfig>,
    pub spec: NetworkSpec,
    pub tensors: Vec<TensorInfo>,
    pub masks: Vec<MaskInfo>,
    pub store: Option<StoreInfo>,
}

impl CheckpointHeader {
    fn payload_len(&self, scalar_bytes: usize) -> usize {
        let tensors: usize = self
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        let masks: usize = self.masks.iter().map(|m| m.shape[0] * m.shape[1]).sum();
        let store = self.store.as_ref().map_or(0, |s| {
            let m2 = s.clusters.iter().filter(|c| c.covariance).count() * s.dim * s.dim;
            s.clusters.len() * s.dim + m2
        });
        tensors * scalar_bytes + masks + store * 8
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub network: Network<T>,
    pub store: Option<PrototypeStore>,
    pub config: Option<ExperimentConfig>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint<T: Scalar>(
    net: &Network<T>,
    store: Option<&PrototypeStore>,
    config: Option<&ExperimentConfig>,
) -> Result<Vec<u8>> {
    let tensors = net.tensors();
    let masks: Vec<(usize, &Matrix<T>)> = net
        .masks()
        .into_iter()
        .enumerate()
        .filter_map(|(l, m)| m.map(|m| (l, m)))
        .collect();
    let header = CheckpointHeader {
        dtype: T::DTYPE.into(),
        config: config.cloned(),
        spec: net.spec().clone(),
        tensors: tensors
            .iter()
            .map(|t| TensorInfo {
                name: t.name.into(),
                layer: t.layer,
                shape: t.shape,
            })
            .collect(),
        masks: masks
            .iter()
            .map(|(l, m)| MaskInfo {
                layer: *l,
                shape: [m.rows(), m.cols()],
            })
            .collect(),
        store: store.map(|s| StoreInfo {
            dim: s.dim(),
            p_threshold: s.p_threshold(),
            clusters: s
                .clusters()
                .iter()
                .map(|c| ClusterInfo {
                    count: c.count(),
                    covariance: c.has_covariance(),
                })
                .collect(),
        }),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + header.payload_len(T::BYTES));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &tensors {
        for &v in t.data {
            v.write_le(&mut out);
        }
    }
    for (_, m) in &masks {
        out.extend(m.as_slice().iter().map(|&v| u8::from(v != T::zero())));
    }
    if let Some(s) = store {
        for c in s.clusters() {
            c.sum()
                .iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            if let Some(m2) = c.m2() {
                m2.iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
        }
    }
    Ok(out)
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    net: &Network<T>,
    store: Option<&PrototypeStore>,
    config: Option<&ExperimentConfig>,
) -> Result<()> {
    let bytes = encode_checkpoint(net, store, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

/// Splits a checkpoint into its header and payload.
pub fn decode_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing ADNET1 magic"));
    }
    let len_bytes: [u8; 8] = bytes[MAGIC.len()..MAGIC.len() + 8]
        .try_into()
        .expect("8 bytes");
    let len = usize::try_from(u64::from_le_bytes(len_bytes))
        .map_err(|_| bad("header length overflows"))?;
    let rest = &bytes[MAGIC.len() + 8..];
    if len > rest.len() {
        return Err(bad(format!(
            "truncated header: {len} bytes declared, {} present",
            rest.len()
        )));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..len]).map_err(|e| bad(format!("corrupt header: {e}")))?;
    Ok((header, &rest[len..]))
}

/// Reads only the header, e.g. to pick the scalar type before loading.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(decode_header(&bytes)?.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        head
    }

    fn scalars<T: Scalar>(&mut self, n: usize) -> Vec<T> {
        self.take(n * T::BYTES)
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect()
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        self.take(n * 8)
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (header, payload) = decode_header(bytes)?;
    if header.dtype != T::DTYPE {
        return Err(bad(format!(
            "dtype {} cannot be loaded as {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let want = header.payload_len(T::BYTES);
    if payload.len() != want {
        return Err(bad(format!(
            "payload is {} bytes, header describes {want}",
            payload.len()
        )));
    }
    let spec = header.spec.clone();
    spec.validate()?;
    let expected = expected_tensors(&spec);
    if header.tensors != expected {
        return Err(bad("tensor list does not match the network spec"));
    }
    let layers = spec.hidden.len() + 1;
    let mut r = Reader { bytes: payload };
    let values: Vec<Vec<T>> = header
        .tensors
        .iter()
        .map(|t| r.scalars(t.shape.iter().product()))
        .collect();
    let mut masks: Vec<Option<Matrix<T>>> = vec![None; layers];
    let mut last = None;
    for m in &header.masks {
        if m.layer >= layers || last.is_some_and(|l| m.layer <= l) {
            return Err(bad(format!("mask for layer {} out of order", m.layer)));
        }
        last = Some(m.layer);
        let raw = r.take(m.shape[0] * m.shape[1]);
        if raw.iter().any(|&b| b > 1) {
            return Err(bad(format!("mask of layer {} is not binary", m.layer)));
        }
        let data = raw
            .iter()
            .map(|&b| if b == 1 { T::one() } else { T::zero() })
            .collect();
        masks[m.layer] = Some(Matrix::from_vec(m.shape[0], m.shape[1], data)?);
    }
    let store = match &header.store {
        None => None,
        Some(s) => {
            let mut clusters = Vec::with_capacity(s.clusters.len());
            for c in &s.clusters {
                let sum = r.f64s(s.dim);
                let m2 = c.covariance.then(|| r.f64s(s.dim * s.dim));
                clusters.push(Prototype::from_parts(c.count, sum, m2)?);
            }
            Some(PrototypeStore::from_clusters(
                s.dim,
                clusters,
                s.p_threshold,
            )?)
        }
    };
    let network = assemble(spec, values, masks)?;
    Ok(Checkpoint {
        network,
        store,
        config: header.config,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_checkpoint(&bytes)
}

fn expected_tensors(spec: &NetworkSpec) -> Vec<TensorInfo> {
    let info = |name: &str, layer, shape| TensorInfo {
        name: name.into(),
        layer,
        shape,
    };
    let mut out = Vec::new();
    for l in 0..=spec.hidden.len() {
        let (fan_in, n) = (
            spec.fan_in(l),
            spec.hidden.get(l).copied().unwrap_or(spec.outputs),
        );
        out.push(info("weight", l, [n, fan_in, 1]));
        out.push(info("bias", l, [n, 1, 1]));
        if spec.kinds.get(l) == Some(&HiddenKind::Dendritic) {
            out.push(info("segments", l, [n, spec.segments, spec.context_dim]));
        }
    }
    out
}

fn linear<T: Scalar>(
    weight: Vec<T>,
    bias: Vec<T>,
    mask: Option<Matrix<T>>,
    layer: usize,
    fan_in: usize,
) -> Result<Linear<T>> {
    let weight = Matrix::from_vec(bias.len(), fan_in, weight)?;
    if let Some(m) = &mask {
        m.same_shape("checkpoint mask", &weight)?;
        let violated = m
            .as_slice()
            .iter()
            .zip(weight.as_slice())
            .any(|(&m, &w)| m == T::zero() && w != T::zero());
        if violated {
            return Err(bad(format!(
                "layer {layer} has nonzero weights under its mask"
            )));
        }
    }
    Linear::new(weight, bias, mask)
}

fn assemble<T: Scalar>(
    spec: NetworkSpec,
    values: Vec<Vec<T>>,
    mut masks: Vec<Option<Matrix<T>>>,
) -> Result<Network<T>> {
    let mut values = values.into_iter();
    let mut next = || values.next().expect("tensor count checked against spec");
    let mut hidden = Vec::with_capacity(spec.hidden.len());
    for (l, mask) in masks.iter_mut().enumerate().take(spec.hidden.len()) {
        let ff = linear(next(), next(), mask.take(), l, spec.fan_in(l))?;
        hidden.push(match spec.kinds[l] {
            HiddenKind::Dendritic => {
                let dend = segments_like(&spec, l, next())?;
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
    let output = linear(next(), next(), masks[last].take(), last, spec.fan_in(last))?;
    Network::from_layers(spec, hidden, output)
}
