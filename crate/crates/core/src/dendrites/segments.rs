use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{dot, Matrix};
use crate::scalar::Scalar;

/// Per-neuron dendritic segment weights, laid out `[neuron][segment][context]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DendriticSegments<T> {
    weights: Vec<T>,
    neurons: usize,
    segments: usize,
    context_dim: usize,
}

impl<T: Scalar> DendriticSegments<T> {
    pub fn zeros(neurons: usize, segments: usize, context_dim: usize) -> Result<Self> {
        Self::from_vec(
            neurons,
            segments,
            context_dim,
            vec![T::zero(); neurons * segments * context_dim],
        )
    }

    pub fn from_vec(
        neurons: usize,
        segments: usize,
        context_dim: usize,
        weights: Vec<T>,
    ) -> Result<Self> {
        if segments == 0 {
            return Err(Error::OutOfRange {
                what: "segments per neuron",
                value: "0".into(),
                range: ">= 1".into(),
            });
        }
        if weights.len() != neurons * segments * context_dim {
            return Err(Error::shape(
                "DendriticSegments",
                neurons * segments * context_dim,
                weights.len(),
            ));
        }
        Ok(DendriticSegments {
            weights,
            neurons,
            segments,
            context_dim,
        })
    }

    /// Weights uniform in `±1/sqrt(context_dim)`.
    pub fn init<R: Rng + ?Sized>(
        neurons: usize,
        segments: usize,
        context_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (context_dim.max(1) as f64).sqrt();
        let weights = (0..neurons * segments * context_dim)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        Self::from_vec(neurons, segments, context_dim, weights)
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `u_{n,j}`.
    pub fn segment(&self, neuron: usize, seg: usize) -> &[T] {
        let start = (neuron * self.segments + seg) * self.context_dim;
        &self.weights[start..start + self.context_dim]
    }

    pub fn get(&self, neuron: usize, seg: usize, p: usize) -> T {
        self.segment(neuron, seg)[p]
    }

    /// Responses `u_{n,j}ᵀ c` of every segment to one context vector.
    pub fn respond(&self, context: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.context_dim.max(1))
            .map(|u| dot(u, context))
            .collect()
    }

    /// Segment responses for a batch of contexts. Identical context rows are
    /// evaluated once.
    pub fn responses(&self, contexts: &Matrix<T>) -> Result<Responses<T>> {
        if contexts.cols() != self.context_dim {
            return Err(Error::shape(
                "segment_response",
                self.context_dim,
                contexts.cols(),
            ));
        }
        let unique = UniqueRows::of(contexts);
        let values = unique
            .rows
            .iter()
            .map(|&r| self.respond(contexts.row(r)))
            .collect();
        Ok(Responses {
            neurons: self.neurons,
            segments: self.segments,
            sample_to_unique: unique.sample_to_unique,
            unique_rows: unique.rows,
            values,
        })
    }

    pub fn cast<U: Scalar>(&self) -> DendriticSegments<U> {
        DendriticSegments {
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            neurons: self.neurons,
            segments: self.segments,
            context_dim: self.context_dim,
        }
    }
}

/// Deduplication of exactly equal rows.
pub(crate) struct UniqueRows {
    /// First sample index of each distinct row.
    pub rows: Vec<usize>,
    pub sample_to_unique: Vec<usize>,
}

impl UniqueRows {
    pub fn of<T: Scalar>(m: &Matrix<T>) -> Self {
        let mut by_hash: HashMap<u64, Vec<usize>> = HashMap::new();
        let mut rows = Vec::new();
        let mut sample_to_unique = Vec::with_capacity(m.rows());
        for s in 0..m.rows() {
            let row = m.row(s);
            let h = row_hash(row);
            let bucket = by_hash.entry(h).or_default();
            let found = bucket.iter().copied().find(|&u| m.row(rows[u]) == row);
            let u = match found {
                Some(u) => u,
                None => {
                    rows.push(s);
                    bucket.push(rows.len() - 1);
                    rows.len() - 1
                }
            };
            sample_to_unique.push(u);
        }
        UniqueRows {
            rows,
            sample_to_unique,
        }
    }
}

fn row_hash<T: Scalar>(row: &[T]) -> u64 {
    // FNV-1a over the f64 bit patterns
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in row {
        // normalise -0.0 so that rows comparing equal hash equally
        let bits = (v.as_f64() + 0.0).to_bits();
        h ^= bits;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Segment responses `[batch × neurons × segments]`, stored once per distinct context.
#[derive(Debug, Clone)]
pub struct Responses<T> {
    neurons: usize,
    segments: usize,
    sample_to_unique: Vec<usize>,
    unique_rows: Vec<usize>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> Responses<T> {
    pub fn batch(&self) -> usize {
        self.sample_to_unique.len()
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn get(&self, sample: usize, neuron: usize, seg: usize) -> T {
        self.values[self.sample_to_unique[sample]][neuron * self.segments + seg]
    }

    /// All segment responses of one neuron for one sample.
    pub fn of(&self, sample: usize, neuron: usize) -> &[T] {
        let v = &self.values[self.sample_to_unique[sample]];
        &v[neuron * self.segments..(neuron + 1) * self.segments]
    }

    pub(crate) fn distinct(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn unique_of(&self, sample: usize) -> usize {
        self.sample_to_unique[sample]
    }

    pub(crate) fn unique_values(&self, u: usize) -> &[T] {
        &self.values[u]
    }

    pub(crate) fn unique_rows(&self) -> &[usize] {
        &self.unique_rows
    }

    pub(crate) fn sample_map(&self) -> &[usize] {
        &self.sample_to_unique
    }

    /// Dense `[batch × neurons × segments]` copy.
    pub fn to_dense(&self) -> Vec<T> {
        self.sample_to_unique
            .iter()
            .flat_map(|&u| self.values[u].iter().copied())
            .collect()
    }
}
