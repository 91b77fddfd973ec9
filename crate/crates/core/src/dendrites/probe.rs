use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{ActiveDendritesLayer, Gating};
use super::segments::DendriticSegments;
use crate::error::Result;
use crate::nn::{gradcheck::Probe, Linear, Matrix};
use crate::scalar::Scalar;

/// Gradient probe for an Active Dendrites layer over `(W, b, U, X)`.
/// Contexts are constants.
#[derive(Debug, Clone)]
pub struct DendriticProbe<T> {
    pub layer: ActiveDendritesLayer<T>,
    pub x: Matrix<T>,
    pub contexts: Matrix<T>,
    pub proj: Matrix<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeShape {
    pub batch: usize,
    pub fan_in: usize,
    pub neurons: usize,
    pub segments: usize,
    pub context_dim: usize,
    pub k: usize,
    pub ff_sparsity: f64,
}

impl<T: Scalar> DendriticProbe<T> {
    pub fn new(shape: ProbeShape, seed: u64, gating: Gating) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = ActiveDendritesLayer::<f64>::init(
            shape.fan_in,
            shape.neurons,
            shape.segments,
            shape.context_dim,
            shape.ff_sparsity,
            gating,
            shape.k,
            &mut rng,
        )?;
        let x = Matrix::<f64>::uniform(shape.batch, shape.fan_in, 1.0, &mut rng);
        let contexts = Matrix::<f64>::uniform(shape.batch, shape.context_dim, 1.0, &mut rng);
        let proj = Matrix::<f64>::uniform(shape.batch, shape.neurons, 1.0, &mut rng);
        Ok(DendriticProbe {
            layer: layer.cast(),
            x: x.cast(),
            contexts: contexts.cast(),
            proj: proj.cast(),
        })
    }

    /// Random small shape (≤ 8 neurons, ≤ 4 segments) drawn from `seed`.
    pub fn random_shape(seed: u64) -> ProbeShape {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let neurons = rng.gen_range(1..=8);
        ProbeShape {
            batch: rng.gen_range(1..=3),
            fan_in: rng.gen_range(1..=6),
            neurons,
            segments: rng.gen_range(1..=4),
            context_dim: rng.gen_range(1..=5),
            k: rng.gen_range(1..=neurons),
            ff_sparsity: if rng.gen_bool(0.5) { 0.0 } else { 0.5 },
        }
    }

    /// First instance derived from `seed` whose tie margin exceeds `min_margin`.
    pub fn random_away_from_ties(seed: u64, min_margin: f64, gating: Gating) -> Result<Self> {
        let mut attempt = 0u64;
        loop {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
            let probe = Self::new(Self::random_shape(s), s, gating)?;
            if probe.tie_margin()?.is_none_or(|m| m > min_margin) {
                return Ok(probe);
            }
            attempt += 1;
        }
    }

    pub fn cast<U: Scalar>(&self) -> DendriticProbe<U> {
        DendriticProbe {
            layer: self.layer.cast(),
            x: self.x.cast(),
            contexts: self.contexts.cast(),
            proj: self.proj.cast(),
        }
    }

    fn unpack(&self, p: &[T]) -> Result<(ActiveDendritesLayer<T>, Matrix<T>)> {
        let ff = self.layer.ff();
        let (o, i) = ff.weight().shape();
        let nw = o * i;
        let nu = self.layer.segments().len();
        let w = Matrix::from_vec(o, i, p[..nw].to_vec())?;
        let b = p[nw..nw + o].to_vec();
        let seg = self.layer.segments();
        let u = DendriticSegments::from_vec(
            seg.neurons(),
            seg.segments(),
            seg.context_dim(),
            p[nw + o..nw + o + nu].to_vec(),
        )?;
        let x = Matrix::from_vec(self.x.rows(), i, p[nw + o + nu..].to_vec())?;
        let layer = ActiveDendritesLayer::new(
            Linear::new(w, b, ff.mask().cloned())?,
            u,
            self.layer.gating(),
            self.layer.k(),
        )?;
        Ok((layer, x))
    }
}

impl<T: Scalar> Probe<T> for DendriticProbe<T> {
    fn point(&self) -> Vec<T> {
        let mut p = self.layer.ff().weight().as_slice().to_vec();
        p.extend_from_slice(self.layer.ff().bias());
        p.extend_from_slice(self.layer.segments().as_slice());
        p.extend_from_slice(self.x.as_slice());
        p
    }

    fn objective(&self, point: &[T]) -> Result<T> {
        let (layer, x) = self.unpack(point)?;
        let (y, _) = layer.infer(&x, &self.contexts)?;
        Ok(y.as_slice()
            .iter()
            .zip(self.proj.as_slice())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    fn analytic(&self) -> Result<Vec<T>> {
        let mut layer = self.layer.clone();
        layer.forward(&self.x, &self.contexts)?;
        let (dx, g) = layer.backward(&self.proj)?;
        let mut out = g.ff.weight.into_vec();
        out.extend(g.ff.bias);
        out.extend(g.segments);
        out.extend(dx.into_vec());
        Ok(out)
    }

    fn tie_margin(&self) -> Result<Option<f64>> {
        self.layer.tie_margin(&self.x, &self.contexts)
    }
}
