//! Central finite-difference gradient checking.
//!
//! A [`Probe`] wraps a differentiable operation at a fixed point and exposes a
//! scalar objective over a flat parameter vector. Layer outputs are reduced to
//! a scalar as `Σ R ∘ out` with a fixed random projection `R`, so the analytic
//! gradient is the layer backward pass fed with `dOut = R`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::linear::Linear;
use super::loss::softmax_xent;
use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_STEP: f64 = 1e-5;

pub trait Probe<T: Scalar> {
    /// Current parameter vector (everything differentiated, flattened).
    fn point(&self) -> Vec<T>;
    /// Objective evaluated at an arbitrary parameter vector.
    fn objective(&self, point: &[T]) -> Result<T>;
    /// Analytic gradient at [`Probe::point`].
    fn analytic(&self) -> Result<Vec<T>>;
    /// Smallest distance to a selection tie (kWTA or segment argmax), if the
    /// operation has any.
    fn tie_margin(&self) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest per-parameter relative error.
    pub max_rel_error: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub norm_rel_error: f64,
    pub params: usize,
}

impl GradCheck {
    fn of(analytic: &[f64], numeric: &[f64]) -> Self {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, n)| a - n));
        let scale = norm(&mut analytic.iter().copied())
            .max(norm(&mut numeric.iter().copied()))
            .max(1e-12);
        GradCheck {
            max_rel_error: max_relative_error(analytic, numeric),
            norm_rel_error: diff / scale,
            params: analytic.len(),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn ensure_margin<T: Scalar, P: Probe<T>>(probe: &P, h: f64) -> Result<()> {
    if let Some(margin) = probe.tie_margin()? {
        if margin <= 10.0 * h {
            return Err(Error::NonDifferentiable {
                margin,
                required: 10.0 * h,
            });
        }
    }
    Ok(())
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn numeric_gradient<P: Probe<f64>>(probe: &P, h: f64) -> Result<Vec<f64>> {
    let base = probe.point();
    let mut p = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        p[i] = base[i] + h;
        let plus = probe.objective(&p)?;
        p[i] = base[i] - h;
        let minus = probe.objective(&p)?;
        p[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// 64-bit check: analytic vs central differences on the same probe.
pub fn grad_check<P: Probe<f64>>(probe: &P, h: f64) -> Result<GradCheck> {
    ensure_margin(probe, h)?;
    let analytic = probe.analytic()?;
    let numeric = numeric_gradient(probe, h)?;
    Ok(GradCheck::of(&analytic, &numeric))
}

/// 32-bit check: the `f32` analytic gradient against central differences
/// taken in 64-bit on the identical instance (`reference` must be the exact
/// widening of `probe`). Differencing in `f32` itself is dominated by
/// round-off at any usable step size.
pub fn grad_check_f32<P32: Probe<f32>, P64: Probe<f64>>(
    probe: &P32,
    reference: &P64,
    h: f64,
) -> Result<GradCheck> {
    ensure_margin(reference, h)?;
    let analytic: Vec<f64> = probe.analytic()?.into_iter().map(f64::from).collect();
    let numeric = numeric_gradient(reference, h)?;
    if analytic.len() != numeric.len() {
        return Err(Error::shape(
            "grad_check_f32",
            numeric.len(),
            analytic.len(),
        ));
    }
    Ok(GradCheck::of(&analytic, &numeric))
}

/// Linear layer probe over `(W, b, X)`.
#[derive(Debug, Clone)]
pub struct LinearProbe<T> {
    pub layer: Linear<T>,
    pub x: Matrix<T>,
    pub proj: Matrix<T>,
}

impl<T: Scalar> LinearProbe<T> {
    pub fn random(seed: u64, batch: usize, fan_in: usize, fan_out: usize, sparsity: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Linear::<f64>::init(fan_in, fan_out, sparsity, &mut rng)
            .expect("valid sparsity")
            .cast();
        let x = Matrix::<f64>::uniform(batch, fan_in, 1.0, &mut rng).cast();
        let proj = Matrix::<f64>::uniform(batch, fan_out, 1.0, &mut rng).cast();
        LinearProbe { layer, x, proj }
    }

    pub fn cast<U: Scalar>(&self) -> LinearProbe<U> {
        LinearProbe {
            layer: self.layer.cast(),
            x: self.x.cast(),
            proj: self.proj.cast(),
        }
    }

    fn unpack(&self, p: &[T]) -> Result<(Linear<T>, Matrix<T>)> {
        let (o, i) = self.layer.weight().shape();
        let nw = o * i;
        let w = Matrix::from_vec(o, i, p[..nw].to_vec())?;
        let b = p[nw..nw + o].to_vec();
        let x = Matrix::from_vec(self.x.rows(), i, p[nw + o..].to_vec())?;
        Ok((Linear::new(w, b, self.layer.mask().cloned())?, x))
    }
}

impl<T: Scalar> Probe<T> for LinearProbe<T> {
    fn point(&self) -> Vec<T> {
        let mut p = self.layer.weight().as_slice().to_vec();
        p.extend_from_slice(self.layer.bias());
        p.extend_from_slice(self.x.as_slice());
        p
    }

    fn objective(&self, point: &[T]) -> Result<T> {
        let (layer, x) = self.unpack(point)?;
        let y = layer.forward(&x)?;
        Ok(y.as_slice()
            .iter()
            .zip(self.proj.as_slice())
            .map(|(&a, &b)| a * b)
            .sum())
    }

    fn analytic(&self) -> Result<Vec<T>> {
        let (dx, g) = self.layer.backward(&self.x, &self.proj)?;
        let mut out = g.weight.into_vec();
        out.extend(g.bias);
        out.extend(dx.into_vec());
        // Masked weights are constants: their numeric derivative is taken
        // through a layer that re-zeroes them, so it is exactly 0 as well.
        Ok(out)
    }
}

/// Softmax cross-entropy probe over the logits.
#[derive(Debug, Clone)]
pub struct SoftmaxProbe<T> {
    pub logits: Matrix<T>,
    pub labels: Vec<u8>,
}

impl<T: Scalar> SoftmaxProbe<T> {
    pub fn random(seed: u64, batch: usize) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::<f64>::uniform(batch, 10, 3.0, &mut rng).cast();
        let labels = (0..batch).map(|_| rng.gen_range(0..10u8)).collect();
        SoftmaxProbe { logits, labels }
    }

    pub fn cast<U: Scalar>(&self) -> SoftmaxProbe<U> {
        SoftmaxProbe {
            logits: self.logits.cast(),
            labels: self.labels.clone(),
        }
    }
}

impl<T: Scalar> Probe<T> for SoftmaxProbe<T> {
    fn point(&self) -> Vec<T> {
        self.logits.as_slice().to_vec()
    }

    fn objective(&self, point: &[T]) -> Result<T> {
        let logits = Matrix::from_vec(self.logits.rows(), self.logits.cols(), point.to_vec())?;
        Ok(softmax_xent(&logits, &self.labels)?.0)
    }

    fn analytic(&self) -> Result<Vec<T>> {
        Ok(softmax_xent(&self.logits, &self.labels)?.1.into_vec())
    }
}
