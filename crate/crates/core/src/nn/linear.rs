use rand::Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected layer `y = x Wᵀ + b` with an optional fixed binary mask.
///
/// When a mask is present, masked weight entries are held at exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    weight: Matrix<T>,
    bias: Vec<T>,
    mask: Option<Matrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    /// Builds a layer from explicit parameters. The mask, if any, is applied.
    pub fn new(weight: Matrix<T>, bias: Vec<T>, mask: Option<Matrix<T>>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("Linear::new", weight.rows(), bias.len()));
        }
        if let Some(m) = &mask {
            m.same_shape("Linear::new mask", &weight)?;
            if m.as_slice()
                .iter()
                .any(|&v| v != T::zero() && v != T::one())
            {
                return Err(Error::Config("mask entries must be 0 or 1".into()));
            }
        }
        let mut layer = Linear { weight, bias, mask };
        layer.apply_mask();
        Ok(layer)
    }

    /// Random layer: row-balanced mask keeping `round((1 - sparsity) * fan_in)`
    /// inputs per unit, weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        sparsity: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Self::init_sparse(fan_in, fan_out, sparsity, 1.0, rng)
    }

    /// As [`Linear::init`], but weights are uniform in
    /// `±1/sqrt(input_density · (1 - sparsity) · fan_in)` so that the
    /// pre-activation variance does not shrink with input or weight sparsity.
    pub fn init_sparse<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        sparsity: f64,
        input_density: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&sparsity) {
            return Err(Error::OutOfRange {
                what: "weight sparsity",
                value: sparsity.to_string(),
                range: "[0, 1)".into(),
            });
        }
        if !(input_density > 0.0 && input_density <= 1.0) {
            return Err(Error::OutOfRange {
                what: "input density",
                value: input_density.to_string(),
                range: "(0, 1]".into(),
            });
        }
        let mask = (sparsity > 0.0).then(|| random_mask(fan_out, fan_in, sparsity, rng));
        let bias_bound = 1.0 / (fan_in as f64).sqrt();
        let bound = if sparsity > 0.0 || input_density < 1.0 {
            let kept = kept_inputs(fan_in, sparsity) as f64;
            1.0 / (input_density * kept).sqrt()
        } else {
            bias_bound
        };
        let weight = Matrix::uniform(fan_out, fan_in, bound, rng);
        let bias = (0..fan_out)
            .map(|_| T::of(rng.gen_range(-bias_bound..bias_bound)))
            .collect();
        Linear::new(weight, bias, mask)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight(&self) -> &Matrix<T> {
        &self.weight
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn mask(&self) -> Option<&Matrix<T>> {
        self.mask.as_ref()
    }

    /// Mutable access for the optimizer. Callers must re-apply the mask.
    pub(crate) fn params_mut(&mut self) -> (&mut Matrix<T>, &mut Vec<T>) {
        (&mut self.weight, &mut self.bias)
    }

    pub(crate) fn apply_mask(&mut self) {
        if let Some(m) = &self.mask {
            for (w, &keep) in self.weight.as_mut_slice().iter_mut().zip(m.as_slice()) {
                if keep == T::zero() {
                    *w = T::zero();
                }
            }
        }
    }

    /// Zeroes masked entries of a weight-shaped gradient.
    pub fn mask_grad(&self, grad: &mut Matrix<T>) {
        if let Some(m) = &self.mask {
            for (g, &keep) in grad.as_mut_slice().iter_mut().zip(m.as_slice()) {
                if keep == T::zero() {
                    *g = T::zero();
                }
            }
        }
    }

    /// True if every masked entry is exactly zero.
    pub fn mask_respected(&self) -> bool {
        match &self.mask {
            None => true,
            Some(m) => self
                .weight
                .as_slice()
                .iter()
                .zip(m.as_slice())
                .all(|(&w, &keep)| keep != T::zero() || w == T::zero()),
        }
    }

    /// Number of weights allowed to be nonzero plus biases.
    pub fn param_count(&self) -> usize {
        let weights = match &self.mask {
            None => self.weight.len(),
            Some(m) => m.as_slice().iter().filter(|&&v| v != T::zero()).count(),
        };
        weights + self.bias.len()
    }

    /// `out[s, i] = Σ_k W[i, k] · x[s, k] + b[i]`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape("linear_forward", self.fan_in(), x.cols()));
        }
        let mut out = x.matmul(&self.weight.transpose())?;
        for r in 0..out.rows() {
            for (v, &b) in out.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Returns `(dX, grads)` with `dW = dYᵀ X` (masked), `db = Σ_s dY`, `dX = dY W`.
    pub fn backward(&self, x: &Matrix<T>, dy: &Matrix<T>) -> Result<(Matrix<T>, LinearGrads<T>)> {
        if x.cols() != self.fan_in() || dy.cols() != self.fan_out() || x.rows() != dy.rows() {
            return Err(Error::shape(
                "linear_backward",
                format!("x: Bx{}, dy: Bx{}", self.fan_in(), self.fan_out()),
                format!(
                    "x: {}x{}, dy: {}x{}",
                    x.rows(),
                    x.cols(),
                    dy.rows(),
                    dy.cols()
                ),
            ));
        }
        let dx = dy.matmul(&self.weight)?;
        let mut dw = dy.t_matmul(x)?;
        self.mask_grad(&mut dw);
        let db = dy.column_sums();
        Ok((
            dx,
            LinearGrads {
                weight: dw,
                bias: db,
            },
        ))
    }

    pub fn cast<U: Scalar>(&self) -> Linear<U> {
        Linear {
            weight: self.weight.cast(),
            bias: self.bias.iter().map(|v| U::of(v.as_f64())).collect(),
            mask: self.mask.as_ref().map(Matrix::cast),
        }
    }
}

/// Inputs each unit keeps under a mask of the given sparsity (at least one).
pub fn kept_inputs(fan_in: usize, sparsity: f64) -> usize {
    (((1.0 - sparsity) * fan_in as f64).round() as usize).clamp(1, fan_in)
}

/// Binary `[rows × cols]` mask with `round((1 - sparsity) * cols)` ones per row.
pub fn random_mask<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    sparsity: f64,
    rng: &mut R,
) -> Matrix<T> {
    let keep = kept_inputs(cols, sparsity);
    let mut mask = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in rand::seq::index::sample(rng, cols, keep) {
            mask[(r, c)] = T::one();
        }
    }
    mask
}
