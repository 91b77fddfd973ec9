use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// A cluster of samples summarised by `(count, sum, M2)`.
///
/// `M2 = Σ (y − ȳ)(y − ȳ)ᵀ` is kept symmetric and is optional: prototypes
/// used only for nearest-prototype lookup do not need it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype {
    dim: usize,
    count: usize,
    sum: Vec<f64>,
    m2: Option<Vec<f64>>,
}

impl Prototype {
    /// Statistics of the rows of `x`.
    pub fn from_samples<T: Scalar>(x: &Matrix<T>, covariance: bool) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("sample set"));
        }
        let dim = x.cols();
        let mut sum = vec![0.0; dim];
        for row in x.iter_rows() {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v.as_f64();
            }
        }
        let m2 = covariance.then(|| {
            let n = x.rows() as f64;
            let centered = Matrix::from_fn(x.rows(), dim, |r, c| x[(r, c)].as_f64() - sum[c] / n);
            let mut m2 = centered.t_matmul(&centered).expect("square").into_vec();
            symmetrize(&mut m2, dim);
            m2
        });
        Ok(Prototype {
            dim,
            count: x.rows(),
            sum,
            m2,
        })
    }

    /// Rebuilds a prototype from stored statistics.
    pub fn from_parts(count: usize, sum: Vec<f64>, m2: Option<Vec<f64>>) -> Result<Self> {
        if count == 0 {
            return Err(Error::Empty("prototype"));
        }
        let dim = sum.len();
        if let Some(m) = &m2 {
            if m.len() != dim * dim {
                return Err(Error::shape("Prototype M2", dim * dim, m.len()));
            }
        }
        Ok(Prototype {
            dim,
            count,
            sum,
            m2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    pub fn m2(&self) -> Option<&[f64]> {
        self.m2.as_deref()
    }

    pub fn has_covariance(&self) -> bool {
        self.m2.is_some()
    }

    /// The prototype vector `p = sum / count`.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count as f64;
        self.sum.iter().map(|s| s / n).collect()
    }

    pub fn vector<T: Scalar>(&self) -> Vec<T> {
        self.mean().into_iter().map(T::of).collect()
    }

    /// Sample covariance `M2 / (count − 1)`; needs `count ≥ 2`.
    pub fn covariance(&self) -> Option<Vec<f64>> {
        let m2 = self.m2.as_ref()?;
        if self.count < 2 {
            return None;
        }
        let denom = (self.count - 1) as f64;
        Some(m2.iter().map(|v| v / denom).collect())
    }

    /// Merges another cluster into this one (parallel-variance update).
    pub fn absorb(&mut self, other: &Prototype) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::shape("Prototype::absorb", self.dim, other.dim));
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        if let Some(m2) = &mut self.m2 {
            let other_m2 = other.m2.as_ref().ok_or_else(|| {
                Error::Config("cannot merge a mean-only prototype into one with covariance".into())
            })?;
            let delta: Vec<f64> = other
                .sum
                .iter()
                .zip(&self.sum)
                .map(|(b, a)| b / nb - a / na)
                .collect();
            let w = na * nb / n;
            let d = self.dim;
            for i in 0..d {
                let di = delta[i] * w;
                let row = &mut m2[i * d..(i + 1) * d];
                for ((x, &o), &dj) in row
                    .iter_mut()
                    .zip(&other_m2[i * d..(i + 1) * d])
                    .zip(&delta)
                {
                    *x += o + di * dj;
                }
            }
            symmetrize(m2, d);
        }
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s += o;
        }
        self.count += other.count;
        Ok(())
    }

    /// Squared Euclidean distance from `x` to the prototype vector.
    pub fn distance_sq<T: Scalar>(&self, x: &[T]) -> f64 {
        let n = self.count as f64;
        self.sum
            .iter()
            .zip(x)
            .map(|(s, v)| {
                let d = v.as_f64() - s / n;
                d * d
            })
            .sum()
    }

    pub fn without_covariance(&self) -> Prototype {
        Prototype {
            m2: None,
            ..self.clone()
        }
    }
}

pub(crate) fn symmetrize(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in i + 1..d {
            let avg = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = avg;
            m[j * d + i] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mean_of_three_points() {
        let x = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0], vec![4.0, 4.0]]).unwrap();
        let p = Prototype::from_samples(&x, true).unwrap();
        assert_eq!(p.mean(), vec![2.0, 2.0]);
        assert_eq!(p.count(), 3);
    }

    #[test]
    fn single_sample_is_its_own_prototype() {
        let x = Matrix::from_rows(&[vec![0.25f32, -1.5, 3.0]]).unwrap();
        let p = Prototype::from_samples(&x, false).unwrap();
        assert_eq!(p.vector::<f32>(), vec![0.25, -1.5, 3.0]);
        assert!(p.covariance().is_none());
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(
            Prototype::from_samples(&Matrix::<f64>::zeros(0, 3), true),
            Err(Error::Empty(_))
        ));
    }

    fn two_pass(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in rows {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        (mean, cov)
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn thousand_sample_mean_matches_two_pass() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .collect();
        let p = Prototype::from_samples(&Matrix::from_rows(&rows).unwrap(), false).unwrap();
        let (mean, _) = two_pass(&rows);
        for (a, b) in p.mean().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn streamed_statistics_match_two_pass(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 3..60),
            cuts in prop::collection::vec(1usize..10, 1..8),
        ) {
            let mut chunks = Vec::new();
            let mut start = 0;
            for c in cuts {
                if start >= rows.len() { break; }
                let end = (start + c).min(rows.len());
                chunks.push(rows[start..end].to_vec());
                start = end;
            }
            if start < rows.len() {
                chunks.push(rows[start..].to_vec());
            }
            let mut acc = Prototype::from_samples(&Matrix::from_rows(&chunks[0]).unwrap(), true).unwrap();
            for ch in &chunks[1..] {
                acc.absorb(&Prototype::from_samples(&Matrix::from_rows(ch).unwrap(), true).unwrap()).unwrap();
            }
            let (mean, cov) = two_pass(&rows);
            for (a, b) in acc.mean().iter().zip(&mean) {
                prop_assert!(rel_close(*a, *b, 1e-5) || (a - b).abs() < 1e-12);
            }
            let got = acc.covariance().unwrap();
            let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in got.iter().zip(&cov) {
                prop_assert!(rel_close(*a, *b, 1e-5) || (a - b).abs() < 1e-9 * scale.max(1.0));
            }
            let d = 4;
            for i in 0..d {
                for j in 0..d {
                    prop_assert_eq!(got[i * d + j], got[j * d + i]);
                }
            }
        }
    }
}
