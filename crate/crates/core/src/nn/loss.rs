use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_xent<T: Scalar>(logits: &Matrix<T>, labels: &[u8]) -> Result<(T, Matrix<T>)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("softmax_xent", logits.rows(), labels.len()));
    }
    let classes = logits.cols();
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::OutOfRange {
            what: "label",
            value: bad.to_string(),
            range: format!("[0, {classes})"),
        });
    }
    let batch = T::of(logits.rows() as f64);
    let mut grad = Matrix::zeros(logits.rows(), classes);
    let mut loss = T::zero();
    for (s, &label) in labels.iter().enumerate() {
        let row = logits.row(s);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label as usize];
        let g = grad.row_mut(s);
        for (gv, &v) in g.iter_mut().zip(row) {
            *gv = (v - log_z).exp() / batch;
        }
        g[label as usize] -= T::one() / batch;
    }
    Ok((loss / batch, grad))
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows<T: Scalar>(m: &Matrix<T>) -> Vec<usize> {
    m.iter_rows()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln10() {
        let logits = Matrix::<f64>::filled(3, 10, 0.7);
        let (loss, _) = softmax_xent(&logits, &[0, 4, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logit_drives_loss_to_zero() {
        let mut logits = Matrix::<f64>::zeros(1, 10);
        logits[(0, 3)] = 1e3;
        let (loss, grad) = softmax_xent(&logits, &[3]).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let logits = Matrix::from_fn(2, 10, |r, c| (r * 10 + c) as f64 * 0.13 - 0.5);
        let (_, grad) = softmax_xent(&logits, &[1, 8]).unwrap();
        for r in 0..2 {
            assert!(grad.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::<f32>::zeros(1, 10);
        assert!(matches!(
            softmax_xent(&logits, &[10]),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn argmax_tie_lowest_index() {
        let m = Matrix::from_vec(2, 3, vec![1.0f32, 3.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
