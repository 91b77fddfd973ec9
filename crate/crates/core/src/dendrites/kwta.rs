use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::scalar::Scalar;

/// Number of winners per sample, given directly or as a fraction of the width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KwtaConfig {
    K(usize),
    Density(f64),
}

impl KwtaConfig {
    /// Resolves to a winner count; a density maps to `round(density * width)`, at least 1.
    pub fn k(&self, width: usize) -> Result<usize> {
        let k = match *self {
            KwtaConfig::K(k) => k,
            KwtaConfig::Density(d) => {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(Error::OutOfRange {
                        what: "activation density",
                        value: d.to_string(),
                        range: "(0, 1]".into(),
                    });
                }
                ((d * width as f64).round() as usize).max(1)
            }
        };
        if k == 0 || k > width {
            return Err(Error::OutOfRange {
                what: "kWTA k",
                value: k.to_string(),
                range: format!("[1, {width}]"),
            });
        }
        Ok(k)
    }
}

/// Descending by value, ascending by index on ties.
fn rank_order<T: Scalar>(row: &[T], a: usize, b: usize) -> Ordering {
    row[b]
        .partial_cmp(&row[a])
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Marks the `k` winners of one row; ties go to the lowest index.
pub(crate) fn winners_of_row<T: Scalar>(
    row: &[T],
    k: usize,
    scratch: &mut Vec<usize>,
    out: &mut [bool],
) {
    out.iter_mut().for_each(|w| *w = false);
    if k >= row.len() {
        out.iter_mut().for_each(|w| *w = true);
        return;
    }
    scratch.clear();
    scratch.extend(0..row.len());
    scratch.select_nth_unstable_by(k - 1, |&a, &b| rank_order(row, a, b));
    for &i in &scratch[..k] {
        out[i] = true;
    }
}

/// Keeps the `k` largest entries of every row verbatim and zeroes the rest.
/// Returns the output and the row-major winner flags.
pub fn kwta_with_winners<T: Scalar>(y: &Matrix<T>, k: usize) -> Result<(Matrix<T>, Vec<bool>)> {
    let width = y.cols();
    if k == 0 || k > width {
        return Err(Error::OutOfRange {
            what: "kWTA k",
            value: k.to_string(),
            range: format!("[1, {width}]"),
        });
    }
    let mut out = Matrix::zeros(y.rows(), width);
    let mut winners = vec![false; y.len()];
    let mut scratch = Vec::with_capacity(width);
    for s in 0..y.rows() {
        let row = y.row(s);
        let w = &mut winners[s * width..(s + 1) * width];
        winners_of_row(row, k, &mut scratch, w);
        for ((o, &v), &win) in out.row_mut(s).iter_mut().zip(row).zip(w.iter()) {
            if win {
                *o = v;
            }
        }
    }
    Ok((out, winners))
}

pub fn kwta<T: Scalar>(y: &Matrix<T>, cfg: KwtaConfig) -> Result<Matrix<T>> {
    let k = cfg.k(y.cols())?;
    Ok(kwta_with_winners(y, k)?.0)
}

/// Gap between the k-th and (k+1)-th largest value of each row, minimised over
/// rows. `None` when every unit wins.
pub fn kwta_margin<T: Scalar>(y: &Matrix<T>, k: usize) -> Option<f64> {
    if k >= y.cols() {
        return None;
    }
    let mut best = f64::INFINITY;
    for row in y.iter_rows() {
        let mut sorted: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        best = best.min(sorted[k - 1] - sorted[k]);
    }
    Some(best)
}
