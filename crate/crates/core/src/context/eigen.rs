//! Symmetric eigendecomposition specialised to projecting one vector.
//!
//! Hotelling's statistic only needs the eigenvalues of the pooled covariance
//! and the coordinates of the mean difference in its eigenbasis, so the
//! orthogonal factors are applied to that vector and never formed.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 64;

/// Eigenvalues of the symmetric `n × n` matrix `a` (row-major, overwritten)
/// and the coordinates `Vᵀ v` of `v` in the matching eigenvectors, written
/// back into `v`.
pub(crate) fn eigen_project(a: &mut [f64], n: usize, v: &mut [f64]) -> Result<Vec<f64>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(v.len(), n);
    // an exactly zero row is an eigenvector e_i with eigenvalue 0
    let live: Vec<usize> = (0..n)
        .filter(|&i| a[i * n..(i + 1) * n].iter().any(|&x| x != 0.0))
        .collect();
    if live.len() == n {
        let (mut diag, mut off) = tridiagonalize(a, n, v);
        ql_implicit(&mut diag, &mut off, v)?;
        return Ok(diag);
    }
    let m = live.len();
    let mut sub = vec![0.0; m * m];
    for (r, &i) in live.iter().enumerate() {
        for (c, &j) in live.iter().enumerate() {
            sub[r * m + c] = a[i * n + j];
        }
    }
    let mut w: Vec<f64> = live.iter().map(|&i| v[i]).collect();
    let (mut diag, mut off) = tridiagonalize(&mut sub, m, &mut w);
    ql_implicit(&mut diag, &mut off, &mut w)?;
    let mut vals = vec![0.0; n];
    let mut coords = v.to_vec();
    for (r, &i) in live.iter().enumerate() {
        vals[i] = diag[r];
        coords[i] = w[r];
    }
    v.copy_from_slice(&coords);
    Ok(vals)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Householder vector `u` (written into `u`) with `(I − β u uᵀ) x = α e₁`.
/// Stores `α` (or `x₀` when `x` is negligible) in `off` and returns `β`.
fn householder(x: &[f64], tiny: f64, u: &mut [f64], off: &mut f64) -> Option<f64> {
    let alpha_sq = dot(x, x);
    let scale = alpha_sq.sqrt();
    // columns at round-off level are taken as already reduced
    if scale <= tiny {
        *off = x[0];
        return None;
    }
    let x0 = x[0];
    let alpha = if x0 > 0.0 { -scale } else { scale };
    u.copy_from_slice(x);
    u[0] -= alpha;
    *off = alpha;
    let utu = alpha_sq - x0 * x0 + u[0] * u[0];
    Some(2.0 / utu)
}

/// Householder reduction `A = Q T Qᵀ`; returns the diagonal and the
/// superdiagonal of `T` (last entry 0) and replaces `v` by `Qᵀ v`.
///
/// Both triangles are kept, so row `k` doubles as column `k`. Each pass over
/// the trailing block applies the current rank-2 update and forms the next
/// `β A u` product row by row.
fn tridiagonalize(a: &mut [f64], n: usize, v: &mut [f64]) -> (Vec<f64>, Vec<f64>) {
    let mut off = vec![0.0; n];
    if n < 2 {
        return (a.to_vec(), off);
    }
    let tiny = f64::EPSILON * dot(a, a).sqrt();
    let (mut u, mut u_next) = (vec![0.0; n], vec![0.0; n]);
    let (mut p, mut p_next) = (vec![0.0; n], vec![0.0; n]);
    let mut beta = None;
    if n > 2 {
        beta = householder(&a[1..n], tiny, &mut u[1..n], &mut off[0]);
        if let Some(b) = beta {
            for i in 1..n {
                p[i] = b * dot(&a[i * n + 1..i * n + n], &u[1..n]);
            }
        }
    }
    for k in 0..n.saturating_sub(2) {
        let lo = k + 1;
        let nlo = lo + 1;
        let has_next = nlo + 1 < n;
        let mut next = None;
        if let Some(b) = beta {
            let kk = 0.5 * b * dot(&u[lo..n], &p[lo..n]);
            for i in lo..n {
                p[i] -= kk * u[i];
            }
            update_row(a, n, lo, lo, &u, &p);
            let proj = b * dot(&u[lo..n], &v[lo..n]);
            for i in lo..n {
                v[i] -= proj * u[i];
            }
            if has_next {
                next = householder(
                    &a[lo * n + nlo..lo * n + n],
                    tiny,
                    &mut u_next[nlo..n],
                    &mut off[lo],
                );
            }
            for i in nlo..n {
                update_row(a, n, i, lo, &u, &p);
                if let Some(b2) = next {
                    p_next[i] = b2 * dot(&a[i * n + nlo..i * n + n], &u_next[nlo..n]);
                }
            }
        } else if has_next {
            next = householder(
                &a[lo * n + nlo..lo * n + n],
                tiny,
                &mut u_next[nlo..n],
                &mut off[lo],
            );
            if let Some(b2) = next {
                for i in nlo..n {
                    p_next[i] = b2 * dot(&a[i * n + nlo..i * n + n], &u_next[nlo..n]);
                }
            }
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut p, &mut p_next);
        beta = next;
    }
    off[n - 2] = a[(n - 1) * n + (n - 2)];
    let diag = (0..n).map(|i| a[i * n + i]).collect();
    (diag, off)
}

/// `A[i, lo..] −= u_i p[lo..] + p_i u[lo..]`.
fn update_row(a: &mut [f64], n: usize, i: usize, lo: usize, u: &[f64], p: &[f64]) {
    let (ui, pi) = (u[i], p[i]);
    let row = &mut a[i * n + lo..i * n + n];
    for ((x, &uj), &pj) in row.iter_mut().zip(&u[lo..n]).zip(&p[lo..n]) {
        *x -= ui * pj + pi * uj;
    }
}

/// Implicit QL with Wilkinson-type shifts on a symmetric tridiagonal matrix;
/// every plane rotation is also applied to `v`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], v: &mut [f64]) -> Result<()> {
    let n = d.len();
    let norm = d
        .iter()
        .zip(e.iter())
        .fold(0.0f64, |m, (a, b)| m.max(a.abs() + b.abs()));
    // off-diagonals this small perturb eigenvalues by at most eps·‖T‖
    let floor = f64::EPSILON * norm;
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS {
                return Err(Error::NonFinite(
                    "eigenvalue iteration did not converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let f = v[i + 1];
                v[i + 1] = s * v[i] + c * f;
                v[i] = c * v[i] - s * f;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}
