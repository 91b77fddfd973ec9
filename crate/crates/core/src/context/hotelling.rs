use super::eigen::eigen_project;
use super::stats::Prototype;
use crate::error::{Error, Result};

/// Threshold on the F-scaled statistic above which two sample sets are
/// declared different.
pub const DEFAULT_P_THRESHOLD: f64 = 0.9;
/// Eigenvalues below this fraction of the largest are left out of the pseudo-inverse.
pub const EIGEN_RTOL: f64 = 1e-6;
/// Largest tolerated fraction of the mean difference outside the covariance range.
pub const NULL_SPACE_RTOL: f64 = 1e-6;

/// Eigenvalues up to `dim · ε · λmax` are indistinguishable from zero and
/// bound the numerical null space of the pooled covariance.
fn range_cutoff(dim: usize, lmax: f64) -> f64 {
    dim as f64 * f64::EPSILON * lmax
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HotellingResult {
    pub t2: f64,
    pub f: f64,
    /// Number of eigenvalues kept in the pseudo-inverse.
    pub rank: usize,
    /// `‖(I − R)δ‖ / ‖δ‖` with `R` the projector onto the numerical range
    /// of the pooled covariance (0 when `δ = 0`).
    pub null_fraction: f64,
    pub matched: bool,
}

struct Pooled {
    k: f64,
    coef: f64,
    delta: Vec<f64>,
    sigma: Vec<f64>,
}

fn pooled(x: &Prototype, y: &Prototype) -> Result<Pooled> {
    if x.dim() != y.dim() {
        return Err(Error::shape("hotelling", x.dim(), y.dim()));
    }
    for c in [x, y] {
        if c.count() < 2 {
            return Err(Error::OutOfRange {
                what: "sample count for hotelling test",
                value: c.count().to_string(),
                range: ">= 2".into(),
            });
        }
    }
    let (mx, my) = match (x.m2(), y.m2()) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Config(
                "hotelling test needs covariance statistics".into(),
            ))
        }
    };
    let d = x.dim();
    let total = x.count() + y.count();
    if d + 1 >= total {
        return Err(Error::DegenerateDof { dim: d, total });
    }
    let (nx, ny) = (x.count() as f64, y.count() as f64);
    let n = nx + ny;
    let denom = n - 2.0;
    let sigma = mx.iter().zip(my).map(|(a, b)| (a + b) / denom).collect();
    let delta = x.mean().iter().zip(y.mean()).map(|(a, b)| a - b).collect();
    Ok(Pooled {
        k: nx * ny / n,
        coef: (n - d as f64 - 1.0) / (d as f64 * (n - 2.0)),
        delta,
        sigma,
    })
}

/// Two-sample Hotelling t² between the clusters `x` and `y`, converted to
/// the F scale and compared with `p_threshold`.
///
/// A mean difference with more than [`NULL_SPACE_RTOL`] of its norm outside
/// the range of the pooled covariance never matches.
pub fn hotelling(x: &Prototype, y: &Prototype, p_threshold: f64) -> Result<HotellingResult> {
    let Pooled {
        k,
        coef,
        delta,
        mut sigma,
    } = pooled(x, y)?;
    let d = delta.len();
    let delta_norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut z = delta;
    let eig = eigen_project(&mut sigma, d, &mut z)?;
    let lmax = eig.iter().copied().fold(0.0f64, f64::max);
    let (keep, null) = (EIGEN_RTOL * lmax, range_cutoff(d, lmax));
    let (mut quad, mut null_sq, mut rank) = (0.0, 0.0, 0usize);
    for (&lam, &zi) in eig.iter().zip(&z) {
        if lmax > 0.0 && lam > keep {
            quad += zi * zi / lam;
            rank += 1;
        }
        if !(lmax > 0.0 && lam > null) {
            null_sq += zi * zi;
        }
    }
    let null_fraction = if delta_norm > 0.0 {
        null_sq.sqrt() / delta_norm
    } else {
        0.0
    };
    let t2 = k * quad;
    let f = coef * t2;
    Ok(HotellingResult {
        t2,
        f,
        rank,
        null_fraction,
        matched: null_fraction <= NULL_SPACE_RTOL && f <= p_threshold,
    })
}

/// Same decision as [`hotelling`], skipping the eigendecomposition when a
/// lower bound on `f` already exceeds the threshold.
pub fn hotelling_match(x: &Prototype, y: &Prototype, p_threshold: f64) -> Result<bool> {
    let pool = pooled(x, y)?;
    for dim in KRYLOV_DIMS {
        let bound = pool.coef * pool.k * pinv_lower_bound(&pool.sigma, &pool.delta, dim);
        if bound > p_threshold * (1.0 + 1e-6) {
            return Ok(false);
        }
    }
    Ok(hotelling(x, y, p_threshold)?.matched)
}

/// Krylov dimensions tried in turn by the early rejection.
const KRYLOV_DIMS: [usize; 2] = [4, 16];

fn matvec(a: &[f64], v: &[f64]) -> Vec<f64> {
    a.chunks_exact(v.len()).map(|row| dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower bound on `δᵀΣ⁺δ` for the truncated pseudo-inverse, from `O(d²)` work.
///
/// Let `P` project onto the kept eigenspace and `c ≥ EIGEN_RTOL · λmax`.
/// For any `u`, Cauchy–Schwarz on `w = Σu` gives
/// `δᵀΣ⁺δ ≥ (wᵀPδ)² / wᵀPΣPw` with `wᵀPδ ≥ uᵀΣδ − c‖u‖‖δ‖` and
/// `wᵀPΣPw ≤ uᵀΣ³u + c³‖u‖²`. `u` is the Krylov-space maximiser of
/// `(uᵀΣδ)² / uᵀΣ³u`, which tends to `Σ⁻²δ`.
fn pinv_lower_bound(sigma: &[f64], delta: &[f64], krylov_dim: usize) -> f64 {
    let norm_delta = dot(delta, delta).sqrt();
    if norm_delta == 0.0 {
        return 0.0;
    }
    // ‖Σ‖_F bounds λmax
    let frob = dot(sigma, sigma).sqrt();
    let c = EIGEN_RTOL * frob * (1.0 + 1e-6);

    // orthonormal Krylov basis Q and S = ΣQ
    let mut q: Vec<Vec<f64>> = vec![delta.iter().map(|v| v / norm_delta).collect()];
    let mut s: Vec<Vec<f64>> = Vec::new();
    while s.len() < krylov_dim {
        let sv = matvec(sigma, q.last().unwrap());
        let mut next = sv.clone();
        s.push(sv);
        for _ in 0..2 {
            for qi in &q {
                let h = dot(qi, &next);
                next.iter_mut().zip(qi).for_each(|(n, qv)| *n -= h * qv);
            }
        }
        let len = dot(&next, &next).sqrt();
        if len <= 1e-10 * frob {
            break;
        }
        q.push(next.into_iter().map(|v| v / len).collect());
    }
    let m = s.len();
    q.truncate(m);

    // (G + εI) y = b with b = Sᵀδ and G = SᵀΣS
    let r: Vec<Vec<f64>> = s.iter().map(|sj| matvec(sigma, sj)).collect();
    let b: Vec<f64> = s.iter().map(|sj| dot(sj, delta)).collect();
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            g[i * m + j] = dot(&s[i], &r[j]);
        }
    }
    let trace: f64 = (0..m).map(|i| g[i * m + i]).sum();
    let eps = c.powi(3) + 1e-12 * trace / m as f64;
    for i in 0..m {
        g[i * m + i] += eps;
    }
    let y = match cholesky_solve(&mut g, m, &b) {
        Some(y) => y,
        None => return 0.0,
    };

    // the bound holds for any u, so evaluate it directly at u = Qy
    let mut u = vec![0.0; delta.len()];
    for (yi, qi) in y.iter().zip(&q) {
        u.iter_mut().zip(qi).for_each(|(uv, qv)| *uv += yi * qv);
    }
    let su = matvec(sigma, &u);
    let ssu = matvec(sigma, &su);
    let norm_u = dot(&u, &u).sqrt();
    let norm_su = dot(&su, &su).sqrt();
    let slack = 1e-9 * norm_su * norm_delta;
    let num = dot(&su, delta).abs() - c * norm_u * norm_delta - slack;
    let den = dot(&su, &ssu) + c.powi(3) * norm_u * norm_u + 1e-9 * frob * norm_su * norm_su;
    if num <= 0.0 || den <= 0.0 {
        return 0.0;
    }
    num * num / den
}

/// Solves `A y = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], m: usize, b: &[f64]) -> Option<Vec<f64>> {
    for j in 0..m {
        let mut diag = a[j * m + j];
        for k in 0..j {
            diag -= a[j * m + k] * a[j * m + k];
        }
        if diag.is_nan() || diag <= 0.0 {
            return None;
        }
        let l = diag.sqrt();
        a[j * m + j] = l;
        for i in j + 1..m {
            let mut v = a[i * m + j];
            for k in 0..j {
                v -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = v / l;
        }
    }
    let mut y = b.to_vec();
    for i in 0..m {
        for k in 0..i {
            y[i] -= a[i * m + k] * y[k];
        }
        y[i] /= a[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            y[i] -= a[k * m + i] * y[k];
        }
        y[i] /= a[i * m + i];
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(rows: &[Vec<f64>]) -> Prototype {
        Prototype::from_samples(&Matrix::from_rows(rows).unwrap(), true).unwrap()
    }

    fn gaussian_rows(
        rng: &mut ChaCha8Rng,
        n: usize,
        d: usize,
        mean: f64,
        sd: f64,
    ) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        // Box–Muller
                        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                        let u2: f64 = rng.gen();
                        mean + sd
                            * (-2.0 * u1.ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_means_match_with_zero_statistic() {
        let x = cluster(&[
            vec![0.0, 1.0],
            vec![2.0, 3.0],
            vec![1.0, 0.0],
            vec![1.0, 4.0],
        ]);
        let y = cluster(&[
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![0.0, 2.0],
            vec![2.0, 2.0],
        ]);
        let r = hotelling(&x, &y, DEFAULT_P_THRESHOLD).unwrap();
        assert_eq!(r.t2, 0.0);
        assert_eq!(r.f, 0.0);
        assert!(r.matched);
        assert!(hotelling_match(&x, &y, DEFAULT_P_THRESHOLD).unwrap());
    }

    #[test]
    fn distinct_constant_batches_do_not_match() {
        let x = cluster(&vec![vec![0.0, 0.0]; 5]);
        let y = cluster(&vec![vec![1.0, 1.0]; 5]);
        let r = hotelling(&x, &y, DEFAULT_P_THRESHOLD).unwrap();
        assert_eq!(r.t2, 0.0);
        assert_eq!(r.null_fraction, 1.0);
        assert!(!r.matched);
    }

    #[test]
    fn difference_outside_range_does_not_match() {
        // variance only along the first axis, mean shift only along the second
        let x = cluster(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]);
        let y = cluster(&[vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0]]);
        assert!(!hotelling(&x, &y, DEFAULT_P_THRESHOLD).unwrap().matched);
        assert!(!hotelling_match(&x, &y, DEFAULT_P_THRESHOLD).unwrap());
    }

    #[test]
    fn degenerate_degrees_of_freedom() {
        let x = cluster(&[vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.5]]);
        let y = cluster(&[vec![0.5, 1.0, 2.0], vec![1.0, 2.0, 0.0]]);
        assert!(matches!(
            hotelling(&x, &y, DEFAULT_P_THRESHOLD),
            Err(Error::DegenerateDof { dim: 3, total: 4 })
        ));
        assert!(hotelling(
            &cluster(&[vec![1.0]]),
            &cluster(&[vec![1.0], vec![2.0]]),
            0.9
        )
        .is_err());
    }

    fn pooled_t_squared(a: &[f64], b: &[f64]) -> f64 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (ma, mb) = (mean(a), mean(b));
        let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let sp2 = (ss(a, ma) + ss(b, mb)) / (na + nb - 2.0);
        let t = (ma - mb) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        t * t
    }

    #[test]
    fn one_dimension_is_the_pooled_t_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let na = rng.gen_range(2..30);
            let nb = rng.gen_range(2..30);
            let shift = rng.gen_range(-2.0..2.0);
            let a: Vec<f64> = (0..na).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0) + shift).collect();
            let rows = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
            let r = hotelling(&cluster(&rows(&a)), &cluster(&rows(&b)), 0.9).unwrap();
            let oracle = pooled_t_squared(&a, &b);
            assert!(
                (r.t2 - oracle).abs() <= 1e-9 * oracle.max(1.0),
                "{} vs {oracle}",
                r.t2
            );
            // the d = 1 coefficient is exactly 1
            assert!((r.f - oracle).abs() <= 1e-9 * oracle.max(1.0));
        }
    }

    #[test]
    fn symmetric_under_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let d = rng.gen_range(1..6);
            let x = cluster(&gaussian_rows(&mut rng, 12, d, 0.0, 1.0));
            let y = cluster(&gaussian_rows(&mut rng, 9, d, 0.3, 1.0));
            let a = hotelling(&x, &y, 0.9).unwrap();
            let b = hotelling(&y, &x, 0.9).unwrap();
            assert!((a.t2 - b.t2).abs() <= 1e-12 * a.t2.max(1.0));
            assert_eq!(a.matched, b.matched);
        }
    }

    #[test]
    fn early_rejection_agrees_with_full_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut rejected = 0;
        for i in 0..300 {
            let d = rng.gen_range(1..8);
            let gap = [0.0, 0.05, 0.2, 1.0, 5.0][i % 5];
            let (nx, ny) = (rng.gen_range(10..40), rng.gen_range(10..40));
            let x = cluster(&gaussian_rows(&mut rng, nx, d, 0.0, 1.0));
            let y = cluster(&gaussian_rows(&mut rng, ny, d, gap, 1.0));
            let full = hotelling(&x, &y, 0.9).unwrap().matched;
            assert_eq!(hotelling_match(&x, &y, 0.9).unwrap(), full);
            rejected += usize::from(!full);
        }
        assert!(rejected > 50 && rejected < 290);
    }

    #[test]
    fn lower_bound_never_exceeds_truncated_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut tight = 0;
        for i in 0..200 {
            let d = rng.gen_range(1..24);
            let rank = rng.gen_range(1..=d);
            let basis: Vec<f64> = (0..rank * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scales: Vec<f64> = (0..rank)
                .map(|j| 10f64.powi(-((j * 9 / rank) as i32)))
                .collect();
            let mut sigma = vec![0.0; d * d];
            for r in 0..rank {
                for a in 0..d {
                    for b in 0..d {
                        sigma[a * d + b] += scales[r] * basis[r * d + a] * basis[r * d + b];
                    }
                }
            }
            let delta: Vec<f64> = if i % 2 == 0 {
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            } else {
                // inside the range
                (0..d)
                    .map(|a| (0..rank).map(|r| basis[r * d + a]).sum())
                    .collect()
            };
            let bound = pinv_lower_bound(&sigma, &delta, 16);
            let (mut a, mut z) = (sigma.clone(), delta.clone());
            let eig = eigen_project(&mut a, d, &mut z).unwrap();
            let lmax = eig.iter().copied().fold(0.0, f64::max);
            let exact: f64 = eig
                .iter()
                .zip(&z)
                .filter(|(&l, _)| l > EIGEN_RTOL * lmax)
                .map(|(l, zi)| zi * zi / l)
                .sum();
            assert!(bound <= exact * (1.0 + 1e-9), "{bound} > {exact}");
            tight += usize::from(bound >= 0.5 * exact);
        }
        assert!(tight > 50, "{tight}");
    }

    #[test]
    fn early_rejection_agrees_on_faint_directions() {
        // a few coordinates carry variance far below the truncation cutoff
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rejected = 0;
        for i in 0..200 {
            let d = rng.gen_range(3..10);
            let gap = [0.0, 0.02, 0.1, 0.5][i % 4];
            let faint = rng.gen_range(1..d);
            let mut draw = |n: usize, shift: f64| {
                let mut rows = gaussian_rows(&mut rng, n, d, shift, 1.0);
                for r in rows.iter_mut() {
                    for v in r[..faint].iter_mut() {
                        *v *= 1e-5;
                    }
                }
                rows
            };
            let x = cluster(&draw(30, 0.0));
            let y = cluster(&draw(25, gap));
            let full = hotelling(&x, &y, 0.9).unwrap();
            assert!(full.null_fraction < 1e-9);
            assert_eq!(hotelling_match(&x, &y, 0.9).unwrap(), full.matched);
            rejected += usize::from(!full.matched);
        }
        assert!(rejected > 20 && rejected < 190);
    }
}
