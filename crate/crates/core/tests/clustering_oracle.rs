//! Online clustering checked against a straightforward re-implementation that
//! keeps every raw sample and inverts the pooled covariance through a library
//! eigendecomposition.

use adnet::context::{PrototypeStore, DEFAULT_P_THRESHOLD};
use adnet::nn::Matrix;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian with standard deviation `sd` inside the span of `basis` (rows), offset by `mean`.
fn subspace_batch(
    rng: &mut ChaCha8Rng,
    n: usize,
    mean: &[f64],
    basis: &[Vec<f64>],
    sd: f64,
) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut x = mean.to_vec();
            for b in basis {
                let c = sd * normal(rng);
                for (xi, bi) in x.iter_mut().zip(b) {
                    *xi += c * bi;
                }
            }
            x
        })
        .collect()
}

fn orthonormal_basis(rng: &mut ChaCha8Rng, rank: usize, d: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < rank {
        let mut v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(v.into_iter().map(|x| x / norm).collect());
    }
    basis
}

fn oracle_match(x: &[Vec<f64>], y: &[Vec<f64>], p: f64) -> bool {
    let d = x[0].len();
    let to_m = |rows: &[Vec<f64>]| DMatrix::from_fn(rows.len(), d, |r, c| rows[r][c]);
    let (mx, my) = (to_m(x), to_m(y));
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    if (d + 1) as f64 >= nx + ny {
        return true;
    }
    let mean = |m: &DMatrix<f64>| DVector::from_fn(d, |c, _| m.column(c).mean());
    let (xb, yb) = (mean(&mx), mean(&my));
    let cov = |m: &DMatrix<f64>, mu: &DVector<f64>| {
        let mut c = m.clone();
        for r in 0..c.nrows() {
            for k in 0..d {
                c[(r, k)] -= mu[k];
            }
        }
        c.transpose() * c / (m.nrows() as f64 - 1.0)
    };
    let sigma = (cov(&mx, &xb) * (nx - 1.0) + cov(&my, &yb) * (ny - 1.0)) / (nx + ny - 2.0);
    let eig = sigma.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let mut pinv = DMatrix::zeros(d, d);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && lam > 1e-6 * lmax {
            let v = eig.eigenvectors.column(i);
            pinv += v * v.transpose() / lam;
        }
    }
    let delta = &xb - &yb;
    let mut in_range = DVector::zeros(d);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lmax > 0.0 && lam > d as f64 * f64::EPSILON * lmax {
            let v = eig.eigenvectors.column(i);
            in_range += v * v.dot(&delta);
        }
    }
    let resid = (&delta - in_range).norm();
    if resid > 1e-6 * delta.norm() {
        return false;
    }
    let t2 = nx * ny / (nx + ny) * (delta.transpose() * &pinv * &delta)[(0, 0)];
    let f = (nx + ny - d as f64 - 1.0) / (d as f64 * (nx + ny - 2.0)) * t2;
    f <= p
}

fn oracle_cluster(stream: &[Vec<Vec<f64>>], p: f64) -> Vec<usize> {
    let mut clusters: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut out = Vec::new();
    for batch in stream {
        match clusters.iter().position(|y| oracle_match(batch, y, p)) {
            Some(j) => {
                clusters[j].extend(batch.iter().cloned());
                out.push(j);
            }
            None => {
                clusters.push(batch.clone());
                out.push(clusters.len() - 1);
            }
        }
    }
    out
}

#[test]
fn two_well_separated_gaussians_form_two_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (d, rank) = (20, 2);
    let basis = orthonormal_basis(&mut rng, rank, d);
    let m0 = vec![0.0; d];
    let dir: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    let m1: Vec<f64> = dir.iter().map(|x| 10.0 * x / norm).collect();

    let mut stream = Vec::new();
    let mut source = Vec::new();
    for i in 0..40 {
        let s = (i / 5) % 2;
        let mean = if s == 0 { &m0 } else { &m1 };
        stream.push(subspace_batch(&mut rng, 32, mean, &basis, 0.1));
        source.push(s);
    }

    let mut store = PrototypeStore::new(d);
    let got: Vec<usize> = stream
        .iter()
        .map(|b| {
            store
                .cluster_batch(&Matrix::from_rows(b).unwrap())
                .unwrap()
                .cluster
        })
        .collect();
    assert_eq!(got, oracle_cluster(&stream, DEFAULT_P_THRESHOLD));
    assert_eq!(store.len(), 2);
    assert_eq!(got, source);
}

#[test]
fn random_streams_agree_with_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..12 {
        let d = rng.gen_range(2..7);
        let rank = rng.gen_range(1..=d);
        let basis = orthonormal_basis(&mut rng, rank, d);
        let means: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        let stream: Vec<Vec<Vec<f64>>> = (0..25)
            .map(|i| {
                let n = rng.gen_range(3..20);
                subspace_batch(&mut rng, n, &means[(i / 4) % 3], &basis, 0.3)
            })
            .collect();
        let mut store = PrototypeStore::new(d);
        let got: Vec<usize> = stream
            .iter()
            .map(|b| {
                store
                    .cluster_batch(&Matrix::from_rows(b).unwrap())
                    .unwrap()
                    .cluster
            })
            .collect();
        assert_eq!(
            got,
            oracle_cluster(&stream, DEFAULT_P_THRESHOLD),
            "trial {trial}"
        );
    }
}
