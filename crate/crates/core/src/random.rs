//! Seeded random matrices for the oracle suites and property tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::spd::SpdMatrix;

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    loop {
        let g = gaussian_matrix(rng, n, n);
        let qr = g.qr();
        let r = qr.r();
        if r.diagonal().iter().all(|d| d.abs() > 1e-6) {
            return qr.q();
        }
    }
}

fn uniform_diag<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    let dist = Uniform::new_inclusive(lo, hi).expect("lo <= hi");
    DVector::from_fn(n, |_, _| dist.sample(rng))
}

/// Symmetric positive definite with eigenvalues drawn uniformly from `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SpdMatrix {
    let q = random_orthogonal(rng, n);
    let d = DMatrix::from_diagonal(&uniform_diag(rng, n, lo, hi));
    SpdMatrix::new_pd(&q * d * q.transpose()).expect("eigenvalues are positive")
}

/// Nonsingular matrix with singular values drawn uniformly from `[lo, hi]`.
pub fn random_nonsingular<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let u = random_orthogonal(rng, n);
    let v = random_orthogonal(rng, n);
    let s = DMatrix::from_diagonal(&uniform_diag(rng, n, lo, hi));
    u * s * v.transpose()
}

/// `GᵀG` with `G` of shape `rank × n`: PSD, singular whenever `rank < n`.
pub fn random_psd_rank<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rank, n);
    g.transpose() * g
}

/// A random PSD forgetting matrix whose largest eigenvalue is `fraction` times the
/// smallest eigenvalue of `p_inv`, so `P⁻¹ − F ≻ 0` holds by construction whenever
/// `fraction < 1`. `rank == 0` gives the zero matrix.
pub fn scaled_forgetting<R: Rng + ?Sized>(
    rng: &mut R,
    p_inv: &SpdMatrix,
    rank: usize,
    fraction: f64,
) -> DMatrix<f64> {
    let n = p_inv.dim();
    if rank == 0 {
        return DMatrix::zeros(n, n);
    }
    let g = random_psd_rank(rng, n, rank);
    let gmax = g.clone().symmetric_eigen().eigenvalues.max();
    let pmin = p_inv.matrix().clone().symmetric_eigen().eigenvalues.min();
    crate::spd::symmetrize(&(g * (fraction * pmin / gmax)))
}
