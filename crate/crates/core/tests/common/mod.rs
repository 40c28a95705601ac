//! Test-side reference implementations, written directly from the defining
//! formulas and sharing no code with the library's recursions or batch sums.
#![allow(dead_code)]

use kfls_core::KflsHistory;
use nalgebra::{DMatrix, DVector};

/// A KFLS problem copied out into plain matrices.
pub struct Problem {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub gamma_inv: Vec<DMatrix<f64>>,
    pub f: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub p0_inv: DMatrix<f64>,
}

impl Problem {
    pub fn from_history(h: &KflsHistory) -> Self {
        let steps = h.measurements.len();
        let mats: Vec<_> = (0..steps).map(|i| h.model.matrices(i).unwrap()).collect();
        Problem {
            a: mats.iter().map(|m| m.a.clone()).collect(),
            b: mats.iter().map(|m| m.b.clone()).collect(),
            c: mats.iter().map(|m| m.c.clone()).collect(),
            u: h.inputs.as_slice().to_vec(),
            y: h.measurements.clone(),
            gamma_inv: h
                .gammas
                .iter()
                .map(|g| g.matrix().clone().try_inverse().unwrap())
                .collect(),
            f: h.forgetting.clone(),
            x0: h.x0.clone(),
            p0_inv: h.p0.matrix().clone().try_inverse().unwrap(),
        }
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    /// States `x_0..x_end` of the trajectory through `x_end = x`, stepped backward
    /// with `x_j = A_j⁻¹ (x_{j+1} − B_j u_j)`.
    pub fn backward(&self, end: usize, x: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut s = vec![DVector::zeros(self.n()); end + 1];
        s[end] = x.clone();
        for j in (0..end).rev() {
            let a_inv = self.a[j].clone().try_inverse().unwrap();
            s[j] = a_inv * (&s[j + 1] - &self.b[j] * &self.u[j]);
        }
        s
    }

    /// `J_k(x)` with the given anchor estimates `x̂_0..x̂_k`.
    pub fn cost(&self, k: usize, x: &DVector<f64>, anchors: &[DVector<f64>]) -> f64 {
        let s = self.backward(k + 1, x);
        let mut j = 0.0;
        for i in 0..=k {
            let r = &self.y[i] - &self.c[i] * &s[i + 1];
            j += (r.transpose() * &self.gamma_inv[i] * &r)[(0, 0)];
            let d = &s[i] - &anchors[i];
            j -= (d.transpose() * &self.f[i] * &d)[(0, 0)];
        }
        let d0 = &s[0] - &self.x0;
        j + (d0.transpose() * &self.p0_inv * &d0)[(0, 0)]
    }

    /// `(H, b)` of `J_k(x) = xᵀHx + 2bᵀx + c`, recovered by polarization from cost
    /// evaluations at `0`, `±e_i` and `e_i + e_j`. Exact for a quadratic up to
    /// rounding.
    pub fn quadratic(&self, k: usize, anchors: &[DVector<f64>]) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let e = |i: usize| DVector::from_fn(n, |r, _| if r == i { 1.0 } else { 0.0 });
        let c = self.cost(k, &DVector::zeros(n), anchors);
        let plus: Vec<f64> = (0..n).map(|i| self.cost(k, &e(i), anchors)).collect();
        let minus: Vec<f64> = (0..n).map(|i| self.cost(k, &-e(i), anchors)).collect();
        let b = DVector::from_fn(n, |i, _| (plus[i] - minus[i]) / 4.0);
        let h = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                (plus[i] + minus[i] - 2.0 * c) / 2.0
            } else {
                (self.cost(k, &(e(i) + e(j)), anchors) - plus[i] - plus[j] + c) / 2.0
            }
        });
        (h, b)
    }

    /// Chains `x̂_{i+1} = argmin J_i` from `x̂_0`, returning `x̂_0..x̂_{k+1}` and the
    /// final `H_k`.
    pub fn chained_minimizers(&self, k: usize) -> (Vec<DVector<f64>>, DMatrix<f64>) {
        let mut anchors = vec![self.x0.clone()];
        let mut last_h = DMatrix::zeros(self.n(), self.n());
        for i in 0..=k {
            let (h, b) = self.quadratic(i, &anchors);
            let x = -h.clone().lu().solve(&b).unwrap();
            anchors.push(x);
            last_h = h;
        }
        (anchors, last_h)
    }
}

/// `‖a − b‖ / max(‖b‖, 1e-12)`.
pub fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

pub fn rel_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Predict/update Kalman step written out longhand.
pub fn textbook_kf(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let xp = a * x + b * u;
    let pp = a * p * a.transpose() + sigma;
    let s = c * &pp * c.transpose() + gamma;
    let k = &pp * c.transpose() * s.try_inverse().unwrap();
    let x_new = &xp + &k * (y - c * &xp);
    let p_new = &pp - &k * c * &pp;
    (x_new, p_new)
}

/// Eigenvalue-based definiteness class: 0 PD, 1 PSD singular, 2 indefinite.
pub fn eigen_class(m: &DMatrix<f64>, tol: f64, scale: f64) -> u8 {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen().eigenvalues;
    let thr = tol * scale.max(eig.amax());
    if eig.iter().any(|v| *v < -thr) {
        2
    } else if eig.iter().all(|v| *v > thr) {
        0
    } else {
        1
    }
}
