//! Discrete-time linear time-varying systems and their state transition machinery.
//!
//! The model is `x_{k+1} = A_k x_k + B_k u_k`, `y_k = C_k x_k`. Transition matrices
//! `Φ_{k,i}` run in both time directions: forward as products of `A_j`, backward as
//! the inverse of the forward product.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::spd::{checked_inverse, SINGULAR_TOL};

/// `(A_k, B_k, C_k)` at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

type Provider = Arc<dyn Fn(usize) -> Result<SystemMatrices> + Send + Sync>;

/// An LTV model with fixed state, input, and output dimensions.
#[derive(Clone)]
pub struct LtvModel {
    n: usize,
    m: usize,
    p: usize,
    provider: Provider,
}

impl fmt::Debug for LtvModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LtvModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

fn shape_of(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

impl LtvModel {
    /// A time-invariant model.
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let p = c.nrows();
        let mats = SystemMatrices { a, b, c };
        check_dims(&mats, n, m, p)?;
        Ok(LtvModel {
            n,
            m,
            p,
            provider: Arc::new(move |_| Ok(mats.clone())),
        })
    }

    /// A model backed by a finite table; steps past the end are a range error.
    pub fn from_table(table: Vec<SystemMatrices>) -> Result<Self> {
        let first = table
            .first()
            .ok_or_else(|| Error::Range("empty system-matrix table".into()))?;
        let (n, m, p) = (first.a.nrows(), first.b.ncols(), first.c.nrows());
        for mats in &table {
            check_dims(mats, n, m, p)?;
        }
        let table = Arc::new(table);
        Ok(LtvModel {
            n,
            m,
            p,
            provider: Arc::new(move |k| {
                table.get(k).cloned().ok_or_else(|| {
                    Error::Range(format!(
                        "system matrices requested for step {k}, table has {}",
                        table.len()
                    ))
                })
            }),
        })
    }

    /// A model whose matrices are computed on demand. Dimensions are checked on
    /// every access.
    pub fn from_fn<F>(n: usize, m: usize, p: usize, f: F) -> Self
    where
        F: Fn(usize) -> SystemMatrices + Send + Sync + 'static,
    {
        LtvModel {
            n,
            m,
            p,
            provider: Arc::new(move |k| Ok(f(k))),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    /// `(A_k, B_k, C_k)`, with `A_k` checked for nonsingularity.
    pub fn matrices(&self, k: usize) -> Result<SystemMatrices> {
        let mats = (self.provider)(k)?;
        check_dims(&mats, self.n, self.m, self.p)?;
        check_nonsingular(&mats.a, k)?;
        Ok(mats)
    }

    pub fn a(&self, k: usize) -> Result<DMatrix<f64>> {
        self.matrices(k).map(|m| m.a)
    }

    pub fn b(&self, k: usize) -> Result<DMatrix<f64>> {
        self.matrices(k).map(|m| m.b)
    }

    pub fn c(&self, k: usize) -> Result<DMatrix<f64>> {
        self.matrices(k).map(|m| m.c)
    }

    pub fn a_inverse(&self, k: usize) -> Result<DMatrix<f64>> {
        let a = self.a(k)?;
        checked_inverse(&a, "A_k").map_err(|_| Error::SingularTransition { step: k })
    }

    /// `A_{hi-1} ··· A_{lo}` for `lo <= hi` (identity when equal).
    fn forward_product(&self, hi: usize, lo: usize) -> Result<DMatrix<f64>> {
        let mut prod = DMatrix::identity(self.n, self.n);
        for j in lo..hi {
            prod = self.a(j)? * prod;
        }
        Ok(prod)
    }

    /// The state transition matrix `Φ_{k,i}` from step `i` to step `k`.
    pub fn phi(&self, k: usize, i: usize) -> Result<TransitionMatrix> {
        let matrix = if i <= k {
            self.forward_product(k, i)?
        } else {
            // one factorization of the forward product
            let fwd = self.forward_product(i, k)?;
            checked_inverse(&fwd, "backward transition").map_err(|_| {
                Error::SingularTransition { step: k }
            })?
        };
        Ok(TransitionMatrix {
            from_step: i,
            to_step: k,
            matrix,
        })
    }

    /// `Σ_{j=i}^{k-1} Φ_{k,j+1} B_j u_j`, the accumulated input effect from step `i`
    /// to step `k`. Zero when `i == k`.
    pub fn input_stack_effect(
        &self,
        inputs: &InputHistory,
        k: usize,
        i: usize,
    ) -> Result<DVector<f64>> {
        if i > k {
            return Err(Error::Range(format!(
                "input stack requires i <= k, got i = {i}, k = {k}"
            )));
        }
        self.check_inputs(inputs)?;
        let mut sum = DVector::zeros(self.n);
        for j in i..k {
            let phi = self.phi(k, j + 1)?;
            sum += phi.matrix * self.b(j)? * inputs.get(j)?;
        }
        Ok(sum)
    }

    /// The state transition function `T_{k,i}(x)`.
    pub fn transition(
        &self,
        inputs: &InputHistory,
        k: usize,
        i: usize,
        x: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::dimension("transition state", self.n, x.len()));
        }
        use std::cmp::Ordering::*;
        match i.cmp(&k) {
            Equal => Ok(x.clone()),
            Less => Ok(self.phi(k, i)?.matrix * x + self.input_stack_effect(inputs, k, i)?),
            Greater => {
                let shifted = x - self.input_stack_effect(inputs, i, k)?;
                Ok(self.phi(k, i)?.matrix * shifted)
            }
        }
    }

    fn check_inputs(&self, inputs: &InputHistory) -> Result<()> {
        if inputs.input_dim() != self.m {
            return Err(Error::dimension(
                "input history",
                self.m,
                inputs.input_dim(),
            ));
        }
        Ok(())
    }
}

fn check_dims(mats: &SystemMatrices, n: usize, m: usize, p: usize) -> Result<()> {
    if mats.a.shape() != (n, n) {
        return Err(Error::dimension("A_k", format!("{n}x{n}"), shape_of(&mats.a)));
    }
    if mats.b.shape() != (n, m) {
        return Err(Error::dimension("B_k", format!("{n}x{m}"), shape_of(&mats.b)));
    }
    if mats.c.shape() != (p, n) {
        return Err(Error::dimension("C_k", format!("{p}x{n}"), shape_of(&mats.c)));
    }
    Ok(())
}

fn check_nonsingular(a: &DMatrix<f64>, step: usize) -> Result<()> {
    if a.nrows() == 0 {
        return Ok(());
    }
    let lu = a.clone().full_piv_lu();
    let diag = lu.u().diagonal();
    let largest = diag.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let smallest = diag.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if !(largest > 0.0) || smallest <= SINGULAR_TOL * largest {
        return Err(Error::SingularTransition { step });
    }
    Ok(())
}

/// Inputs `u_0, u_1, ...`, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    m: usize,
    inputs: Vec<DVector<f64>>,
}

impl InputHistory {
    pub fn new(m: usize, inputs: Vec<DVector<f64>>) -> Result<Self> {
        if let Some((j, u)) = inputs.iter().enumerate().find(|(_, u)| u.len() != m) {
            return Err(Error::Range(format!(
                "input u_{j} has dimension {}, expected {m}",
                u.len()
            )));
        }
        Ok(InputHistory { m, inputs })
    }

    pub fn zeros(m: usize, len: usize) -> Self {
        InputHistory {
            m,
            inputs: vec![DVector::zeros(m); len],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn get(&self, j: usize) -> Result<&DVector<f64>> {
        self.inputs.get(j).ok_or_else(|| {
            Error::Range(format!(
                "input u_{j} missing (history has {} entries)",
                self.inputs.len()
            ))
        })
    }

    pub fn push(&mut self, u: DVector<f64>) -> Result<()> {
        if u.len() != self.m {
            return Err(Error::dimension("InputHistory::push", self.m, u.len()));
        }
        self.inputs.push(u);
        Ok(())
    }

    pub fn as_slice(&self) -> &[DVector<f64>] {
        &self.inputs
    }
}

/// `Φ_{to_step, from_step}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub from_step: usize,
    pub to_step: usize,
    pub matrix: DMatrix<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    fn table_model(seed_vals: &[f64], n: usize, m: usize, steps: usize) -> LtvModel {
        let mut it = seed_vals.iter().copied().cycle();
        let table = (0..steps)
            .map(|_| {
                let g = DMatrix::from_fn(n, n, |_, _| it.next().unwrap());
                SystemMatrices {
                    a: DMatrix::identity(n, n) + g * 0.3,
                    b: DMatrix::from_fn(n, m, |_, _| it.next().unwrap()),
                    c: DMatrix::from_fn(1, n, |_, _| it.next().unwrap()),
                }
            })
            .collect();
        LtvModel::from_table(table).unwrap()
    }

    #[test]
    fn phi_identity_and_power() {
        let model = LtvModel::constant(dmatrix![2.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert_eq!(model.phi(5, 5).unwrap().matrix, dmatrix![1.0]);
        assert_eq!(model.phi(3, 0).unwrap().matrix, dmatrix![8.0]);
        assert!((model.phi(0, 3).unwrap().matrix[(0, 0)] - 0.125).abs() < 1e-15);
    }

    #[test]
    fn phi_backward_is_inverse_of_forward_product() {
        let model = table_model(&[0.4, -0.7, 0.2, 0.9, -0.1, 0.5, 0.3, -0.8, 0.6], 2, 1, 6);
        let fwd = model.a(3).unwrap() * model.a(2).unwrap() * model.a(1).unwrap() * model.a(0).unwrap();
        let back = model.phi(0, 4).unwrap().matrix;
        assert!(rel(&back, &fwd.try_inverse().unwrap()) < 1e-12);
        // definitional product of individual inverses
        let mut defn = DMatrix::identity(2, 2);
        for j in 0..4 {
            defn *= model.a(j).unwrap().try_inverse().unwrap();
        }
        assert!(rel(&back, &defn) < 1e-8);
    }

    #[test]
    fn singular_a_is_named() {
        let model = LtvModel::from_fn(1, 1, 1, |k| SystemMatrices {
            a: if k == 2 { dmatrix![0.0] } else { dmatrix![1.0] },
            b: dmatrix![0.0],
            c: dmatrix![1.0],
        });
        assert_eq!(
            model.phi(4, 0).unwrap_err(),
            Error::SingularTransition { step: 2 }
        );
    }

    #[test]
    fn constant_rejects_bad_dims() {
        assert!(matches!(
            LtvModel::constant(DMatrix::identity(2, 2), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn input_stack_effect_cases() {
        let model = table_model(&[0.4, -0.7, 0.2, 0.9, -0.1, 0.5, 0.3, -0.8, 0.6, 0.05], 2, 1, 6);
        let zero = InputHistory::zeros(1, 5);
        assert_eq!(
            model.input_stack_effect(&zero, 4, 1).unwrap(),
            DVector::zeros(2)
        );
        let inputs = InputHistory::new(
            1,
            (0..5).map(|j| DVector::from_element(1, 0.5 + j as f64)).collect(),
        )
        .unwrap();
        let single = model.input_stack_effect(&inputs, 3, 2).unwrap();
        assert!((single - model.b(2).unwrap() * inputs.get(2).unwrap()).norm() < 1e-15);

        // iterate x_{j+1} = A_j x_j + B_j u_j from x_1 = 0 to x_4
        let mut x = DVector::zeros(2);
        for j in 1..4 {
            x = model.a(j).unwrap() * x + model.b(j).unwrap() * inputs.get(j).unwrap();
        }
        assert!((model.input_stack_effect(&inputs, 4, 1).unwrap() - x).norm() < 1e-12);
    }

    #[test]
    fn input_stack_effect_missing_inputs() {
        let model = table_model(&[0.1, 0.2, 0.3], 2, 1, 6);
        let short = InputHistory::zeros(1, 2);
        assert!(matches!(
            model.input_stack_effect(&short, 4, 0),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn transition_forward_matches_recursion() {
        let model = table_model(&[0.4, -0.7, 0.2, 0.9, -0.1, 0.5, 0.3, -0.8, 0.6, 0.05, 1.1], 3, 2, 8);
        let inputs = InputHistory::new(
            2,
            (0..8)
                .map(|j| DVector::from_vec(vec![(j as f64).sin(), 0.3 * j as f64]))
                .collect(),
        )
        .unwrap();
        let x0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        assert_eq!(model.transition(&inputs, 2, 2, &x0).unwrap(), x0);
        let mut x = x0.clone();
        for j in 1..5 {
            x = model.a(j).unwrap() * x + model.b(j).unwrap() * inputs.get(j).unwrap();
        }
        let t = model.transition(&inputs, 5, 1, &x0).unwrap();
        assert!((&t - &x).norm() < 1e-12 * x.norm());
        let back = model.transition(&inputs, 1, 5, &t).unwrap();
        assert!((back - x0).norm() < 1e-10);
    }

    fn arb_model() -> impl Strategy<Value = (LtvModel, InputHistory, DVector<f64>)> {
        (1usize..4, 1usize..3).prop_flat_map(|(n, m)| {
            let steps = 9;
            (
                proptest::collection::vec(-1.0f64..1.0, steps * (n * n + n * m + n)),
                proptest::collection::vec(-1.0f64..1.0, steps * m),
                proptest::collection::vec(-2.0f64..2.0, n),
            )
                .prop_map(move |(mv, uv, xv)| {
                    let mut it = mv.into_iter();
                    let table = (0..steps)
                        .map(|_| SystemMatrices {
                            a: DMatrix::identity(n, n)
                                + DMatrix::from_fn(n, n, |_, _| 0.25 * it.next().unwrap()),
                            b: DMatrix::from_fn(n, m, |_, _| it.next().unwrap()),
                            c: DMatrix::from_fn(1, n, |_, _| it.next().unwrap()),
                        })
                        .collect();
                    let model = LtvModel::from_table(table).unwrap();
                    let inputs = InputHistory::new(
                        m,
                        uv.chunks(m).map(DVector::from_column_slice).collect(),
                    )
                    .unwrap();
                    (model, inputs, DVector::from_vec(xv))
                })
        })
    }

    proptest! {
        #[test]
        fn phi_semigroup_and_inverse(
            (model, _inputs, _x) in arb_model(),
            i in 0usize..=8, j in 0usize..=8, k in 0usize..=8,
        ) {
            let pki = model.phi(k, i).unwrap().matrix;
            let pkj = model.phi(k, j).unwrap().matrix;
            let pji = model.phi(j, i).unwrap().matrix;
            prop_assert!(rel(&(&pkj * &pji), &pki) < 1e-10);
            let pik = model.phi(i, k).unwrap().matrix;
            prop_assert!(rel(&pik, &pki.clone().try_inverse().unwrap()) < 1e-10);
        }

        #[test]
        fn transition_flow_composition(
            (model, inputs, x) in arb_model(),
            i in 0usize..=8, j in 0usize..=8, k in 0usize..=8,
        ) {
            let via = model
                .transition(&inputs, k, j, &model.transition(&inputs, j, i, &x).unwrap())
                .unwrap();
            let direct = model.transition(&inputs, k, i, &x).unwrap();
            prop_assert!((&via - &direct).norm() <= 1e-9 * direct.norm().max(1.0));
        }
    }
}
