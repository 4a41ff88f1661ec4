use super::csr::CsrMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;

pub trait Preconditioner: Sync {
    /// `z ≈ A⁻¹ r`; must act as a symmetric positive (semi)definite operator.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Diagonal scaling; zero diagonal entries (pure kernel directions) pass through.
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Self { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// Defaults to `50·√n + 1000`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None }
    }
}

impl CgOptions {
    pub fn max_iter_for(&self, n: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| 50 * (n as f64).sqrt().ceil() as usize + 1000)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// `‖b − A x‖ / ‖b‖` recomputed from scratch at exit.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn true_residual(a: &CsrMatrix, b: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    a.mul_vec_into(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    dot(r, r).sqrt()
}

/// Preconditioned conjugate gradients starting from the contents of `x`.
///
/// Works on consistent positive semidefinite systems: iterates stay in
/// `x₀ + range(A)` and the residual is driven to zero.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    pre: &dyn Preconditioner,
    opts: &CgOptions,
) -> Result<CgOutcome> {
    let n = b.len();
    assert_eq!(a.nrows(), n);
    assert_eq!(x.len(), n);
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome { iterations: 0, relative_residual: 0.0 });
    }
    let max_iter = opts.max_iter_for(n);
    let target = opts.tol * bnorm;

    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut rnorm = true_residual(a, b, x, &mut r);

    // restart a few times if the recursive residual drifts from the true one
    for _ in 0..4 {
        if rnorm <= target {
            break;
        }
        pre.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iter {
            a.mul_vec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            if dot(&r, &r).sqrt() <= 0.5 * target {
                break;
            }
            pre.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        rnorm = true_residual(a, b, x, &mut r);
        if iterations >= max_iter {
            break;
        }
    }
    let relative_residual = rnorm / bnorm;
    if rnorm > target {
        return Err(Error::NotConverged { iterations, residual: relative_residual });
    }
    Ok(CgOutcome { iterations, relative_residual })
}
