use nalgebra::{DMatrix, SymmetricEigen};

use super::cg::Preconditioner;
use super::csr::CsrMatrix;

/// Coarsest levels at or below this size are solved with a dense pseudo-inverse.
const DENSE_LIMIT: usize = 3000;
const COARSE_SWEEPS: usize = 60;

struct Level {
    a: CsrMatrix,
    /// Prolongation from the next coarser level.
    p: Option<CsrMatrix>,
    pt: Option<CsrMatrix>,
}

enum Coarse {
    Dense(DMatrix<f64>),
    Sweeps,
}

/// Geometric V-cycle for vertex unknowns on a cubical grid, coarsening by
/// three per axis with multilinear prolongation and Galerkin coarse operators.
///
/// Symmetric Gauss-Seidel smoothing keeps the cycle symmetric, so it can
/// precondition CG, including on consistent singular systems.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: Coarse,
    sweeps: usize,
}

fn prolongation_1d(i: usize) -> [(usize, f64); 2] {
    let c = i / 3;
    match i % 3 {
        0 => [(c, 1.0), (c, 0.0)],
        1 => [(c, 2.0 / 3.0), (c + 1, 1.0 / 3.0)],
        _ => [(c, 1.0 / 3.0), (c + 1, 2.0 / 3.0)],
    }
}

fn prolongation(dim: usize, side: usize, fixed: &[bool], coarse_fixed: &[bool]) -> CsrMatrix {
    let fine_ext = side + 1;
    let coarse_ext = side / 3 + 1;
    let nf = fine_ext.pow(dim as u32);
    let nc = coarse_ext.pow(dim as u32);
    let mut triplets = Vec::with_capacity(nf * (1 << dim));
    let mut pos = vec![0usize; dim];
    for row in 0..nf {
        let mut rest = row;
        for a in (0..dim).rev() {
            pos[a] = rest % fine_ext;
            rest /= fine_ext;
        }
        if fixed[row] {
            continue;
        }
        for combo in 0..1usize << dim {
            let mut col = 0;
            let mut w = 1.0;
            for (a, &pa) in pos.iter().enumerate() {
                let (c, wa) = prolongation_1d(pa)[combo >> a & 1];
                w *= wa;
                col = col * coarse_ext + c;
            }
            if w != 0.0 && !coarse_fixed[col] {
                triplets.push((row, col, w));
            }
        }
    }
    CsrMatrix::from_triplets(nf, nc, &triplets)
}

fn coarse_fixed_mask(dim: usize, side: usize, fixed: &[bool]) -> Vec<bool> {
    let fine_ext = side + 1;
    let coarse_ext = side / 3 + 1;
    let nc = coarse_ext.pow(dim as u32);
    (0..nc)
        .map(|c| {
            let mut rest = c;
            let mut fine = 0;
            let mut stride = 1;
            for _ in 0..dim {
                fine += 3 * (rest % coarse_ext) * stride;
                rest /= coarse_ext;
                stride *= fine_ext;
            }
            fixed[fine]
        })
        .collect()
}

fn pseudo_inverse(a: &CsrMatrix) -> DMatrix<f64> {
    let dense = a.to_dense();
    let dense = (&dense + dense.transpose()) * 0.5;
    let eig = SymmetricEigen::new(dense);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = max * 1e-11;
    let inv = eig.eigenvalues.map(|v| if v.abs() > cutoff { 1.0 / v } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

fn gauss_seidel(a: &CsrMatrix, b: &[f64], x: &mut [f64], forward: bool) {
    let n = b.len();
    let mut step = |i: usize| {
        let (cols, vals) = a.row(i);
        let mut s = b[i];
        let mut diag = 0.0;
        for (&j, &v) in cols.iter().zip(vals) {
            if j as usize == i {
                diag = v;
            } else {
                s -= v * x[j as usize];
            }
        }
        if diag > 0.0 {
            x[i] = s / diag;
        }
    };
    if forward {
        (0..n).for_each(&mut step);
    } else {
        (0..n).rev().for_each(&mut step);
    }
}

impl Multigrid {
    /// `a` acts on vertex values of a grid with `side` cells per axis; rows
    /// flagged in `fixed` must already be identity rows.
    pub fn new(a: &CsrMatrix, dim: usize, side: usize, fixed: Option<&[bool]>) -> Self {
        let n = a.nrows();
        assert_eq!(n, (side + 1).pow(dim as u32));
        let mut fixed: Vec<bool> = fixed.map(|f| f.to_vec()).unwrap_or_else(|| vec![false; n]);
        let mut levels = vec![Level { a: a.clone(), p: None, pt: None }];
        let mut side = side;
        while side % 3 == 0 && side >= 3 && levels.last().unwrap().a.nrows() > 64 {
            let coarse_fixed = coarse_fixed_mask(dim, side, &fixed);
            let p = prolongation(dim, side, &fixed, &coarse_fixed);
            let pt = p.transpose();
            let fine = &levels.last().unwrap().a;
            let mut ac = pt.matmul(&fine.matmul(&p));
            for (i, &f) in coarse_fixed.iter().enumerate() {
                if f {
                    let r = ac.indptr()[i]..ac.indptr()[i + 1];
                    let cols: Vec<u32> = ac.indices()[r.clone()].to_vec();
                    for (k, j) in r.zip(cols) {
                        ac.values_mut()[k] = if j as usize == i { 1.0 } else { 0.0 };
                    }
                }
            }
            let last = levels.last_mut().unwrap();
            last.p = Some(p);
            last.pt = Some(pt);
            levels.push(Level { a: ac, p: None, pt: None });
            fixed = coarse_fixed;
            side /= 3;
        }
        let bottom = &levels.last().unwrap().a;
        let coarse = if bottom.nrows() <= DENSE_LIMIT {
            Coarse::Dense(pseudo_inverse(bottom))
        } else {
            Coarse::Sweeps
        };
        Self { levels, coarse, sweeps: 1 }
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    fn cycle(&self, level: usize, b: &[f64], x: &mut [f64]) {
        let lv = &self.levels[level];
        x.iter_mut().for_each(|v| *v = 0.0);
        let (Some(p), Some(pt)) = (&lv.p, &lv.pt) else {
            match &self.coarse {
                Coarse::Dense(inv) => {
                    let y = inv * nalgebra::DVector::from_column_slice(b);
                    x.copy_from_slice(y.as_slice());
                }
                Coarse::Sweeps => {
                    for _ in 0..COARSE_SWEEPS {
                        gauss_seidel(&lv.a, b, x, true);
                        gauss_seidel(&lv.a, b, x, false);
                    }
                }
            }
            return;
        };
        for _ in 0..self.sweeps {
            gauss_seidel(&lv.a, b, x, true);
        }
        let mut r = lv.a.mul_vec(x);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let rc = pt.mul_vec(&r);
        let mut xc = vec![0.0; rc.len()];
        self.cycle(level + 1, &rc, &mut xc);
        let corr = p.mul_vec(&xc);
        for (xi, ci) in x.iter_mut().zip(&corr) {
            *xi += ci;
        }
        for _ in 0..self.sweeps {
            gauss_seidel(&lv.a, b, x, false);
        }
    }
}

impl Preconditioner for Multigrid {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}
