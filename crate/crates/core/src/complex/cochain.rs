use super::grid::{FaceLayout, Grid};
use crate::error::{Error, Result};
use crate::exterior::MultiIndex;
use crate::linalg::CsrMatrix;
use crate::scalar::Scalar;

/// One value per `r`-face: the integral of the represented form over it.
#[derive(Clone, Debug, PartialEq)]
pub struct Cochain<T> {
    grid: Grid,
    degree: usize,
    values: Vec<T>,
}

impl<T: Scalar> Cochain<T> {
    pub fn zeros(grid: &Grid, degree: usize) -> Self {
        Self { grid: *grid, degree, values: vec![T::zero(); grid.face_count(degree)] }
    }

    pub fn from_values(grid: &Grid, degree: usize, values: Vec<T>) -> Result<Self> {
        if degree > grid.dim() {
            return Err(Error::DegreeMismatch(format!(
                "cochain degree {degree} exceeds dimension {}",
                grid.dim()
            )));
        }
        let expected = grid.face_count(degree);
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { grid: *grid, degree, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !self.grid.same_shape(&other.grid) {
            return Err(Error::GridMismatch("cochains live on different grids".into()));
        }
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch(format!("{} vs {}", self.degree, other.degree)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        Ok(Self { values, ..*self })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        Ok(Self { values, ..*self })
    }

    pub fn scale(&self, s: T) -> Self {
        Self { values: self.values.iter().map(|&v| v * s).collect(), ..*self }
    }

    /// Discrete exterior derivative.
    pub fn coboundary(&self) -> Result<Cochain<T>> {
        let d = self.grid.dim();
        if self.degree >= d {
            return Err(Error::DegreeMismatch(format!(
                "coboundary of a top-degree ({d}) cochain"
            )));
        }
        let src = self.grid.layout(self.degree);
        let dst = self.grid.layout(self.degree + 1);
        let stencil = Stencil::new(&src, &dst);
        let mut out = vec![T::zero(); dst.len()];
        let mut upper = vec![0usize; d];
        dst.for_each(|i, t, pos| {
            let mut acc = T::zero();
            for &(j, src_rank, negative) in &stencil.terms[t] {
                upper.copy_from_slice(pos);
                upper[j] += 1;
                let diff = self.values[src.index(src_rank, &upper)] - self.values[src.index(src_rank, pos)];
                if negative {
                    acc -= diff;
                } else {
                    acc += diff;
                }
            }
            out[i] = acc;
        });
        Ok(Cochain { grid: self.grid, degree: self.degree + 1, values: out })
    }
}

impl Cochain<f64> {
    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// For every direction set `J` of the target degree, the terms
/// `(axis j, rank of J∖j, sign)` of its boundary.
struct Stencil {
    terms: Vec<Vec<(usize, usize, bool)>>,
}

impl Stencil {
    fn new(src: &FaceLayout, dst: &FaceLayout) -> Self {
        let terms = dst
            .dirs()
            .iter()
            .map(|dir| {
                let idx = dir.indices();
                idx.iter()
                    .enumerate()
                    .map(|(a, &j)| {
                        let rest: Vec<usize> = idx.iter().copied().filter(|&k| k != j).collect();
                        let rank = MultiIndex::new(dir.dim(), &rest).expect("valid face").rank();
                        debug_assert_eq!(src.dirs()[rank].indices(), rest);
                        (j, rank, a % 2 == 1)
                    })
                    .collect()
            })
            .collect();
        Self { terms }
    }
}

/// The coboundary as a sparse matrix from `r`-cochains to `(r+1)`-cochains.
pub fn coboundary_matrix(grid: &Grid, degree: usize) -> Result<CsrMatrix> {
    if degree >= grid.dim() {
        return Err(Error::DegreeMismatch(format!(
            "coboundary of a top-degree ({}) cochain",
            grid.dim()
        )));
    }
    let src = grid.layout(degree);
    let dst = grid.layout(degree + 1);
    let stencil = Stencil::new(&src, &dst);
    let mut triplets = Vec::with_capacity(dst.len() * 2 * (degree + 1));
    let mut upper = vec![0usize; grid.dim()];
    dst.for_each(|i, t, pos| {
        for &(j, src_rank, negative) in &stencil.terms[t] {
            let s = if negative { -1.0 } else { 1.0 };
            upper.copy_from_slice(pos);
            upper[j] += 1;
            triplets.push((i, src.index(src_rank, &upper), s));
            triplets.push((i, src.index(src_rank, pos), -s));
        }
    });
    Ok(CsrMatrix::from_triplets(dst.len(), src.len(), &triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constants_are_closed() {
        let g = Grid::new(3, 2, 1.0).unwrap();
        let mut u = Cochain::<i64>::zeros(&g, 0);
        u.values_mut().iter_mut().for_each(|v| *v = 7);
        assert!(u.coboundary().unwrap().values().iter().all(|&v| v == 0));
    }

    #[test]
    fn dd_vanishes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 1..=4 {
            let g = Grid::new(d, 2, 1.0).unwrap();
            for r in 0..d.saturating_sub(1) {
                let vals = (0..g.face_count(r)).map(|_| rng.gen_range(-50i64..50)).collect();
                let u = Cochain::from_values(&g, r, vals).unwrap();
                let ddu = u.coboundary().unwrap().coboundary().unwrap();
                assert!(ddu.values().iter().all(|&v| v == 0), "d={d} r={r}");
            }
        }
    }

    #[test]
    fn top_degree_rejected() {
        let g = Grid::new(2, 2, 1.0).unwrap();
        assert!(Cochain::<f64>::zeros(&g, 2).coboundary().is_err());
        assert!(coboundary_matrix(&g, 2).is_err());
    }

    #[test]
    fn matrix_agrees_with_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 1..=3 {
            let g = Grid::new(d, 3, 1.0).unwrap();
            for r in 0..d {
                let vals: Vec<f64> = (0..g.face_count(r)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let u = Cochain::from_values(&g, r, vals.clone()).unwrap();
                let du = u.coboundary().unwrap();
                let m = coboundary_matrix(&g, r).unwrap();
                assert_eq!(m.mul_vec(&vals), du.values());
            }
        }
    }

    #[test]
    fn length_checked() {
        let g = Grid::new(2, 2, 1.0).unwrap();
        assert!(Cochain::from_values(&g, 1, vec![0.0; 3]).is_err());
        assert!(Cochain::<f64>::from_values(&g, 3, vec![]).is_err());
    }
}
