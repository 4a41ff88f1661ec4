use super::cochain::Cochain;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::exterior::{binomial, AltForm};
use crate::scalar::{Real, Scalar};

/// Axis-aligned block of cells: `origin + [0, side)^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub origin: Vec<usize>,
    pub side: usize,
}

impl Region {
    pub fn new(origin: Vec<usize>, side: usize) -> Self {
        Self { origin, side }
    }

    pub fn whole(grid: &Grid) -> Self {
        Self { origin: vec![0; grid.dim()], side: grid.side() }
    }
}

/// One constant form per cell, stored cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField<T> {
    grid: Grid,
    degree: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> CellField<T> {
    pub fn zeros(grid: &Grid, degree: usize) -> Self {
        let width = binomial(grid.dim(), degree);
        Self { grid: *grid, degree, width, values: vec![T::zero(); width * grid.cell_count()] }
    }

    pub fn constant(grid: &Grid, form: &AltForm<T>) -> Self {
        let mut f = Self::zeros(grid, form.degree());
        for c in 0..grid.cell_count() {
            f.cell_mut(c).copy_from_slice(form.coeffs());
        }
        f
    }

    pub fn from_values(grid: &Grid, degree: usize, values: Vec<T>) -> Result<Self> {
        let width = binomial(grid.dim(), degree);
        let expected = width * grid.cell_count();
        if values.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: values.len() });
        }
        Ok(Self { grid: *grid, degree, width, values })
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

    pub fn cell(&self, c: usize) -> &[T] {
        &self.values[c * self.width..(c + 1) * self.width]
    }

    pub fn cell_mut(&mut self, c: usize) -> &mut [T] {
        &mut self.values[c * self.width..(c + 1) * self.width]
    }

    pub fn cell_form(&self, c: usize) -> AltForm<T> {
        AltForm::from_coeffs(self.grid.dim(), self.degree, self.cell(c).to_vec()).expect("consistent width")
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if !self.grid.same_shape(&other.grid) || self.degree != other.degree {
            return Err(Error::GridMismatch("fields of different shape".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect();
        Ok(Self { values, ..self.clone_shape() })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if !self.grid.same_shape(&other.grid) || self.degree != other.degree {
            return Err(Error::GridMismatch("fields of different shape".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect();
        Ok(Self { values, ..self.clone_shape() })
    }

    pub fn scale(&self, s: T) -> Self {
        Self { values: self.values.iter().map(|&v| v * s).collect(), ..self.clone_shape() }
    }

    fn clone_shape(&self) -> Self {
        Self { grid: self.grid, degree: self.degree, width: self.width, values: Vec::new() }
    }

    /// Componentwise mean over the cells of `region`.
    pub fn cube_mean(&self, region: &Region) -> Result<AltForm<T>> {
        let d = self.grid.dim();
        if region.side == 0 {
            return Err(Error::EmptyRegion);
        }
        if region.origin.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: region.origin.len() });
        }
        if region.origin.iter().any(|&o| o + region.side > self.grid.side()) {
            return Err(Error::GridMismatch("region exceeds the grid".into()));
        }
        let mut sum = vec![T::zero(); self.width];
        let count = region.side.pow(d as u32);
        let mut pos = vec![0usize; d];
        for k in 0..count {
            let mut rest = k;
            for a in (0..d).rev() {
                pos[a] = region.origin[a] + rest % region.side;
                rest /= region.side;
            }
            for (s, &v) in sum.iter_mut().zip(self.cell(self.grid.cell_index(&pos))) {
                *s += v;
            }
        }
        let n = T::from_i64(count as i64);
        AltForm::from_coeffs(d, self.degree, sum.into_iter().map(|s| s / n).collect())
    }

    /// Block means over `factor^d` blocks, on the grid with `side / factor`
    /// cells of spacing `factor·h`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.grid.side() % factor != 0 {
            return Err(Error::GridMismatch(format!(
                "cannot coarsen side {} by {factor}",
                self.grid.side()
            )));
        }
        let d = self.grid.dim();
        let coarse = Grid::new(d, self.grid.side() / factor, self.grid.spacing() * factor as f64)?;
        let mut out = Self::zeros(&coarse, self.degree);
        for c in 0..self.grid.cell_count() {
            let pos = self.grid.cell_position(c);
            let cpos: Vec<usize> = pos.iter().map(|p| p / factor).collect();
            let ci = coarse.cell_index(&cpos);
            for k in 0..self.width {
                out.values[ci * self.width + k] += self.values[c * self.width + k];
            }
        }
        let n = T::from_i64(factor.pow(d as u32) as i64);
        out.values.iter_mut().for_each(|v| *v = *v / n);
        Ok(out)
    }
}

impl<T: Real> CellField<T> {
    /// Normalized `L²` norm `(mean |f|²)^{1/2}`.
    pub fn l2_norm(&self) -> T {
        let n = T::of(self.grid.cell_count() as f64);
        (self.values.iter().map(|&v| v * v).sum::<T>() / n).sqrt()
    }

    /// `‖f‖ + Σ_{n<m} 3ⁿ (mean over blocks z+□ₙ of |(f)_{z+□ₙ}|²)^{1/2}` with
    /// lengths measured in cells.
    pub fn multiscale_seminorm(&self) -> Result<T> {
        let m = self.grid.triadic_exponent().ok_or(Error::NotTriadic(self.grid.side()))?;
        let mut total = self.l2_norm();
        let mut level = self.clone();
        let mut weight = T::one();
        for n in 0..m {
            if n > 0 {
                level = level.coarsen(3)?;
            }
            total += weight * level.l2_norm();
            weight = weight * T::of(3.0);
        }
        Ok(total)
    }
}

impl CellField<f64> {
    /// Per-cell mean of the Whitney form of `u`: for each direction set, the
    /// average over the parallel faces of the cell divided by face volume.
    pub fn reconstruct(u: &Cochain<f64>) -> Self {
        let grid = *u.grid();
        let r = u.degree();
        let d = grid.dim();
        let layout = grid.layout(r);
        let mut out = Self::zeros(&grid, r);
        let corners = 1usize << (d - r);
        let scale = 1.0 / (corners as f64 * grid.spacing().powi(r as i32));
        let mut face = vec![0usize; d];
        for c in 0..grid.cell_count() {
            let pos = grid.cell_position(c);
            for (t, dir) in layout.dirs().iter().enumerate() {
                let free: Vec<usize> = (0..d).filter(|&a| !dir.contains(a)).collect();
                let mut sum = 0.0;
                for bits in 0..corners {
                    face.copy_from_slice(&pos);
                    for (k, &a) in free.iter().enumerate() {
                        face[a] += bits >> k & 1;
                    }
                    sum += u.values()[layout.index(t, &face)];
                }
                out.values[c * out.width + t] = sum * scale;
            }
        }
        out
    }

    /// Apply a per-cell linear map given as a row-major `width × width` block.
    pub fn map_cells<F: Fn(usize, &[f64], &mut [f64])>(&self, f: F) -> Self {
        let mut out = self.clone();
        for c in 0..self.grid.cell_count() {
            f(c, self.cell(c), &mut out.values[c * self.width..(c + 1) * self.width]);
        }
        out
    }
}
