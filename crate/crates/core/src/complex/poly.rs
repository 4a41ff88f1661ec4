use super::cochain::Cochain;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::exterior::{basis, binomial, AltForm, MultiIndex};
use crate::scalar::{Real, Scalar};

/// Highest total degree that [`interpolate`] integrates.
pub const MAX_POLY_DEGREE: usize = 2;

/// Sparse polynomial in `dim` variables: a list of `(exponents, coefficient)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial<T> {
    dim: usize,
    terms: Vec<(Vec<u32>, T)>,
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: T) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(vec![0; dim], c);
        p
    }

    /// The coordinate function `x_axis`.
    pub fn coordinate(dim: usize, axis: usize) -> Self {
        let mut e = vec![0; dim];
        e[axis] = 1;
        let mut p = Self::zero(dim);
        p.add_term(e, T::one());
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(Vec<u32>, T)] {
        &self.terms
    }

    pub fn add_term(&mut self, exponents: Vec<u32>, coeff: T) {
        assert_eq!(exponents.len(), self.dim);
        if coeff == T::zero() {
            return;
        }
        match self.terms.iter_mut().find(|(e, _)| *e == exponents) {
            Some((_, c)) => *c += coeff,
            None => self.terms.push((exponents, coeff)),
        }
        self.terms.retain(|(_, c)| *c != T::zero());
    }

    pub fn degree(&self) -> usize {
        self.terms.iter().map(|(e, _)| e.iter().sum::<u32>() as usize).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), *c * s);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero(self.dim);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, *c1 * *c2);
            }
        }
        out
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut out = Self::zero(self.dim);
        for (e, c) in &self.terms {
            if e[axis] > 0 {
                let mut e2 = e.clone();
                e2[axis] -= 1;
                out.add_term(e2, *c * T::from_i64(e[axis] as i64));
            }
        }
        out
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.terms.iter().fold(T::zero(), |acc, (e, c)| {
            acc + e.iter().zip(x).fold(*c, |m, (&k, &xi)| m * pow(xi, k))
        })
    }
}

fn pow<T: Scalar>(x: T, k: u32) -> T {
    (0..k).fold(T::one(), |acc, _| acc * x)
}

/// `∫_lo^hi t^k dt`
fn integrate_monomial<T: Scalar>(lo: T, hi: T, k: u32) -> T {
    (pow(hi, k + 1) - pow(lo, k + 1)) / T::from_i64(k as i64 + 1)
}

/// Differential form with polynomial coefficients, one per direction set.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyForm<T> {
    dim: usize,
    degree: usize,
    components: Vec<Polynomial<T>>,
}

impl<T: Scalar> PolyForm<T> {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Self { dim, degree, components: vec![Polynomial::zero(dim); binomial(dim, degree)] }
    }

    pub fn from_components(dim: usize, degree: usize, components: Vec<Polynomial<T>>) -> Result<Self> {
        let expected = binomial(dim, degree);
        if components.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: components.len() });
        }
        if components.iter().any(|c| c.dim() != dim) {
            return Err(Error::InvalidArgument("component dimension mismatch".into()));
        }
        Ok(Self { dim, degree, components })
    }

    /// A constant form.
    pub fn constant(p: &AltForm<T>) -> Self {
        let components = p.coeffs().iter().map(|&c| Polynomial::constant(p.dim(), c)).collect();
        Self { dim: p.dim(), degree: p.degree(), components }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> &[Polynomial<T>] {
        &self.components
    }

    pub fn component_mut(&mut self, index: MultiIndex) -> &mut Polynomial<T> {
        &mut self.components[index.rank()]
    }

    pub fn poly_degree(&self) -> usize {
        self.components.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim || self.degree != other.degree {
            return Err(Error::DegreeMismatch("adding forms of different shape".into()));
        }
        let components = self.components.iter().zip(&other.components).map(|(a, b)| a.add(b)).collect();
        Ok(Self { components, ..*self })
    }

    pub fn scale(&self, s: T) -> Self {
        Self { components: self.components.iter().map(|c| c.scale(s)).collect(), ..*self }
    }

    /// Exterior derivative: `d(f dx_I) = Σ_j ∂_j f dx_j ∧ dx_I`.
    pub fn exterior_derivative(&self) -> Result<Self> {
        if self.degree >= self.dim {
            return Err(Error::DegreeMismatch("derivative of a top-degree form".into()));
        }
        let mut out = Self::zero(self.dim, self.degree + 1);
        for (dir, f) in basis(self.dim, self.degree).into_iter().zip(&self.components) {
            for j in (0..self.dim).filter(|&j| !dir.contains(j)) {
                let df = f.derivative(j);
                if df.is_zero() {
                    continue;
                }
                let before = dir.indices().iter().filter(|&&i| i < j).count();
                let mut idx = dir.indices();
                idx.push(j);
                idx.sort_unstable();
                let target = MultiIndex::new(self.dim, &idx)?;
                let signed = if before % 2 == 0 { df } else { df.scale(-T::one()) };
                let slot = out.component_mut(target);
                *slot = slot.add(&signed);
            }
        }
        Ok(out)
    }

    /// Value at a point.
    pub fn eval(&self, x: &[T]) -> AltForm<T> {
        let coeffs = self.components.iter().map(|c| c.eval(x)).collect();
        AltForm::from_coeffs(self.dim, self.degree, coeffs).expect("shape is consistent")
    }
}

/// The affine potential `l_p = Σ_I p_I x_{i₁} dx_{I∖i₁}`, with `d l_p = p`.
pub fn affine_potential<T: Scalar>(p: &AltForm<T>) -> Result<PolyForm<T>> {
    let (d, r) = (p.dim(), p.degree());
    if r == 0 {
        return Err(Error::DegreeMismatch("affine potential of a 0-form".into()));
    }
    let mut out = PolyForm::zero(d, r - 1);
    for (dir, &c) in basis(d, r).into_iter().zip(p.coeffs()) {
        if c == T::zero() {
            continue;
        }
        let idx = dir.indices();
        let rest = MultiIndex::new(d, &idx[1..])?;
        let slot = out.component_mut(rest);
        *slot = slot.add(&Polynomial::coordinate(d, idx[0]).scale(c));
    }
    Ok(out)
}

/// Integrate `form` over every face of `grid`, with the grid spacing `h`
/// given in the scalar type.
pub fn interpolate_with_spacing<T: Scalar>(form: &PolyForm<T>, grid: &Grid, h: T) -> Result<Cochain<T>> {
    if form.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: form.dim() });
    }
    let deg = form.poly_degree();
    if deg > MAX_POLY_DEGREE {
        return Err(Error::UnsupportedPolynomial(deg));
    }
    let layout = grid.layout(form.degree());
    let mut values = vec![T::zero(); layout.len()];
    let dirs = layout.dirs().to_vec();
    layout.for_each(|i, t, pos| {
        let dir = dirs[t];
        let mut total = T::zero();
        for (e, c) in form.components[t].terms() {
            let mut term = *c;
            for (a, &k) in e.iter().enumerate() {
                let x = T::from_i64(pos[a] as i64) * h;
                term *= if dir.contains(a) { integrate_monomial(x, x + h, k) } else { pow(x, k) };
            }
            total += term;
        }
        values[i] = total;
    });
    Cochain::from_values(grid, form.degree(), values)
}

/// Integrate `form` over every face of `grid`.
pub fn interpolate<T: Real>(form: &PolyForm<T>, grid: &Grid) -> Result<Cochain<T>> {
    interpolate_with_spacing(form, grid, T::of(grid.spacing()))
}
