//! Constant alternating forms on `R^d`.
//!
//! Basis `r`-forms `dx_I` are indexed by strictly increasing multi-indices
//! `I`, ordered lexicographically; every coefficient vector and every matrix
//! in the crate uses that rank. Indices are 0-based in the API and printed
//! 1-based.
//!
//! A pointwise coefficient `a : Λ^r → Λ^{d-r}` is never stored as a raw map.
//! It is stored as its energy matrix `M[I,J] = ⋆(dx_I ∧ a dx_J)`, which is
//! symmetric positive definite for admissible coefficients, and the map is
//! recovered as `a p = ⋆(M p)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest ambient dimension supported by the bitset representation.
pub const MAX_DIM: usize = 16;

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// A strictly increasing subset `I ⊆ {0, …, d-1}`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    dim: u8,
    bits: u32,
}

impl MultiIndex {
    pub fn new(dim: usize, indices: &[usize]) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidIndex(format!("dimension {dim} out of range")));
        }
        let mut bits = 0u32;
        let mut prev: Option<usize> = None;
        for &i in indices {
            if i >= dim {
                return Err(Error::InvalidIndex(format!("index {i} >= dimension {dim}")));
            }
            if prev.is_some_and(|p| p >= i) {
                return Err(Error::InvalidIndex(format!("{indices:?} is not strictly increasing")));
            }
            prev = Some(i);
            bits |= 1 << i;
        }
        Ok(Self { dim: dim as u8, bits })
    }

    pub(crate) fn from_bits(dim: usize, bits: u32) -> Self {
        debug_assert!(bits >> dim == 0);
        Self { dim: dim as u8, bits }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn degree(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits >> i & 1 == 1
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.contains(i)).collect()
    }

    pub fn complement(&self) -> Self {
        let mask = if self.dim() == 32 { u32::MAX } else { (1u32 << self.dim) - 1 };
        Self { dim: self.dim, bits: !self.bits & mask }
    }

    /// Position in the lexicographic enumeration of all `C(d, r)` subsets.
    pub fn rank(&self) -> usize {
        let d = self.dim();
        let r = self.degree();
        let mut rank = 0;
        let mut next = 0;
        for (j, i) in self.indices().into_iter().enumerate() {
            for x in next..i {
                rank += binomial(d - 1 - x, r - 1 - j);
            }
            next = i + 1;
        }
        rank
    }

    pub fn from_rank(dim: usize, degree: usize, mut rank: usize) -> Result<Self> {
        if degree > dim || rank >= binomial(dim, degree) {
            return Err(Error::InvalidIndex(format!(
                "rank {rank} out of range for C({dim}, {degree})"
            )));
        }
        let mut bits = 0u32;
        let mut x = 0;
        for j in 0..degree {
            loop {
                let block = binomial(dim - 1 - x, degree - 1 - j);
                if rank < block {
                    break;
                }
                rank -= block;
                x += 1;
            }
            bits |= 1 << x;
            x += 1;
        }
        Ok(Self::from_bits(dim, bits))
    }

    /// Sign of the permutation `(I, Iᶜ)` of `(0, …, d-1)`, so that
    /// `dx_I ∧ dx_{Iᶜ} = σ(I) dx_0 ∧ … ∧ dx_{d-1}`.
    pub fn complement_sign(&self) -> i32 {
        inversion_sign(self.bits, self.complement().bits)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = self.indices();
        if idx.is_empty() {
            return write!(f, "1");
        }
        let parts: Vec<String> = idx.iter().map(|i| format!("dx{}", i + 1)).collect();
        write!(f, "{}", parts.join("^"))
    }
}

/// `(-1)^{#{(i, j) : i ∈ a, j ∈ b, i > j}}`: the sign that sorts the
/// concatenation of the increasing sequences `a` then `b`.
fn inversion_sign(a: u32, b: u32) -> i32 {
    let mut inversions = 0u32;
    let mut rest = a;
    while rest != 0 {
        let i = rest.trailing_zeros();
        inversions += (b & ((1u32 << i) - 1)).count_ones();
        rest &= rest - 1;
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// All multi-indices of the given degree in lexicographic order.
pub fn basis(dim: usize, degree: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(binomial(dim, degree));
    if degree > dim {
        return out;
    }
    let mut idx: Vec<usize> = (0..degree).collect();
    loop {
        let bits = idx.iter().fold(0u32, |acc, &i| acc | 1 << i);
        out.push(MultiIndex::from_bits(dim, bits));
        // advance to the next combination
        let mut j = degree;
        while j > 0 && idx[j - 1] == dim - degree + j - 1 {
            j -= 1;
        }
        if j == 0 {
            return out;
        }
        idx[j - 1] += 1;
        for k in j..degree {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

/// `σ(I)` and the rank of `Iᶜ` for every `I` of a given degree.
#[derive(Clone, Debug)]
pub struct SignTable {
    dim: usize,
    degree: usize,
    signs: Vec<i8>,
    complement_rank: Vec<usize>,
}

impl SignTable {
    pub fn new(dim: usize, degree: usize) -> Self {
        let b = basis(dim, degree);
        let signs = b.iter().map(|i| i.complement_sign() as i8).collect();
        let complement_rank = b.iter().map(|i| i.complement().rank()).collect();
        Self { dim, degree, signs, complement_rank }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn sigma(&self, rank: usize) -> i32 {
        self.signs[rank] as i32
    }

    pub fn complement(&self, rank: usize) -> usize {
        self.complement_rank[rank]
    }
}

/// A constant alternating form with coefficients over the lexicographic basis.
///
/// Degrees above the ambient dimension are allowed and denote the zero space
/// (no coefficients); this is what [`AltForm::wedge`] returns when the
/// degrees overflow.
#[derive(Clone, PartialEq, Debug)]
pub struct AltForm<T> {
    dim: usize,
    degree: usize,
    coeffs: Vec<T>,
}

impl<T: Scalar> AltForm<T> {
    pub fn zeros(dim: usize, degree: usize) -> Self {
        Self { dim, degree, coeffs: vec![T::zero(); binomial(dim, degree)] }
    }

    pub fn from_coeffs(dim: usize, degree: usize, coeffs: Vec<T>) -> Result<Self> {
        let expected = binomial(dim, degree);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: coeffs.len() });
        }
        Ok(Self { dim, degree, coeffs })
    }

    /// The basis form `dx_I`.
    pub fn basis(index: MultiIndex) -> Self {
        let mut out = Self::zeros(index.dim(), index.degree());
        out.coeffs[index.rank()] = T::one();
        out
    }

    /// `dx_{i_1} ∧ … ∧ dx_{i_r}` from 0-based indices.
    pub fn dx(dim: usize, indices: &[usize]) -> Result<Self> {
        Ok(Self::basis(MultiIndex::new(dim, indices)?))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [T] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<T> {
        self.coeffs
    }

    pub fn coeff(&self, index: MultiIndex) -> T {
        self.coeffs[index.rank()]
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == T::zero())
    }

    pub fn scale(&self, s: T) -> Self {
        Self { dim: self.dim, degree: self.degree, coeffs: self.coeffs.iter().map(|&c| c * s).collect() }
    }

    /// Scalar product making `(dx_I)` orthonormal.
    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_space(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn norm_sq(&self) -> T {
        self.coeffs.iter().fold(T::zero(), |acc, &a| acc + a * a)
    }

    fn check_same_space(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch(format!(
                "degree {} vs degree {}",
                self.degree, other.degree
            )));
        }
        Ok(())
    }

    pub fn wedge(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        let d = self.dim;
        let degree = self.degree + other.degree;
        let mut out = Self::zeros(d, degree);
        if degree > d {
            return Ok(out);
        }
        let left = basis(d, self.degree);
        let right = basis(d, other.degree);
        for (i, a) in left.iter().enumerate() {
            let ca = self.coeffs[i];
            if ca == T::zero() {
                continue;
            }
            for (j, b) in right.iter().enumerate() {
                if a.bits & b.bits != 0 {
                    continue;
                }
                let cb = other.coeffs[j];
                let sign = inversion_sign(a.bits, b.bits);
                let k = MultiIndex::from_bits(d, a.bits | b.bits).rank();
                let term = ca * cb;
                if sign > 0 {
                    out.coeffs[k] += term;
                } else {
                    out.coeffs[k] -= term;
                }
            }
        }
        Ok(out)
    }

    /// `⋆ dx_I = σ(I) dx_{Iᶜ}`.
    pub fn hodge_star(&self) -> Self {
        let table = SignTable::new(self.dim, self.degree);
        let mut out = Self::zeros(self.dim, self.dim - self.degree);
        for (i, &c) in self.coeffs.iter().enumerate() {
            let target = table.complement(i);
            out.coeffs[target] = if table.sigma(i) > 0 { c } else { -c };
        }
        out
    }

    /// Inverse of the Hodge star: `(-1)^{r(d-r)} ⋆`.
    pub fn hodge_star_inv(&self) -> Self {
        let starred = self.hodge_star();
        if (self.degree * (self.dim - self.degree)) % 2 == 1 {
            -starred
        } else {
            starred
        }
    }

    /// The coordinate vector `q̃` with `⋆(u ∧ q) = (u, q̃)` for every
    /// `u ∈ Λ^{d-s}`, where `s` is the degree of `self`: `q̃_I = σ(I) q_{Iᶜ}`.
    pub fn pairing_dual(&self) -> Self {
        self.hodge_star_inv()
    }
}

/// `⋆(p ∧ q)` for forms of complementary degree.
pub fn star_wedge_scalar<T: Scalar>(p: &AltForm<T>, q: &AltForm<T>) -> Result<T> {
    if p.dim != q.dim {
        return Err(Error::DimensionMismatch { expected: p.dim, got: q.dim });
    }
    if p.degree + q.degree != p.dim {
        return Err(Error::DegreeMismatch(format!(
            "degrees {} + {} do not add up to {}",
            p.degree, q.degree, p.dim
        )));
    }
    let table = SignTable::new(p.dim, p.degree);
    let mut acc = T::zero();
    for (i, &c) in p.coeffs.iter().enumerate() {
        let term = c * q.coeffs[table.complement(i)];
        if table.sigma(i) > 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    Ok(acc)
}

impl<T: Scalar> Add for &AltForm<T> {
    type Output = AltForm<T>;

    fn add(self, rhs: Self) -> AltForm<T> {
        self.check_same_space(rhs).expect("adding forms of different spaces");
        AltForm {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(&a, &b)| a + b).collect(),
        }
    }
}

impl<T: Scalar> Sub for &AltForm<T> {
    type Output = AltForm<T>;

    fn sub(self, rhs: Self) -> AltForm<T> {
        self.check_same_space(rhs).expect("subtracting forms of different spaces");
        AltForm {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&rhs.coeffs).map(|(&a, &b)| a - b).collect(),
        }
    }
}

impl<T: Scalar> Neg for AltForm<T> {
    type Output = AltForm<T>;

    fn neg(mut self) -> AltForm<T> {
        for c in &mut self.coeffs {
            *c = -*c;
        }
        self
    }
}

impl<T: Scalar> Mul<T> for &AltForm<T> {
    type Output = AltForm<T>;

    fn mul(self, s: T) -> AltForm<T> {
        self.scale(s)
    }
}

impl AltForm<f64> {
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn to_vector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_column_slice(&self.coeffs)
    }

    pub fn from_vector(dim: usize, degree: usize, v: &nalgebra::DVector<f64>) -> Result<Self> {
        Self::from_coeffs(dim, degree, v.iter().copied().collect())
    }
}

/// Matrix of `⋆ : Λ^r → Λ^{d-r}` in the lexicographic bases.
pub fn hodge_matrix(dim: usize, degree: usize) -> DMatrix<f64> {
    let table = SignTable::new(dim, degree);
    let n = binomial(dim, degree);
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        s[(table.complement(i), i)] = table.sigma(i) as f64;
    }
    s
}

const SYMMETRY_TOL: f64 = 1e-12;
const SPECTRUM_TOL: f64 = 1e-10;

/// Symmetric positive definite representation of a pointwise coefficient
/// `a : Λ^r → Λ^{d-r}` with spectrum inside `[λ, 1/λ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyMatrix {
    dim: usize,
    degree: usize,
    lambda: f64,
    matrix: DMatrix<f64>,
}

impl EnergyMatrix {
    pub fn new(dim: usize, degree: usize, matrix: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidArgument(format!("lambda {lambda} outside (0, 1]")));
        }
        let n = binomial(dim, degree);
        if degree > dim || matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: matrix.nrows() });
        }
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let (min, max) = spectrum_bounds(&matrix);
        if min < lambda - SPECTRUM_TOL || max > 1.0 / lambda + SPECTRUM_TOL {
            return Err(Error::EllipticityViolation { min, max, lambda });
        }
        Ok(Self { dim, degree, lambda, matrix })
    }

    /// The isotropic coefficient `a p = c ⋆ p`, whose energy matrix is `c·I`.
    pub fn of_star(dim: usize, degree: usize, scale: f64, lambda: f64) -> Result<Self> {
        let n = binomial(dim, degree);
        Self::new(dim, degree, DMatrix::identity(n, n) * scale, lambda)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    /// `⋆(p ∧ a p)`.
    pub fn energy(&self, p: &AltForm<f64>) -> f64 {
        let v = p.to_vector();
        (v.transpose() * &self.matrix * &v)[(0, 0)]
    }

    /// `a p = ⋆(M p)`, an element of `Λ^{d-r}`.
    pub fn apply(&self, p: &AltForm<f64>) -> AltForm<f64> {
        let mp = &self.matrix * p.to_vector();
        AltForm::from_vector(self.dim, self.degree, &mp).unwrap().hodge_star()
    }

    /// The map `b q = ⋆⁻¹(M q)` characterised by `⋆(b dx_K ∧ dx_L) = M[K, L]`.
    /// This is how the inverse coefficient acts when the matrix comes from
    /// [`EnergyMatrix::invert`].
    pub fn apply_dual(&self, q: &AltForm<f64>) -> AltForm<f64> {
        let mq = &self.matrix * q.to_vector();
        AltForm::from_vector(self.dim, self.degree, &mq).unwrap().hodge_star_inv()
    }

    pub fn spectrum(&self) -> (f64, f64) {
        spectrum_bounds(&self.matrix)
    }

    /// Energy matrix of `a⁻¹ : Λ^{d-r} → Λ^r`, using the pairing
    /// `⋆(a⁻¹ dx_K ∧ dx_L)`; the result has degree `d - r` and the same window.
    pub fn invert(&self) -> Result<Self> {
        let inv = invert_energy(self.dim, self.degree, &self.matrix)?;
        Ok(Self { dim: self.dim, degree: self.dim - self.degree, lambda: self.lambda, matrix: inv })
    }
}

/// `S M⁻¹ Sᵀ` with `S` the matrix of `⋆` on `Λ^r`.
pub fn invert_energy(dim: usize, degree: usize, matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = matrix.clone().try_inverse().ok_or(Error::Singular)?;
    let s = hodge_matrix(dim, degree);
    let out = &s * inv * s.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

pub fn spectrum_bounds(matrix: &DMatrix<f64>) -> (f64, f64) {
    if matrix.nrows() == 0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    (eig.min(), eig.max())
}

/// Spectral (operator) norm of a square matrix.
pub fn operator_norm(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    matrix.clone().singular_values().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    type Q = Ratio<i64>;

    fn q(n: i64) -> Q {
        Q::from_integer(n)
    }

    #[test]
    fn rank_round_trips() {
        for d in 1..=6 {
            for r in 0..=d {
                let b = basis(d, r);
                assert_eq!(b.len(), binomial(d, r));
                for (k, idx) in b.iter().enumerate() {
                    assert_eq!(idx.rank(), k);
                    assert_eq!(MultiIndex::from_rank(d, r, k).unwrap(), *idx);
                }
                let mut sorted = b.clone();
                sorted.sort_by_key(|i| i.indices());
                assert_eq!(sorted, b, "lexicographic order d={d} r={r}");
            }
        }
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(MultiIndex::new(3, &[1, 0]).is_err());
        assert!(MultiIndex::new(3, &[0, 3]).is_err());
        assert!(MultiIndex::new(3, &[1, 1]).is_err());
    }

    #[test]
    fn wedge_basis_cases() {
        let dx1 = AltForm::<i64>::dx(2, &[0]).unwrap();
        let dx2 = AltForm::<i64>::dx(2, &[1]).unwrap();
        assert_eq!(dx1.wedge(&dx2).unwrap().coeffs(), &[1]);

        let dx1 = AltForm::<i64>::dx(3, &[0]).unwrap();
        let dx2 = AltForm::<i64>::dx(3, &[1]).unwrap();
        let w = dx2.wedge(&dx1).unwrap();
        assert_eq!(w, -AltForm::dx(3, &[0, 1]).unwrap());
    }

    #[test]
    fn wedge_expands_by_multilinearity() {
        // (dx1 + 2 dx3) ∧ (dx2 ∧ dx3) = dx1 ∧ dx2 ∧ dx3
        let a = AltForm::from_coeffs(3, 1, vec![q(1), q(0), q(2)]).unwrap();
        let b = AltForm::<Q>::dx(3, &[1, 2]).unwrap();
        assert_eq!(a.wedge(&b).unwrap().coeffs(), &[q(1)]);
    }

    #[test]
    fn over_degree_wedge_is_zero_space() {
        let a = AltForm::<i64>::dx(2, &[0, 1]).unwrap();
        let b = AltForm::<i64>::dx(2, &[0]).unwrap();
        let w = a.wedge(&b).unwrap();
        assert_eq!(w.degree(), 3);
        assert!(w.coeffs().is_empty());
        assert!(w.is_zero());
    }

    #[test]
    fn wedge_dimension_mismatch() {
        let a = AltForm::<i64>::dx(2, &[0]).unwrap();
        let b = AltForm::<i64>::dx(3, &[0]).unwrap();
        assert!(matches!(a.wedge(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hodge_star_small_cases() {
        let dx1 = AltForm::<i64>::dx(2, &[0]).unwrap();
        let dx2 = AltForm::<i64>::dx(2, &[1]).unwrap();
        assert_eq!(dx1.hodge_star(), dx2);
        assert_eq!(dx2.hodge_star(), -dx1.clone());
        let dx12 = AltForm::<i64>::dx(3, &[0, 1]).unwrap();
        assert_eq!(dx12.hodge_star(), AltForm::dx(3, &[2]).unwrap());
    }

    #[test]
    fn star_wedge_scalar_cases() {
        let one = AltForm::<i64>::from_coeffs(2, 0, vec![1]).unwrap();
        let vol = AltForm::<i64>::dx(2, &[0, 1]).unwrap();
        assert_eq!(star_wedge_scalar(&vol, &one).unwrap(), 1);
        let dx2 = AltForm::<i64>::dx(3, &[1]).unwrap();
        // dx3 ∧ dx1 = -dx1 ∧ dx3
        let dx31 = -AltForm::<i64>::dx(3, &[0, 2]).unwrap();
        assert_eq!(star_wedge_scalar(&dx2, &dx31).unwrap(), 1);
        assert!(star_wedge_scalar(&dx2, &dx2).is_err());
    }

    #[test]
    fn star_energy_matrix_is_scaled_identity() {
        let m = EnergyMatrix::of_star(2, 1, 4.0, 0.25).unwrap();
        assert_eq!(m.matrix(), &(DMatrix::identity(2, 2) * 4.0));
        assert!(EnergyMatrix::of_star(3, 2, 0.5, 0.5).is_ok());
        assert!(matches!(
            EnergyMatrix::of_star(3, 2, 0.4, 0.5),
            Err(Error::EllipticityViolation { .. })
        ));
        for d in 1..=4 {
            for r in 0..=d {
                let m = EnergyMatrix::of_star(d, r, 1.0, 1.0).unwrap();
                // M[I,J] = ⋆(dx_I ∧ a dx_J) recomputed through the pairing
                for i in basis(d, r) {
                    for j in basis(d, r) {
                        let aj = m.apply(&AltForm::basis(j));
                        let v = star_wedge_scalar(&AltForm::basis(i), &aj).unwrap();
                        assert_eq!(v, m.matrix()[(i.rank(), j.rank())]);
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(EnergyMatrix::new(2, 1, m, 0.5), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn invert_isotropic() {
        for d in 1..=4 {
            for r in 0..=d {
                let m = EnergyMatrix::of_star(d, r, 2.0, 0.25).unwrap();
                let inv = m.invert().unwrap();
                assert_eq!(inv.degree(), d - r);
                let expected = DMatrix::<f64>::identity(inv.size(), inv.size()) * 0.5;
                assert!((inv.matrix() - expected).amax() < 1e-15);
            }
        }
    }
}
