//! Stochastic homogenization of differential forms on triadic cubical
//! complexes: exterior algebra, Whitney-type discretization, random
//! environments, the subadditive quantities `ν`, `ν*`, `J` and the Monte
//! Carlo estimators built on them.

pub mod complex;
pub mod dirichlet;
pub mod env;
pub mod error;
pub mod exterior;
pub mod homogenize;
pub mod linalg;
pub mod scalar;
pub mod solver;

pub use error::{Error, Result};

/// Exact scalar for the combinatorial layer.
pub type Rational = num_rational::Ratio<i64>;

pub type Form = exterior::AltForm<f64>;
pub type Form32 = exterior::AltForm<f32>;
pub type RationalForm = exterior::AltForm<Rational>;

pub type RealCochain = complex::Cochain<f64>;
pub type IntCochain = complex::Cochain<i64>;
pub type RationalCochain = complex::Cochain<Rational>;

pub type Field = complex::CellField<f64>;
