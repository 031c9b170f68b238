//! Dense symmetric linear algebra and norm utilities.
//!
//! Everything downstream works with [`Matrix`] / [`Vector`] (thin aliases over
//! nalgebra's dynamically sized types) and with [`Exponent`], an extended real
//! in `[1, ∞]` used both for confidence-set norms and for their duals.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Smallest eigenvalue accepted when a negative matrix power is requested.
pub const MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("smallest eigenvalue {min_eigenvalue:e} is below {MIN_EIGENVALUE:e}; supply a ridge")]
    Singular { min_eigenvalue: f64 },
    #[error("cannot rotate the zero vector")]
    ZeroVector,
    #[error("norm exponent must be >= 1, got {0}")]
    InvalidExponent(f64),
}

/// Norm exponent `p ∈ [1, ∞]` with an explicit infinity sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub const ONE: Exponent = Exponent::Finite(1.0);
    pub const TWO: Exponent = Exponent::Finite(2.0);

    pub fn new(p: f64) -> Result<Self, LinalgError> {
        if p == f64::INFINITY {
            Ok(Exponent::Infinity)
        } else if p.is_finite() && p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(LinalgError::InvalidExponent(p))
        }
    }

    /// `1/p` under the convention `1/∞ = 0`.
    pub fn reciprocal(self) -> f64 {
        match self {
            Exponent::Finite(p) => 1.0 / p,
            Exponent::Infinity => 0.0,
        }
    }

    /// The Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Exponent {
        dual_exponent(self)
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Exponent::Finite(p) => p,
            Exponent::Infinity => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinity)
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(p) => write!(f, "{p}"),
            Exponent::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Exponent {
    type Err = LinalgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Exponent::Infinity);
        }
        let p: f64 = t.parse().map_err(|_| LinalgError::InvalidExponent(f64::NAN))?;
        Exponent::new(p)
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(p) => serializer.serialize_f64(*p),
            Exponent::Infinity => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(p) => Exponent::new(p).map_err(serde::de::Error::custom),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Which principal power of a symmetric PSD matrix to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixPower {
    /// `+1/2`
    Sqrt,
    /// `-1/2`
    InvSqrt,
    /// `-1`
    Inverse,
}

impl MatrixPower {
    fn apply(self, lambda: f64) -> f64 {
        match self {
            MatrixPower::Sqrt => lambda.max(0.0).sqrt(),
            MatrixPower::InvSqrt => 1.0 / lambda.sqrt(),
            MatrixPower::Inverse => 1.0 / lambda,
        }
    }

    fn is_negative(self) -> bool {
        !matches!(self, MatrixPower::Sqrt)
    }
}

/// `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Principal power of `M + ridge·I` through a symmetric eigendecomposition.
///
/// The input is symmetrized first. Negative powers require the smallest
/// eigenvalue of `M + ridge·I` to exceed [`MIN_EIGENVALUE`].
pub fn sym_matrix_power(m: &Matrix, power: MatrixPower, ridge: f64) -> Result<Matrix, LinalgError> {
    let eig = regularized_eigen(m, ridge)?;
    if power.is_negative() {
        let min = eig.eigenvalues.min();
        if min < MIN_EIGENVALUE {
            return Err(LinalgError::Singular { min_eigenvalue: min });
        }
    }
    Ok(compose(&eig, |l| power.apply(l)))
}

/// Returns `(M + ridge I)^{1/2}` and `(M + ridge I)^{-1/2}` from one decomposition.
pub fn sqrt_and_inv_sqrt(m: &Matrix, ridge: f64) -> Result<(Matrix, Matrix), LinalgError> {
    let eig = regularized_eigen(m, ridge)?;
    let min = eig.eigenvalues.min();
    if min < MIN_EIGENVALUE {
        return Err(LinalgError::Singular { min_eigenvalue: min });
    }
    Ok((compose(&eig, |l| MatrixPower::Sqrt.apply(l)), compose(&eig, |l| MatrixPower::InvSqrt.apply(l))))
}

fn regularized_eigen(m: &Matrix, ridge: f64) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.iter().any(|x| !x.is_finite()) || !ridge.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mut sym = symmetrize(m);
    for i in 0..sym.nrows() {
        sym[(i, i)] += ridge;
    }
    Ok(SymmetricEigen::new(sym))
}

fn compose(eig: &SymmetricEigen<f64, nalgebra::Dyn>, f: impl Fn(f64) -> f64) -> Matrix {
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let w = f(lambda);
        scaled.column_mut(j).scale_mut(w);
    }
    symmetrize(&(scaled * v.transpose()))
}

/// Standard ℓp norm; `p = ∞` returns the largest absolute entry.
pub fn lp_norm(v: &[f64], p: Exponent) -> f64 {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    match p {
        Exponent::Infinity => max,
        Exponent::Finite(1.0) => v.iter().map(|x| x.abs()).sum(),
        Exponent::Finite(p) => {
            if max == 0.0 {
                return 0.0;
            }
            if p == 2.0 {
                let s: f64 = v.iter().map(|x| (x / max).powi(2)).sum();
                return max * s.sqrt();
            }
            let s: f64 = v.iter().map(|x| (x.abs() / max).powf(p)).sum();
            max * s.powf(1.0 / p)
        }
    }
}

/// Hölder conjugate: `1/p + 1/q = 1`, with `1/∞ = 0` and `1/0 = ∞`.
pub fn dual_exponent(p: Exponent) -> Exponent {
    match p {
        Exponent::Infinity => Exponent::Finite(1.0),
        Exponent::Finite(1.0) => Exponent::Infinity,
        Exponent::Finite(p) => Exponent::Finite(p / (p - 1.0)),
    }
}

/// Householder reflection `U` with `U·(x/‖x‖₂) = e₁`, hence `‖Ux‖₁ = ‖x‖₂`.
///
/// No orthogonal matrix can push `‖Ux‖₁` below `‖x‖₂`, so this is the
/// minimizing rotation for the ℓ1 complexity.
pub fn align_rotation(x: &Vector) -> Result<Matrix, LinalgError> {
    let d = x.len();
    let norm = x.norm();
    if norm == 0.0 || d == 0 {
        return Err(LinalgError::ZeroVector);
    }
    if !norm.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let mut w = x / norm;
    w[0] -= 1.0;
    let ww = w.dot(&w);
    if ww < 1e-28 {
        return Ok(Matrix::identity(d, d));
    }
    Ok(Matrix::identity(d, d) - (&w * w.transpose()) * (2.0 / ww))
}
