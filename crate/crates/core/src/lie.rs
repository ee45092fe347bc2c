//! Dense `r x r` matrices with the O(r)/U(r) group and so(r)/u(r) algebra
//! operations used by the field modules.
//!
//! Entries are always stored as complex numbers. Real (orthogonal) bundles
//! keep every imaginary part at exactly zero; every operation here maps real
//! inputs to real outputs, so the scalar kind is a property of the bundle
//! rather than of the storage.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MAX_RANK: usize = 8;

pub const I: C64 = C64::new(0.0, 1.0);

/// Scalar field of the bundle fibres.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarKind {
    /// Orthogonal structure group, so(r) algebra.
    Real,
    /// Unitary structure group, u(r) algebra.
    Complex,
}

impl fmt::Display for ScalarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarKind::Real => f.write_str("real"),
            ScalarKind::Complex => f.write_str("complex"),
        }
    }
}

/// Row-major `r x r` complex matrix. Ranks up to 2 live inline.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixValue {
    rank: usize,
    data: SmallVec<[C64; 4]>,
}

impl MatrixValue {
    pub fn zeros(rank: usize) -> Self {
        debug_assert!((1..=MAX_RANK).contains(&rank));
        Self {
            rank,
            data: SmallVec::from_elem(C64::new(0.0, 0.0), rank * rank),
        }
    }

    pub fn identity(rank: usize) -> Self {
        Self::scalar(rank, C64::new(1.0, 0.0))
    }

    /// `c * Id`.
    pub fn scalar(rank: usize, c: C64) -> Self {
        let mut m = Self::zeros(rank);
        for i in 0..rank {
            m.data[i * rank + i] = c;
        }
        m
    }

    pub fn from_fn(rank: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rank);
        for i in 0..rank {
            for j in 0..rank {
                m.data[i * rank + j] = f(i, j);
            }
        }
        m
    }

    pub fn from_row_slice(rank: usize, entries: &[C64]) -> Result<Self> {
        if entries.len() != rank * rank {
            return Err(Error::Dimension(format!(
                "expected {} entries for rank {rank}, got {}",
                rank * rank,
                entries.len()
            )));
        }
        Ok(Self {
            rank,
            data: SmallVec::from_slice(entries),
        })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let rank = rows.len();
        Self::from_fn(rank, |i, j| C64::new(rows[i][j], 0.0))
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.set(i, i, e);
        }
        m
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.rank + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.rank + j] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Conjugate transpose; this is `m^{*h}` for the standard fibre metric.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.rank, |i, j| self.get(j, i).conj())
    }

    pub fn trace(&self) -> C64 {
        (0..self.rank).map(|i| self.get(i, i)).sum()
    }

    /// Squared Frobenius norm, `Tr(m m^*)`.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// True when every imaginary part is exactly zero.
    pub fn is_real(&self) -> bool {
        self.data.iter().all(|z| z.im == 0.0)
    }

    /// `Re Tr(self other^*)` without the rank check of [`inner_product`].
    #[inline]
    pub fn real_dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.rank, other.rank);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = self.clone();
        m.scale_mut(s);
        m
    }

    pub fn scale_mut(&mut self, s: f64) {
        for z in self.data.iter_mut() {
            *z *= s;
        }
    }

    pub fn scale_c(&self, c: C64) -> Self {
        let mut m = self.clone();
        for z in m.data.iter_mut() {
            *z *= c;
        }
        m
    }

    /// `self += alpha * x`.
    #[inline]
    pub fn axpy(&mut self, alpha: f64, x: &Self) {
        debug_assert_eq!(self.rank, x.rank);
        for (a, b) in self.data.iter_mut().zip(x.data.iter()) {
            *a += b * alpha;
        }
    }

    /// Adds `c * Id`.
    pub fn add_scalar(&mut self, c: C64) {
        for i in 0..self.rank {
            self.data[i * self.rank + i] += c;
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.rank, other.rank);
        let r = self.rank;
        let mut out = Self::zeros(r);
        for i in 0..r {
            for k in 0..r {
                let a = self.data[i * r + k];
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for j in 0..r {
                    out.data[i * r + j] += a * other.data[k * r + j];
                }
            }
        }
        out
    }

    /// `[self, other] = self other - other self`.
    pub fn commutator(&self, other: &Self) -> Self {
        let mut c = self.matmul(other);
        c -= &other.matmul(self);
        c
    }

    /// `g self g^{-1}` for unitary `g` (uses `g^*` as the inverse).
    pub fn conjugate_by(&self, g: &Self) -> Self {
        g.matmul(self).matmul(&g.adjoint())
    }

    pub fn max_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn to_dmatrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.rank, self.rank, |i, j| self.get(i, j))
    }

    pub fn from_dmatrix(m: &DMatrix<C64>) -> Self {
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    pub fn inverse(&self) -> Result<Self> {
        self.to_dmatrix()
            .try_inverse()
            .map(|m| Self::from_dmatrix(&m))
            .ok_or_else(|| Error::Metric("singular matrix".into()))
    }

    pub fn determinant(&self) -> C64 {
        self.to_dmatrix().determinant()
    }

    /// `(m + m^*)/2`.
    pub fn hermitian_part(&self) -> Self {
        let mut h = self.clone();
        h += &self.adjoint();
        h.scale_mut(0.5);
        h
    }

    /// Eigen-decomposition of the Hermitian part. Eigenvalues ascending.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, DMatrix<C64>) {
        let eig = nalgebra::SymmetricEigen::new(self.hermitian_part().to_dmatrix());
        let mut order: Vec<usize> = (0..self.rank).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = DMatrix::from_fn(self.rank, self.rank, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    /// Applies a real function to the spectrum of the Hermitian part.
    pub fn hermitian_map(&self, f: impl Fn(f64) -> f64) -> Self {
        let (values, vectors) = self.hermitian_eigen();
        let d = DMatrix::from_fn(self.rank, self.rank, |i, j| {
            if i == j {
                C64::new(f(values[i]), 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let m = &vectors * d * vectors.adjoint();
        Self::from_dmatrix(&m).hermitian_part()
    }

    pub fn min_hermitian_eigenvalue(&self) -> f64 {
        if self.rank == 1 {
            return self.data[0].re;
        }
        self.hermitian_eigen().0[0]
    }
}

impl fmt::Display for MatrixValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rank {
            let row: Vec<String> = (0..self.rank).map(|j| format!("{:.6}", self.get(i, j))).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl AddAssign<&MatrixValue> for MatrixValue {
    fn add_assign(&mut self, rhs: &MatrixValue) {
        debug_assert_eq!(self.rank, rhs.rank);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl SubAssign<&MatrixValue> for MatrixValue {
    fn sub_assign(&mut self, rhs: &MatrixValue) {
        debug_assert_eq!(self.rank, rhs.rank);
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl Add for &MatrixValue {
    type Output = MatrixValue;
    fn add(self, rhs: &MatrixValue) -> MatrixValue {
        let mut m = self.clone();
        m += rhs;
        m
    }
}

impl Sub for &MatrixValue {
    type Output = MatrixValue;
    fn sub(self, rhs: &MatrixValue) -> MatrixValue {
        let mut m = self.clone();
        m -= rhs;
        m
    }
}

impl Mul for &MatrixValue {
    type Output = MatrixValue;
    fn mul(self, rhs: &MatrixValue) -> MatrixValue {
        self.matmul(rhs)
    }
}

impl Mul<f64> for &MatrixValue {
    type Output = MatrixValue;
    fn mul(self, rhs: f64) -> MatrixValue {
        self.scale(rhs)
    }
}

impl Neg for &MatrixValue {
    type Output = MatrixValue;
    fn neg(self) -> MatrixValue {
        self.scale(-1.0)
    }
}

/// Skew (anti-self-adjoint) matrix: an element of so(r) or u(r).
#[derive(Clone, Debug, PartialEq)]
pub struct AlgebraElement(MatrixValue);

impl AlgebraElement {
    pub const SKEW_TOL: f64 = 1e-12;

    /// Validates the skew invariant relative to the largest entry.
    pub fn new(value: MatrixValue) -> Result<Self> {
        let scale = value.max_abs().max(1.0);
        let defect = (&value + &value.adjoint()).max_abs();
        if defect > Self::SKEW_TOL * scale || !value.is_finite() {
            return Err(Error::Dimension(format!("matrix is not skew (defect {defect:e})")));
        }
        Ok(Self(value))
    }

    pub fn zero(rank: usize) -> Self {
        Self(MatrixValue::zeros(rank))
    }

    pub fn value(&self) -> &MatrixValue {
        &self.0
    }

    pub fn into_inner(self) -> MatrixValue {
        self.0
    }
}

/// Orthogonal or unitary matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement(MatrixValue);

impl GroupElement {
    pub const UNITARY_TOL: f64 = 1e-10;

    pub fn new(value: MatrixValue) -> Result<Self> {
        let defect = unitarity_defect(&value);
        if defect > Self::UNITARY_TOL {
            return Err(Error::Dimension(format!("matrix is not unitary (defect {defect:e})")));
        }
        Ok(Self(value))
    }

    pub fn identity(rank: usize) -> Self {
        Self(MatrixValue::identity(rank))
    }

    pub fn value(&self) -> &MatrixValue {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self(self.0.matmul(&other.0))
    }

    /// `g m g^{-1}`.
    pub fn conjugate(&self, m: &MatrixValue) -> MatrixValue {
        m.conjugate_by(&self.0)
    }

    /// `g^{-1} m g`.
    pub fn conjugate_inverse(&self, m: &MatrixValue) -> MatrixValue {
        self.0.adjoint().matmul(m).matmul(&self.0)
    }

    pub fn is_identity(&self) -> bool {
        self.0.max_diff(&MatrixValue::identity(self.0.rank())) == 0.0
    }
}

/// `max |g^* g - Id|`.
pub fn unitarity_defect(g: &MatrixValue) -> f64 {
    g.adjoint().matmul(g).max_diff(&MatrixValue::identity(g.rank()))
}

/// `<a, b> = Re Tr(a b^{*h})`.
pub fn inner_product(a: &MatrixValue, b: &MatrixValue) -> Result<f64> {
    if a.rank() != b.rank() {
        return Err(Error::Dimension(format!(
            "inner product of rank {} and rank {} matrices",
            a.rank(),
            b.rank()
        )));
    }
    Ok(a.real_dot(b))
}

/// `(m - m^*)/2`.
pub fn skew_project(m: &MatrixValue) -> AlgebraElement {
    AlgebraElement(skew_part(m))
}

/// Same as [`skew_project`] but returns the bare matrix.
pub fn skew_part(m: &MatrixValue) -> MatrixValue {
    let r = m.rank();
    MatrixValue::from_fn(r, |i, j| (m.get(i, j) - m.get(j, i).conj()) * 0.5)
}

/// `m - (tr m / r) Id`.
pub fn trace_free_part(m: &MatrixValue) -> MatrixValue {
    let mut out = m.clone();
    out.add_scalar(-m.trace() / m.rank() as f64);
    out
}

const EXP_TAYLOR_TERMS: usize = 18;
const EXP_SCALED_NORM: f64 = 0.5;

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn exp_map(a: &AlgebraElement) -> GroupElement {
    let mut g = expm(a.value());
    // Reorthogonalising is unnecessary at this accuracy; only clean the real case.
    if a.value().is_real() {
        for z in g.as_mut_slice() {
            z.im = 0.0;
        }
    }
    GroupElement(g)
}

/// General matrix exponential (no skew assumption).
pub fn expm(m: &MatrixValue) -> MatrixValue {
    let r = m.rank();
    let norm = m.norm_sq().sqrt();
    let squarings = if norm > EXP_SCALED_NORM {
        (norm / EXP_SCALED_NORM).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m.scale(0.5f64.powi(squarings));
    let mut result = MatrixValue::identity(r);
    let mut term = MatrixValue::identity(r);
    for k in 1..=EXP_TAYLOR_TERMS {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        result += &term;
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    result
}
