//! Dense complex linear algebra kernel.
//!
//! Subspaces of `rows × cols` matrices are stored as Hilbert–Schmidt
//! orthonormal bases together with the stacked matrix of their
//! (column-major) vectorizations, so projection, coordinates and membership
//! are single matrix-vector products. The inner product is
//! `<a, b> = trace(b* a)`.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::sample;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Numerical thresholds shared by every subspace computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceProfile {
    /// Relative singular-value cutoff for numerical rank.
    pub rank_cut: f64,
    /// Bound on membership and identity residuals, relative to `max(1, ‖m‖_HS)`.
    pub residual: f64,
    /// Bound on deviation of a Gram matrix from the identity.
    pub ortho: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        Self {
            rank_cut: 1e-10,
            residual: 1e-9,
            ortho: 1e-10,
        }
    }
}

impl ToleranceProfile {
    pub fn new(rank_cut: f64, residual: f64, ortho: f64) -> Result<Self> {
        let tol = Self {
            rank_cut,
            residual,
            ortho,
        };
        tol.validate()?;
        Ok(tol)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rank_cut", self.rank_cut),
            ("residual", self.residual),
            ("ortho", self.ortho),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("tolerance {name} must be finite and > 0, got {v}")));
            }
        }
        if self.rank_cut >= 1.0 {
            return Err(invalid(format!(
                "tolerance rank_cut must be < 1, got {}",
                self.rank_cut
            )));
        }
        Ok(())
    }

    /// Residual bound for an element of Hilbert–Schmidt norm `scale`.
    pub fn bound(&self, scale: f64) -> f64 {
        self.residual * scale.max(1.0)
    }
}

/// A dense rectangular complex matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix(DMatrix<C64>);

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexMatrix({}x{}) [", self.rows(), self.cols())?;
        for i in 0..self.rows() {
            if i > 0 {
                write!(f, "; ")?;
            }
            for j in 0..self.cols() {
                let z = self.0[(i, j)];
                if j > 0 {
                    write!(f, ", ")?;
                }
                if z.im == 0.0 {
                    write!(f, "{}", z.re)?;
                } else {
                    write!(f, "{}{:+}i", z.re, z.im)?;
                }
            }
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    /// Wraps a matrix, rejecting empty shapes and non-finite entries.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(invalid(format!(
                "matrix dimensions must be positive, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if let Some(z) = m.iter().find(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(invalid(format!("non-finite matrix entry {z}")));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_raw(m: DMatrix<C64>) -> Self {
        debug_assert!(m.nrows() > 0 && m.ncols() > 0);
        Self(m)
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(invalid("ragged matrix rows"));
        }
        Self::new(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
    }

    /// Builds a real matrix from row-major data.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(invalid(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        Self::new(DMatrix::from_fn(rows, cols, |i, j| {
            C64::new(data[i * cols + j], 0.0)
        }))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::from_raw(DMatrix::identity(n, n))
    }

    /// Matrix unit with a one at `(i, j)`.
    pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut m = DMatrix::zeros(rows, cols);
        m[(i, j)] = ONE;
        Self::from_raw(m)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    /// `<self, other> = trace(other* self)`.
    pub fn hs_inner(&self, other: &Self) -> C64 {
        other.0.dotc(&self.0)
    }

    pub fn hs_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> f64 {
        spectral_norm(&self.0)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Column-major vectorization.
    pub fn to_vector(&self) -> DVector<C64> {
        DVector::from_column_slice(self.0.as_slice())
    }

    pub(crate) fn from_vector(rows: usize, cols: usize, v: &[C64]) -> Self {
        Self::from_raw(DMatrix::from_column_slice(rows, cols, v))
    }

    /// Row-major entries, the order used by file formats.
    pub fn row_major(&self) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.rows() * self.cols());
        for i in 0..self.rows() {
            for j in 0..self.cols() {
                out.push(self.0[(i, j)]);
            }
        }
        out
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 * &rhs.0)
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        ComplexMatrix(&self.0 - &rhs.0)
    }
}

/// Largest singular value of `m`.
pub fn operator_norm(m: &ComplexMatrix) -> f64 {
    m.operator_norm()
}

pub(crate) fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    linalg::singular_values(m).first().copied().unwrap_or(0.0)
}

/// Top singular value with its left and right singular vectors.
pub(crate) fn top_singular(m: &DMatrix<C64>) -> (f64, DVector<C64>, DVector<C64>) {
    let svd = linalg::thin_svd(m);
    (svd.s[0].max(0.0), svd.u.column(0).into_owned(), svd.v.column(0).into_owned())
}

/// Partial isometry `U V*` from the singular vectors above the rank cutoff.
pub(crate) fn polar_part(m: &DMatrix<C64>, rank_cut: f64) -> DMatrix<C64> {
    let svd = linalg::thin_svd(m);
    let smax = svd.s.first().copied().unwrap_or(0.0);
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    if smax == 0.0 {
        return out;
    }
    for (k, &s) in svd.s.iter().enumerate() {
        if s > rank_cut * smax {
            out += svd.u.column(k) * svd.v.column(k).adjoint();
        }
    }
    out
}

/// Smallest eigenvalue of the Hermitian part of a square matrix.
pub(crate) fn min_hermitian_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    linalg::hermitian_eigenvalues(&h)
        .first()
        .copied()
        .unwrap_or(f64::INFINITY)
}

/// Reduces `[a | b | ...]` to a factor `w` with `w w* = a a* + b b* + ...`
/// and at most `n` columns, preserving singular values and column space.
fn reduce_columns(m: DMatrix<C64>) -> DMatrix<C64> {
    if m.ncols() <= m.nrows() {
        return m;
    }
    linalg::thin_r(&m.adjoint()).adjoint()
}

/// Streams column vectors and returns an orthonormal basis of their span.
pub(crate) struct SpanAccumulator {
    n: usize,
    factor: DMatrix<C64>,
    pending: Vec<DVector<C64>>,
}

impl SpanAccumulator {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            n,
            factor: DMatrix::zeros(n, 0),
            pending: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, v: DVector<C64>) {
        debug_assert_eq!(v.len(), self.n);
        self.pending.push(v);
        if self.pending.len() >= 2 * self.n.max(8) {
            self.flush();
        }
    }

    fn flush(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let k = self.factor.ncols();
        let mut m = DMatrix::zeros(self.n, k + self.pending.len());
        m.columns_mut(0, k).copy_from(&self.factor);
        for (j, v) in self.pending.drain(..).enumerate() {
            m.set_column(k + j, &v);
        }
        self.factor = reduce_columns(m);
    }

    /// Orthonormal columns spanning the numerical column space.
    pub(crate) fn finish(mut self, rank_cut: f64) -> DMatrix<C64> {
        self.flush();
        if self.factor.ncols() == 0 {
            return DMatrix::zeros(self.n, 0);
        }
        let svd = linalg::thin_svd(&self.factor);
        let smax = svd.s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return DMatrix::zeros(self.n, 0);
        }
        let keep = svd.s.iter().take_while(|&&s| s > rank_cut * smax).count();
        svd.u.columns(0, keep).into_owned()
    }
}

/// Streams constraint rows and returns an orthonormal basis of the null space.
pub(crate) struct NullSpaceAccumulator {
    n: usize,
    factor: DMatrix<C64>,
}

impl NullSpaceAccumulator {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            n,
            factor: DMatrix::zeros(0, n),
        }
    }

    /// Appends the rows of `block` (shape `k × n`).
    pub(crate) fn push_rows(&mut self, block: &DMatrix<C64>) {
        debug_assert_eq!(block.ncols(), self.n);
        let k = self.factor.nrows();
        let mut m = DMatrix::zeros(k + block.nrows(), self.n);
        m.rows_mut(0, k).copy_from(&self.factor);
        m.rows_mut(k, block.nrows()).copy_from(block);
        self.factor = if m.nrows() > self.n { linalg::thin_r(&m) } else { m };
    }

    /// Directions with singular value `≤ rank_cut · max(σmax, scale)`; `scale`
    /// keeps constraints that are all roundoff from being read as full rank.
    pub(crate) fn finish(self, rank_cut: f64, scale: f64) -> DMatrix<C64> {
        let n = self.n;
        let mut s = DMatrix::zeros(n, n);
        let k = self.factor.nrows().min(n);
        s.rows_mut(0, k).copy_from(&self.factor.rows(0, k));
        let svd = linalg::thin_svd(&s);
        let cut = rank_cut * svd.s.first().copied().unwrap_or(0.0).max(scale);
        if cut == 0.0 {
            return DMatrix::identity(n, n);
        }
        let rank = svd.s.iter().take_while(|&&x| x > cut).count();
        svd.v.columns(rank, n - rank).into_owned()
    }}

/// Outcome of a membership test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub is_member: bool,
    /// Hilbert–Schmidt distance from the subspace.
    pub residual: f64,
}

/// Hilbert–Schmidt orthonormal basis of a subspace of `rows × cols` matrices.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    rows: usize,
    cols: usize,
    basis: Vec<ComplexMatrix>,
    stacked: DMatrix<C64>,
    tol: ToleranceProfile,
}

impl SubspaceBasis {
    /// Wraps an already orthonormal list, checking the Gram matrix.
    pub fn from_orthonormal(
        rows: usize,
        cols: usize,
        basis: Vec<ComplexMatrix>,
        tol: ToleranceProfile,
    ) -> Result<Self> {
        tol.validate()?;
        check_ambient(rows, cols)?;
        for (k, b) in basis.iter().enumerate() {
            if b.shape() != (rows, cols) {
                return Err(invalid(format!(
                    "basis element {k} is {}x{}, expected {rows}x{cols}",
                    b.rows(),
                    b.cols()
                )));
            }
        }
        let stacked = stack(rows * cols, &basis);
        let gram = stacked.adjoint() * &stacked;
        let dev = (gram - DMatrix::<C64>::identity(basis.len(), basis.len()))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if dev > tol.ortho {
            return Err(invalid(format!(
                "basis is not Hilbert-Schmidt orthonormal (Gram deviation {dev:.3e})"
            )));
        }
        Ok(Self {
            rows,
            cols,
            basis,
            stacked,
            tol,
        })
    }

    pub(crate) fn from_stacked(
        rows: usize,
        cols: usize,
        stacked: DMatrix<C64>,
        tol: ToleranceProfile,
    ) -> Self {
        debug_assert_eq!(stacked.nrows(), rows * cols);
        let basis = stacked
            .column_iter()
            .map(|c| ComplexMatrix::from_vector(rows, cols, c.as_slice()))
            .collect();
        Self {
            rows,
            cols,
            basis,
            stacked,
            tol,
        }
    }

    pub fn zero(rows: usize, cols: usize, tol: ToleranceProfile) -> Self {
        Self::from_stacked(rows, cols, DMatrix::zeros(rows * cols, 0), tol)
    }

    /// All of `M_{rows,cols}`, with the matrix units as basis.
    pub fn full(rows: usize, cols: usize, tol: ToleranceProfile) -> Self {
        let n = rows * cols;
        Self::from_stacked(rows, cols, DMatrix::identity(n, n), tol)
    }

    /// Orthonormal basis of the span of `generators`; the list may be empty.
    pub fn span<'a, I>(rows: usize, cols: usize, generators: I, tol: ToleranceProfile) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ComplexMatrix>,
    {
        tol.validate()?;
        check_ambient(rows, cols)?;
        let mut acc = SpanAccumulator::new(rows * cols);
        for (k, g) in generators.into_iter().enumerate() {
            if g.shape() != (rows, cols) {
                return Err(invalid(format!(
                    "generator {k} is {}x{}, expected {rows}x{cols}",
                    g.rows(),
                    g.cols()
                )));
            }
            acc.push(g.to_vector());
        }
        Ok(Self::from_stacked(rows, cols, acc.finish(tol.rank_cut), tol))
    }

    /// Span of owned generators produced by an iterator.
    pub(crate) fn span_owned<I>(rows: usize, cols: usize, generators: I, tol: ToleranceProfile) -> Self
    where
        I: IntoIterator<Item = ComplexMatrix>,
    {
        let mut acc = SpanAccumulator::new(rows * cols);
        for g in generators {
            debug_assert_eq!(g.shape(), (rows, cols));
            acc.push(g.to_vector());
        }
        Self::from_stacked(rows, cols, acc.finish(tol.rank_cut), tol)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn ambient_rows(&self) -> usize {
        self.rows
    }

    pub fn ambient_cols(&self) -> usize {
        self.cols
    }

    pub fn ambient_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn basis(&self) -> &[ComplexMatrix] {
        &self.basis
    }

    pub fn tol(&self) -> ToleranceProfile {
        self.tol
    }

    pub fn with_tol(mut self, tol: ToleranceProfile) -> Self {
        self.tol = tol;
        self
    }

    /// Stacked vectorized basis, `rows·cols × dim`.
    pub fn stacked(&self) -> &DMatrix<C64> {
        &self.stacked
    }

    fn check_shape(&self, m: &ComplexMatrix) -> Result<()> {
        if m.shape() != (self.rows, self.cols) {
            return Err(invalid(format!(
                "matrix is {}x{}, subspace ambient is {}x{}",
                m.rows(),
                m.cols(),
                self.rows,
                self.cols
            )));
        }
        Ok(())
    }

    /// Coordinates of the orthogonal projection of `m`.
    pub fn coordinates(&self, m: &ComplexMatrix) -> DVector<C64> {
        debug_assert_eq!(m.shape(), (self.rows, self.cols));
        self.stacked.adjoint() * m.to_vector()
    }

    pub fn combine(&self, coords: &DVector<C64>) -> ComplexMatrix {
        debug_assert_eq!(coords.len(), self.dim());
        let v = &self.stacked * coords;
        ComplexMatrix::from_vector(self.rows, self.cols, v.as_slice())
    }

    pub fn project(&self, m: &ComplexMatrix) -> ComplexMatrix {
        self.combine(&self.coordinates(m))
    }

    /// Hilbert–Schmidt distance from `m` to the subspace.
    pub fn residual(&self, m: &ComplexMatrix) -> f64 {
        let v = m.to_vector();
        let c = self.stacked.adjoint() * &v;
        (v - &self.stacked * c).norm()
    }

    /// Residual divided by `max(1, ‖m‖_HS)`; compared against `tol.residual`.
    pub fn relative_residual(&self, m: &ComplexMatrix) -> f64 {
        self.residual(m) / m.hs_norm().max(1.0)
    }

    pub fn membership(&self, m: &ComplexMatrix) -> Result<Membership> {
        self.check_shape(m)?;
        let residual = self.residual(m);
        Ok(Membership {
            is_member: residual <= self.tol.bound(m.hs_norm()),
            residual,
        })
    }

    /// Worst relative residual of `other`'s basis against `self`.
    pub fn containment_residual(&self, other: &SubspaceBasis) -> Result<f64> {
        if other.ambient_shape() != self.ambient_shape() {
            return Err(invalid(format!(
                "ambient mismatch: {}x{} vs {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        Ok(other
            .basis
            .iter()
            .map(|b| self.relative_residual(b))
            .fold(0.0, f64::max))
    }

    pub fn contains_space(&self, other: &SubspaceBasis) -> Result<bool> {
        Ok(self.containment_residual(other)? <= self.tol.residual)
    }

    /// Subspace of adjoints, living in `cols × rows` matrices.
    pub fn adjoint_space(&self) -> SubspaceBasis {
        let basis: Vec<ComplexMatrix> = self.basis.iter().map(ComplexMatrix::adjoint).collect();
        let stacked = stack(self.rows * self.cols, &basis);
        SubspaceBasis {
            rows: self.cols,
            cols: self.rows,
            basis,
            stacked,
            tol: self.tol,
        }
    }

    /// Worst relative residual of basis adjoints and pairwise products.
    /// Zero (up to rounding) iff the subspace is a *-subalgebra.
    pub fn star_algebra_residual(&self) -> f64 {
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for a in &self.basis {
            worst = worst.max(self.relative_residual(&a.adjoint()));
            for b in &self.basis {
                worst = worst.max(self.relative_residual(&(a * b)));
            }
        }
        worst
    }

    /// Gaussian random combination of the basis.
    pub fn random_element<R: Rng + ?Sized>(&self, rng: &mut R) -> ComplexMatrix {
        let coords = DVector::from_fn(self.dim(), |_, _| sample::complex_normal(rng));
        if self.dim() == 0 {
            return ComplexMatrix::zeros(self.rows, self.cols);
        }
        self.combine(&coords)
    }
}

fn check_ambient(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(invalid(format!(
            "ambient dimensions must be positive, got {rows}x{cols}"
        )));
    }
    Ok(())
}

pub(crate) fn stack(n: usize, mats: &[ComplexMatrix]) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(n, mats.len());
    for (j, m) in mats.iter().enumerate() {
        out.column_mut(j).copy_from_slice(m.as_matrix().as_slice());
    }
    out
}

fn common_shape(list: &[ComplexMatrix]) -> Result<(usize, usize)> {
    let first = list
        .first()
        .ok_or_else(|| invalid("spanning list must be nonempty"))?;
    let shape = first.shape();
    if let Some((k, m)) = list.iter().enumerate().find(|(_, m)| m.shape() != shape) {
        return Err(invalid(format!(
            "mixed dimensions: element {k} is {}x{}, element 0 is {}x{}",
            m.rows(),
            m.cols(),
            shape.0,
            shape.1
        )));
    }
    Ok(shape)
}

/// Orthonormal basis of the span of a nonempty list of equally shaped matrices.
pub fn orthonormal_basis(spanning: &[ComplexMatrix], tol: ToleranceProfile) -> Result<SubspaceBasis> {
    let (rows, cols) = common_shape(spanning)?;
    SubspaceBasis::span(rows, cols, spanning, tol)
}

pub fn membership(s: &SubspaceBasis, m: &ComplexMatrix) -> Result<Membership> {
    s.membership(m)
}

/// Worst relative residual of either basis against the other span.
pub fn span_distance(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<f64> {
    Ok(a.containment_residual(b)?.max(b.containment_residual(a)?))
}

pub fn span_equal(a: &SubspaceBasis, b: &SubspaceBasis) -> Result<bool> {
    Ok(span_distance(a, b)? <= a.tol().residual)
}

/// Minimum-norm expansion of elements over a fixed generator list.
#[derive(Debug, Clone)]
pub struct Decomposer {
    rows: usize,
    cols: usize,
    generators: DMatrix<C64>,
    pinv: DMatrix<C64>,
    tol: ToleranceProfile,
}

impl Decomposer {
    pub fn new(generators: &[ComplexMatrix], tol: ToleranceProfile) -> Result<Self> {
        let (rows, cols) = common_shape(generators)?;
        Ok(Self::with_shape(rows, cols, generators, tol))
    }

    pub(crate) fn with_shape(rows: usize, cols: usize, generators: &[ComplexMatrix], tol: ToleranceProfile) -> Self {
        let g = stack(rows * cols, generators);
        let pinv = if g.ncols() == 0 {
            DMatrix::zeros(0, rows * cols)
        } else {
            let svd = linalg::thin_svd(&g);
            let cut = tol.rank_cut * svd.s.first().copied().unwrap_or(0.0);
            let rank = svd.s.iter().take_while(|&&x| x > cut && x > 0.0).count();
            let inv = DMatrix::from_fn(rank, rank, |i, j| {
                if i == j { C64::new(1.0 / svd.s[i], 0.0) } else { ZERO }
            });
            svd.v.columns(0, rank) * inv * svd.u.columns(0, rank).adjoint()
        };
        Self {
            rows,
            cols,
            generators: g,
            pinv,
            tol,
        }
    }

    pub fn generator_count(&self) -> usize {
        self.generators.ncols()
    }

    /// Minimum-norm coefficients; fails if `m` is outside the span.
    pub fn coefficients(&self, m: &ComplexMatrix) -> Result<DVector<C64>> {
        if m.shape() != (self.rows, self.cols) {
            return Err(invalid(format!(
                "matrix is {}x{}, generators are {}x{}",
                m.rows(),
                m.cols(),
                self.rows,
                self.cols
            )));
        }
        let v = m.to_vector();
        let c = &self.pinv * &v;
        let residual = (&v - &self.generators * &c).norm();
        if residual > self.tol.bound(m.hs_norm()) {
            return Err(Error::NotInSpan { residual });
        }
        Ok(c)
    }

    pub fn recombine(&self, coeffs: &DVector<C64>) -> ComplexMatrix {
        let v = &self.generators * coeffs;
        ComplexMatrix::from_vector(self.rows, self.cols, v.as_slice())
    }

    /// Orthonormal basis of coefficient vectors that recombine to zero.
    pub fn null_space(&self) -> DMatrix<C64> {
        let mut acc = NullSpaceAccumulator::new(self.generators.ncols());
        acc.push_rows(&self.generators);
        acc.finish(self.tol.rank_cut, 0.0)
    }
}

/// Minimum-Hilbert–Schmidt-norm coefficients expressing `m` over `generators`.
pub fn decompose(m: &ComplexMatrix, generators: &[ComplexMatrix], tol: ToleranceProfile) -> Result<Vec<C64>> {
    if generators.is_empty() {
        let residual = m.hs_norm();
        return if residual <= tol.bound(residual) {
            Ok(Vec::new())
        } else {
            Err(Error::NotInSpan { residual })
        };
    }
    let d = Decomposer::new(generators, tol)?;
    Ok(d.coefficients(m)?.iter().copied().collect())
}

/// Orthonormal basis of `{x : xg = gx and xg* = g*x for every generator g}`
/// inside the `d × d` matrices.
pub fn commutant(generators: &[ComplexMatrix], d: usize, tol: ToleranceProfile) -> Result<SubspaceBasis> {
    tol.validate()?;
    check_ambient(d, d)?;
    if let Some((k, g)) = generators.iter().enumerate().find(|(_, g)| g.shape() != (d, d)) {
        return Err(invalid(format!(
            "generator {k} is {}x{}, expected {d}x{d}",
            g.rows(),
            g.cols()
        )));
    }
    let n = d * d;
    let id = DMatrix::<C64>::identity(d, d);
    let mut acc = NullSpaceAccumulator::new(n);
    for g in generators {
        for h in [g.as_matrix().clone(), g.as_matrix().adjoint()] {
            // vec(xh - hx) = (hᵀ ⊗ I - I ⊗ h) vec(x) in column-major order
            let block = h.transpose().kronecker(&id) - id.kronecker(&h);
            acc.push_rows(&block);
        }
    }
    let scale = generators.iter().map(ComplexMatrix::hs_norm).fold(0.0, f64::max);
    Ok(SubspaceBasis::from_stacked(d, d, acc.finish(tol.rank_cut, scale), tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tol() -> ToleranceProfile {
        ToleranceProfile::default()
    }

    fn e(i: usize, j: usize) -> ComplexMatrix {
        ComplexMatrix::unit(2, 2, i, j)
    }

    #[test]
    fn operator_norm_examples() {
        assert_abs_diff_eq!(operator_norm(&ComplexMatrix::identity(2)), 1.0, epsilon = 1e-14);
        assert_eq!(operator_norm(&ComplexMatrix::zeros(3, 2)), 0.0);
        let m = ComplexMatrix::from_real(2, 2, &[0.0, 2.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(operator_norm(&m), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn non_finite_entries_rejected() {
        let err = ComplexMatrix::from_real(1, 2, &[1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        let err = ComplexMatrix::from_rows(&[vec![C64::new(f64::INFINITY, 0.0)]]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn tolerance_validation() {
        assert!(ToleranceProfile::new(1.0, 1e-9, 1e-10).is_err());
        assert!(ToleranceProfile::new(1e-10, 0.0, 1e-10).is_err());
        assert!(ToleranceProfile::new(1e-10, 1e-9, f64::NAN).is_err());
        assert!(ToleranceProfile::new(1e-12, 1e-8, 1e-9).is_ok());
    }

    #[test]
    fn orthonormal_basis_examples() {
        let s = orthonormal_basis(&[e(0, 0), e(0, 0).scale(C64::new(2.0, 0.0))], tol()).unwrap();
        assert_eq!(s.dim(), 1);

        let s = orthonormal_basis(&[e(0, 0), e(1, 1)], tol()).unwrap();
        assert_eq!(s.dim(), 2);
        let gram = s.stacked().adjoint() * s.stacked();
        assert!((gram - DMatrix::<C64>::identity(2, 2)).norm() < 1e-12);

        // Gram matrix of {E11+E12, E11-E12} is [[2,0],[0,2]], determinant 4.
        let a = &e(0, 0) + &e(0, 1);
        let b = &e(0, 0) - &e(0, 1);
        assert_eq!(orthonormal_basis(&[a, b], tol()).unwrap().dim(), 2);
    }

    #[test]
    fn orthonormal_basis_errors() {
        assert!(matches!(orthonormal_basis(&[], tol()), Err(Error::InvalidInput(_))));
        let mixed = [ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 3)];
        assert!(matches!(orthonormal_basis(&mixed, tol()), Err(Error::InvalidInput(_))));
        let zero = orthonormal_basis(&[ComplexMatrix::zeros(2, 2)], tol()).unwrap();
        assert_eq!(zero.dim(), 0);
    }

    #[test]
    fn membership_examples() {
        let s = orthonormal_basis(&[e(0, 0), e(1, 1)], tol()).unwrap();
        let m = membership(&s, &e(0, 0)).unwrap();
        assert!(m.is_member && m.residual < 1e-14);
        let m = membership(&s, &e(0, 1)).unwrap();
        assert!(!m.is_member);
        assert_abs_diff_eq!(m.residual, 1.0, epsilon = 1e-14);
        let m = membership(&s, &ComplexMatrix::zeros(2, 2)).unwrap();
        assert!(m.is_member && m.residual == 0.0);
        assert!(membership(&s, &ComplexMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn span_equal_examples() {
        let a = orthonormal_basis(&[e(0, 0)], tol()).unwrap();
        let b = orthonormal_basis(&[e(0, 0).scale(C64::new(3.0, 0.0))], tol()).unwrap();
        assert!(span_equal(&a, &b).unwrap());
        let c = orthonormal_basis(&[e(0, 0), e(1, 1)], tol()).unwrap();
        assert!(!span_equal(&a, &c).unwrap());
        let d = orthonormal_basis(&[&e(0, 0) + &e(1, 1), &e(0, 0) - &e(1, 1)], tol()).unwrap();
        assert!(span_equal(&c, &d).unwrap());
        let other = SubspaceBasis::full(3, 3, tol());
        assert!(span_equal(&a, &other).is_err());
    }

    #[test]
    fn decompose_examples() {
        let c = decompose(&e(0, 0), &[e(0, 0)], tol()).unwrap();
        assert_abs_diff_eq!(c[0].re, 1.0, epsilon = 1e-14);
        // min-norm solution of c1 + c2 = 1 is (1/2, 1/2)
        let c = decompose(&e(0, 0), &[e(0, 0), e(0, 0)], tol()).unwrap();
        assert_abs_diff_eq!(c[0].re, 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(c[1].re, 0.5, epsilon = 1e-14);
        match decompose(&e(0, 1), &[e(0, 0)], tol()) {
            Err(Error::NotInSpan { residual }) => assert_abs_diff_eq!(residual, 1.0, epsilon = 1e-14),
            other => panic!("expected NotInSpan, got {other:?}"),
        }
    }

    #[test]
    fn commutant_examples() {
        let all: Vec<_> = (0..2).flat_map(|i| (0..2).map(move |j| e(i, j))).collect();
        assert_eq!(commutant(&all, 2, tol()).unwrap().dim(), 1);
        let diag = commutant(&[e(0, 0), e(1, 1)], 2, tol()).unwrap();
        assert_eq!(diag.dim(), 2);
        assert!(diag.membership(&e(0, 0)).unwrap().is_member);
        assert!(diag.membership(&e(1, 1)).unwrap().is_member);
        assert_eq!(commutant(&[], 2, tol()).unwrap().dim(), 4);
        assert!(commutant(&[ComplexMatrix::zeros(2, 3)], 2, tol()).is_err());
    }

    #[test]
    fn decomposer_null_space_recombines_to_zero() {
        let gens = [e(0, 0), e(0, 0), e(1, 1)];
        let d = Decomposer::new(&gens, tol()).unwrap();
        let ns = d.null_space();
        assert_eq!(ns.ncols(), 1);
        let z = d.recombine(&ns.column(0).into_owned());
        assert!(z.hs_norm() < 1e-12);
    }

    #[test]
    fn span_accumulator_handles_many_generators() {
        // 200 generators in a 4-dimensional ambient space force several reductions.
        let mut rng = sample::rng_from_seed(3);
        let gens: Vec<_> = (0..200).map(|_| sample::gaussian_matrix(2, 2, &mut rng)).collect();
        let s = SubspaceBasis::span(2, 2, &gens, tol()).unwrap();
        assert_eq!(s.dim(), 4);
        let low: Vec<_> = (0..200)
            .map(|k| e(0, 0).scale(C64::new(k as f64, 1.0)))
            .collect();
        assert_eq!(SubspaceBasis::span(2, 2, &low, tol()).unwrap().dim(), 1);
    }
}
