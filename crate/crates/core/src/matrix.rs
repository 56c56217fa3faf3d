//! Dense real matrix utilities: operator norm, matrix exponential,
//! symmetric matrices and their vectorization, and the symmetrized
//! product `<BA> = (BA + (BA)^T) / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest value of `|t| * ||A||` accepted by [`mat_exp`].
const EXP_ARGUMENT_LIMIT: f64 = 700.0;

/// A dense real `d x d` matrix with finite entries and `d >= 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat(DMatrix<f64>);

impl Mat {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::InvalidInput(format!(
                "matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "matrix dimension must be >= 2, got {}",
                entries.nrows()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Mat(entries))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("matrix rows must all have length d".into()));
        }
        Mat::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn zeros(d: usize) -> Result<Self> {
        Mat::new(DMatrix::zeros(d, d))
    }

    pub fn identity(d: usize) -> Result<Self> {
        Mat::new(DMatrix::identity(d, d))
    }

    /// `A = a I`.
    pub fn isotropic(d: usize, a: f64) -> Result<Self> {
        Mat::new(DMatrix::identity(d, d) * a)
    }

    /// Shear flow matrix: `a_12 = a`, every other entry zero.
    pub fn shear(d: usize, a: f64) -> Result<Self> {
        let mut m = DMatrix::zeros(d, d);
        if d >= 2 {
            m[(0, 1)] = a;
        }
        Mat::new(m)
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        Mat::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn scaled(&self, c: f64) -> Mat {
        Mat(&self.0 * c)
    }

    pub fn transpose(&self) -> Mat {
        Mat(self.0.transpose())
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        Mat(&self.0 * &other.0)
    }

    /// Matrix-vector product into a caller-provided buffer.
    pub fn apply_into(&self, k: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.0[(i, j)] * k[j];
            }
            out[i] = s;
        }
    }

    pub fn apply(&self, k: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(k, &mut out);
        out
    }

    /// Rows as nested vectors, the serialized form.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Mat::from_rows(&rows)
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        m.to_rows()
    }
}

/// Largest singular value of `A`, i.e. `sup_{|k|=1} |Ak|`.
pub fn operator_norm(a: &Mat) -> f64 {
    spectral_norm(a.as_matrix())
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// `e^{tA}`. Nilpotent matrices (`A^d = 0` exactly) are summed as a
/// terminating series; everything else goes through scaling and squaring.
pub fn mat_exp(a: &Mat, t: f64) -> Result<Mat> {
    if !t.is_finite() {
        return Err(Error::InvalidInput(format!("non-finite time {t}")));
    }
    exp_dense(a.as_matrix(), t).map(Mat)
}

pub(crate) fn exp_dense(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let arg = t.abs() * spectral_norm(a);
    if arg > EXP_ARGUMENT_LIMIT {
        return Err(Error::Overflow(arg));
    }
    let scaled = a * t;
    let out = match nilpotent_exp(&scaled) {
        Some(e) => e,
        None => scaled.exp(),
    };
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow(arg));
    }
    debug_assert_eq!(out.nrows(), n);
    Ok(out)
}

fn nilpotent_exp(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut power = DMatrix::identity(n, n);
    let mut terms = Vec::with_capacity(n);
    for _ in 0..n {
        terms.push(power.clone());
        power = &power * m;
    }
    if power.iter().any(|&x| x != 0.0) {
        return None;
    }
    let mut sum = DMatrix::zeros(n, n);
    let mut factorial = 1.0;
    for (k, term) in terms.iter().enumerate() {
        if k > 0 {
            factorial *= k as f64;
        }
        sum += term / factorial;
    }
    Some(sum)
}

/// A real symmetric matrix, stored with the upper triangle mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SymMat(DMatrix<f64>);

impl SymMat {
    /// Accepts a matrix symmetric to within `1e-12` relative; the stored
    /// value is the mirrored upper triangle.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "symmetric matrix must be square with d >= 2, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("symmetric matrix has non-finite entries".into()));
        }
        let scale = m.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()));
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SymMat::from_upper(m))
    }

    /// Mirrors the upper triangle of `m`; the lower triangle is ignored.
    pub fn from_upper(mut m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                m[(j, i)] = m[(i, j)];
            }
        }
        SymMat(m)
    }

    pub fn identity(d: usize) -> Self {
        SymMat(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMat(DMatrix::zeros(d, d))
    }

    pub fn from_diagonal(values: &[f64]) -> Result<Self> {
        SymMat::new(DMatrix::from_diagonal(&DVector::from_column_slice(values)))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("matrix rows must all have length d".into()));
        }
        SymMat::new(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, c: f64) -> SymMat {
        SymMat(&self.0 * c)
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMat) -> SymMat {
        SymMat(&self.0 - &other.0)
    }

    /// Traceless part `G - (Tr G / d) I`.
    pub fn deviatoric(&self) -> SymMat {
        let d = self.dim();
        let shift = self.trace() / d as f64;
        SymMat(&self.0 - DMatrix::identity(d, d) * shift)
    }

    /// `B : k (x) k`.
    pub fn contract(&self, k: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.0[(i, j)] * k[j];
            }
            s += k[i] * row;
        }
        s
    }

    /// `M^T B M`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> SymMat {
        SymMat::from_upper(m.transpose() * &self.0 * m)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.0.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// Operator norm; equals the largest absolute eigenvalue.
    pub fn norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
    }

    pub fn to_symvec(&self) -> SymVec {
        let d = self.dim();
        let coords = sym_index(d).into_iter().map(|(i, j)| self.0[(i, j)]).collect::<Vec<_>>();
        SymVec {
            dim: d,
            coords: DVector::from_vec(coords),
        }
    }

    pub fn from_symvec(v: &SymVec) -> SymMat {
        let d = v.dim;
        let mut m = DMatrix::zeros(d, d);
        for (c, (i, j)) in sym_index(d).into_iter().enumerate() {
            m[(i, j)] = v.coords[c];
            m[(j, i)] = v.coords[c];
        }
        SymMat(m)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        SymMat::from_rows(&rows)
    }
}

impl From<SymMat> for Vec<Vec<f64>> {
    fn from(m: SymMat) -> Self {
        m.to_rows()
    }
}

/// Coordinates of a symmetric matrix in the basis `{E_ii} u {E_ij + E_ji}`,
/// ordered lexicographically over `i <= j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymVec {
    pub dim: usize,
    pub coords: DVector<f64>,
}

impl SymVec {
    pub fn new(dim: usize, coords: DVector<f64>) -> Result<Self> {
        if coords.len() != sym_len(dim) {
            return Err(Error::DimensionMismatch {
                expected: sym_len(dim),
                actual: coords.len(),
            });
        }
        Ok(SymVec { dim, coords })
    }

    /// Trace of the represented matrix.
    pub fn trace(&self) -> f64 {
        sym_index(self.dim)
            .into_iter()
            .zip(self.coords.iter())
            .filter(|((i, j), _)| i == j)
            .map(|(_, c)| c)
            .sum()
    }
}

pub fn sym_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// The `(i, j)` pairs with `i <= j` in basis order.
pub fn sym_index(d: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(sym_len(d));
    for i in 0..d {
        for j in i..d {
            idx.push((i, j));
        }
    }
    idx
}

/// `<BA> = (BA + A^T B) / 2`.
pub fn sym_product(b: &SymMat, a: &Mat) -> Result<SymMat> {
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: b.dim(),
            actual: a.dim(),
        });
    }
    let ba = b.as_matrix() * a.as_matrix();
    Ok(SymMat::from_upper((&ba + ba.transpose()) * 0.5))
}
