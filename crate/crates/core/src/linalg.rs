//! Dense matrix primitives: kernels, orthogonal complements, and the norms
//! used to certify the error dynamics.
//!
//! Everything is a thin layer over [`nalgebra`]'s dense types. Rank decisions
//! use a relative singular-value cutoff (`tol * sigma_max`).

use nalgebra::{linalg::Schur, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative rank cutoff.
pub const RANK_TOL: f64 = 1e-10;

/// Sizes of the diagonal blocks along each axis of a block matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    pub row_sizes: Vec<usize>,
    pub col_sizes: Vec<usize>,
}

impl BlockPartition {
    pub fn new(row_sizes: Vec<usize>, col_sizes: Vec<usize>) -> Self {
        BlockPartition {
            row_sizes,
            col_sizes,
        }
    }

    /// Same block sizes on both axes.
    pub fn square(sizes: Vec<usize>) -> Self {
        BlockPartition {
            col_sizes: sizes.clone(),
            row_sizes: sizes,
        }
    }

    pub fn rows(&self) -> usize {
        self.row_sizes.iter().sum()
    }

    pub fn cols(&self) -> usize {
        self.col_sizes.iter().sum()
    }

    fn offsets(sizes: &[usize]) -> Vec<usize> {
        let mut out = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            out.push(acc);
            acc += s;
        }
        out
    }

    pub fn row_offsets(&self) -> Vec<usize> {
        Self::offsets(&self.row_sizes)
    }

    pub fn col_offsets(&self) -> Vec<usize> {
        Self::offsets(&self.col_sizes)
    }
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// Builds a matrix from row-major entries.
pub fn from_row_major(rows: usize, cols: usize, entries: &[f64]) -> Result<Matrix> {
    if entries.len() != rows * cols {
        return Err(Error::invalid(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            entries.len()
        )));
    }
    let m = Matrix::from_row_slice(rows, cols, entries);
    ensure_finite(&m, "matrix")?;
    Ok(m)
}

pub fn to_row_major(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Singular values together with the full right singular basis (`n x n`),
/// obtained by zero-padding wide inputs.
fn full_right_svd(m: &Matrix) -> (Vec<f64>, Matrix) {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = Matrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    (svd.singular_values.iter().copied().collect(), v_t)
}

/// Orthonormal basis of `ker m`, as columns. Returns an `n x 0` matrix when
/// `m` has full column rank.
pub fn kernel_basis(m: &Matrix, tol: f64) -> Result<Matrix> {
    if !(tol > 0.0) {
        return Err(Error::invalid("kernel tolerance must be positive"));
    }
    ensure_finite(m, "kernel input")?;
    let n = m.ncols();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if m.nrows() == 0 {
        return Ok(Matrix::identity(n, n));
    }
    let (sv, v_t) = full_right_svd(m);
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = tol * sigma_max;
    let null_rows: Vec<usize> = sv
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(k, _)| k)
        .collect();
    let mut basis = Matrix::zeros(n, null_rows.len());
    for (c, &k) in null_rows.iter().enumerate() {
        basis.set_column(c, &v_t.row(k).transpose());
    }
    Ok(basis)
}

/// Numerical rank with the same relative cutoff as [`kernel_basis`].
pub fn rank(m: &Matrix, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    sv.iter()
        .filter(|&&s| s > tol * sigma_max && s > 0.0)
        .count()
}

/// Returns `Q` with orthonormal rows such that `Q v = 0` and `[v | Q^T]` is
/// square orthogonal.
pub fn orthonormal_row_complement(v: &Matrix, tol: f64) -> Result<Matrix> {
    ensure_finite(v, "basis")?;
    let k = v.ncols();
    let gram_err = (v.transpose() * v - Matrix::identity(k, k)).amax();
    if gram_err > tol.max(1e-12) * 10.0 {
        return Err(Error::invalid(format!(
            "basis columns are not orthonormal (Gram error {gram_err:.3e})"
        )));
    }
    let complement = kernel_basis(&v.transpose(), RANK_TOL.max(tol))?;
    Ok(complement.transpose())
}

pub fn induced_two_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn induced_inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix (the input is symmetrised first).
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

fn symmetry_error(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Symmetric square root and inverse square root of a positive definite
/// matrix.
pub fn sqrt_and_inv_sqrt(r: &Matrix) -> Result<(Matrix, Matrix)> {
    if !r.is_square() {
        return Err(Error::invalid("weight matrix must be square"));
    }
    ensure_finite(r, "weight matrix")?;
    let scale = r.amax().max(1.0);
    if symmetry_error(r) > 1e-10 * scale {
        return Err(Error::invalid("weight matrix is not symmetric"));
    }
    let sym = (r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d_max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let d_min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(d_min > 1e-14 * d_max.max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid(format!(
            "weight matrix is not positive definite (min eigenvalue {d_min:.3e})"
        )));
    }
    let u = &eig.eigenvectors;
    let sqrt_d = Matrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_sqrt_d = Matrix::from_diagonal(&eig.eigenvalues.map(|d| 1.0 / d.sqrt()));
    Ok((u * sqrt_d * u.transpose(), u * inv_sqrt_d * u.transpose()))
}

/// Norm induced by `|x|_R = sqrt(x^T R x)`: the largest singular value of
/// `R^{1/2} M R^{-1/2}`.
pub fn weighted_two_norm(m: &Matrix, r: &Matrix) -> Result<f64> {
    if m.shape() != r.shape() || !m.is_square() {
        return Err(Error::invalid(
            "weighted norm needs square M and R of equal size",
        ));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let (half, inv_half) = sqrt_and_inv_sqrt(r)?;
    Ok(induced_two_norm(&(half * m * inv_half)))
}

/// The matrix of blockwise two-norms of `m` under `part`.
pub fn block_norm_matrix(m: &Matrix, part: &BlockPartition) -> Result<Matrix> {
    if part.rows() != m.nrows() || part.cols() != m.ncols() {
        return Err(Error::invalid(format!(
            "partition {}x{} does not match matrix {}x{}",
            part.rows(),
            part.cols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let ro = part.row_offsets();
    let co = part.col_offsets();
    let mut out = Matrix::zeros(part.row_sizes.len(), part.col_sizes.len());
    for (bi, (&r0, &rs)) in ro.iter().zip(&part.row_sizes).enumerate() {
        for (bj, (&c0, &cs)) in co.iter().zip(&part.col_sizes).enumerate() {
            if rs > 0 && cs > 0 {
                out[(bi, bj)] = induced_two_norm(&m.view((r0, c0), (rs, cs)).into_owned());
            }
        }
    }
    Ok(out)
}

/// Infinity norm of the matrix of blockwise two-norms.
pub fn mixed_matrix_norm(m: &Matrix, part: &BlockPartition) -> Result<f64> {
    Ok(induced_inf_norm(&block_norm_matrix(m, part)?))
}

pub fn kron(left: &Matrix, right: &Matrix) -> Matrix {
    left.kronecker(right)
}

/// Block-diagonal assembly; zero-sized blocks contribute nothing.
pub fn block_diag(blocks: &[Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        if !b.is_empty() {
            out.view_mut((r, c), b.shape()).copy_from(b);
        }
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Integer power by repeated squaring.
pub fn mat_pow(m: &Matrix, exp: u64) -> Matrix {
    let n = m.nrows();
    let mut result = Matrix::identity(n, n);
    let mut base = m.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Moduli of the eigenvalues of a square matrix, unsorted.
pub fn eigenvalue_moduli(m: &Matrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    match Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect(),
        None => {
            // Schur iteration stalled; fall back on the Gelfand limit.
            let k = 256;
            vec![induced_two_norm(&mat_pow(m, k)).powf(1.0 / k as f64)]
        }
    }
}

/// Real parts and imaginary parts of the eigenvalues, sorted by real part.
pub fn eigenvalues(m: &Matrix) -> Vec<(f64, f64)> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<(f64, f64)> = match Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .map(|z| (z.re, z.im))
            .collect(),
        None => Vec::new(),
    };
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    out
}

pub fn spectral_radius(m: &Matrix) -> f64 {
    eigenvalue_moduli(m).into_iter().fold(0.0, f64::max)
}

fn check_symmetric(m: &Matrix, tol: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid("matrix is not square"));
    }
    ensure_finite(m, "matrix")?;
    let err = symmetry_error(m);
    if err > tol.max(1e-12 * m.amax()) {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (asymmetry {err:.3e})"
        )));
    }
    Ok(())
}

/// `true` iff the smallest eigenvalue is at least `-tol`.
pub fn is_positive_semidefinite(m: &Matrix, tol: f64) -> Result<bool> {
    check_symmetric(m, tol)?;
    Ok(symmetric_eigenvalues(m)
        .first()
        .map_or(true, |&l| l >= -tol))
}

/// `true` iff the smallest eigenvalue exceeds `tol`.
pub fn is_positive_definite(m: &Matrix, tol: f64) -> Result<bool> {
    check_symmetric(m, tol)?;
    Ok(symmetric_eigenvalues(m).first().map_or(true, |&l| l > tol))
}
