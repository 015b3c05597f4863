//! Small dense real linear algebra: Lyapunov and Sylvester solves by
//! Kronecker linearization, matrix exponentials, spectra and numerical rank.
//!
//! Everything here works on desk-scale matrices (a few hundred rows at most)
//! and is written for accuracy rather than speed.

mod decomp;
mod eig;
mod expm;
mod matrix;

pub use decomp::{singular_values, solve, symmetric_eigen, Lu};
pub use eig::{eig, Complex, Spectrum, SpectrumSource};
pub use expm::mat_exp;
pub use matrix::DenseMatrix;

use thiserror::Error;

/// Relative rank tolerance used when a caller has no better information.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("{op}: shape mismatch ({detail})")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: non-finite value ({detail})")]
    NonFinite { op: &'static str, detail: String },
    #[error("{op}: matrix is singular to working precision")]
    Singular { op: &'static str },
    #[error("{op}: no convergence after {iterations} iterations")]
    NoConvergence { op: &'static str, iterations: usize },
    #[error("{op}: result overflows")]
    Overflow { op: &'static str },
    #[error("{op}: empty matrix")]
    Empty { op: &'static str },
    #[error("{op}: solution is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPositiveDefinite { op: &'static str, min_eig: f64 },
}

/// Solves `P A + Aᵀ P = -I` for symmetric positive-definite `P`.
///
/// Uses the linearization `((I ⊗ Aᵀ) + (Aᵀ ⊗ I)) vec(P) = -vec(I)`. The
/// result is symmetrized before the definiteness check.
pub fn solve_lyapunov(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::Shape {
            op: "solve_lyapunov",
            detail: format!("{:?} is not square", a.shape()),
        });
    }
    let n = a.rows();
    if n == 0 {
        return Err(LinalgError::Empty { op: "solve_lyapunov" });
    }
    let at = a.transpose();
    let eye = DenseMatrix::identity(n);
    let op = eye.kron(&at).add(&at.kron(&eye))?;
    let rhs: Vec<f64> = eye.vec().iter().map(|v| -v).collect();
    let vec_p = Lu::factor(&op)
        .map_err(|_| LinalgError::Singular { op: "solve_lyapunov" })?
        .solve(&rhs)?;
    let p = DenseMatrix::unvec(&vec_p, n, n)?.symmetrized();
    let (vals, _) = symmetric_eigen(&p)?;
    if vals[0] <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite {
            op: "solve_lyapunov",
            min_eig: vals[0],
        });
    }
    Ok(p)
}

/// `‖P A + Aᵀ P + I‖_F`.
pub fn lyapunov_residual(a: &DenseMatrix, p: &DenseMatrix) -> Result<f64, LinalgError> {
    let r = p
        .matmul(a)?
        .add(&a.transpose().matmul(p)?)?
        .add(&DenseMatrix::identity(a.rows()))?;
    Ok(r.frobenius_norm())
}

/// Solves `S X - X A = R` through `((I ⊗ S) - (Aᵀ ⊗ I)) vec(X) = vec(R)`.
pub fn solve_sylvester_kron(
    s: &DenseMatrix,
    a: &DenseMatrix,
    r: &DenseMatrix,
) -> Result<DenseMatrix, LinalgError> {
    if !s.is_square() || !a.is_square() || r.shape() != (s.rows(), a.rows()) {
        return Err(LinalgError::Shape {
            op: "solve_sylvester_kron",
            detail: format!("S {:?}, A {:?}, R {:?}", s.shape(), a.shape(), r.shape()),
        });
    }
    let n = a.rows();
    let big = s.rows();
    let op = DenseMatrix::identity(n)
        .kron(s)
        .sub(&a.transpose().kron(&DenseMatrix::identity(big)))?;
    let x = Lu::factor(&op)
        .map_err(|_| LinalgError::Singular { op: "solve_sylvester_kron" })?
        .solve(&r.vec())?;
    DenseMatrix::unvec(&x, big, n)
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(x: &DenseMatrix, tol: f64) -> Result<usize, LinalgError> {
    if x.is_empty() {
        return Err(LinalgError::Empty { op: "numerical_rank" });
    }
    if !(tol > 0.0) {
        return Err(LinalgError::NonFinite {
            op: "numerical_rank",
            detail: format!("tolerance {tol} must be positive"),
        });
    }
    let sv = singular_values(x)?;
    let largest = sv[0];
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|s| **s > tol * largest).count())
}

/// Real embedding `[[Re, -Im], [Im, Re]]` of a complex matrix.
pub fn complex_embedding(re: &DenseMatrix, im: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if re.shape() != im.shape() {
        return Err(LinalgError::Shape {
            op: "complex_embedding",
            detail: format!("{:?} vs {:?}", re.shape(), im.shape()),
        });
    }
    let (r, c) = re.shape();
    let mut out = DenseMatrix::zeros(2 * r, 2 * c);
    out.set_block(0, 0, re);
    out.set_block(0, c, &im.scale(-1.0));
    out.set_block(r, 0, im);
    out.set_block(r, c, re);
    Ok(out)
}

/// Rank of the complex matrix `re + i·im`, computed as half the rank of its
/// real embedding.
pub fn numerical_rank_complex(re: &DenseMatrix, im: &DenseMatrix, tol: f64) -> Result<usize, LinalgError> {
    let emb = complex_embedding(re, im)?;
    Ok(numerical_rank(&emb, tol)? / 2)
}
