use super::decomp::Lu;
use super::{DenseMatrix, LinalgError};

const PADE_DEGREE: usize = 6;

/// `exp(t X)` by scaling and squaring around a diagonal Padé approximant.
pub fn mat_exp(x: &DenseMatrix, t: f64) -> Result<DenseMatrix, LinalgError> {
    if !x.is_square() {
        return Err(LinalgError::Shape {
            op: "mat_exp",
            detail: format!("{:?} is not square", x.shape()),
        });
    }
    if !t.is_finite() {
        return Err(LinalgError::NonFinite {
            op: "mat_exp",
            detail: format!("t = {t}"),
        });
    }
    let n = x.rows();
    let tx = x.scale(t);
    let norm = tx.norm_1();
    if norm == 0.0 {
        return Ok(DenseMatrix::identity(n));
    }
    // ‖tX / 2^s‖₁ ≤ 1/2 keeps the [6/6] truncation error far below 1e-16.
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(LinalgError::Overflow { op: "mat_exp" });
    }
    let scaled = tx.scale(0.5_f64.powi(squarings));

    let mut coeffs = [0.0; PADE_DEGREE + 1];
    coeffs[0] = 1.0;
    for k in 1..=PADE_DEGREE {
        coeffs[k] = coeffs[k - 1] * (PADE_DEGREE - k + 1) as f64
            / (k * (2 * PADE_DEGREE - k + 1)) as f64;
    }
    let mut numer = DenseMatrix::identity(n);
    let mut denom = DenseMatrix::identity(n);
    let mut power = DenseMatrix::identity(n);
    for (k, c) in coeffs.iter().enumerate().skip(1) {
        power = power.matmul(&scaled)?;
        let term = power.scale(*c);
        numer = numer.add(&term)?;
        denom = if k % 2 == 0 { denom.add(&term)? } else { denom.sub(&term)? };
    }
    let mut result = Lu::factor(&denom)?.solve_matrix(&numer)?;
    for _ in 0..squarings {
        result = result.matmul(&result)?;
        if !result.is_finite() {
            return Err(LinalgError::Overflow { op: "mat_exp" });
        }
    }
    if !result.is_finite() {
        return Err(LinalgError::Overflow { op: "mat_exp" });
    }
    Ok(result)
}
