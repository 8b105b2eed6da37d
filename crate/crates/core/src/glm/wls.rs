//! Rank-checked weighted least squares.
//!
//! All GLM fitting reduces to repeated solves of the weighted normal
//! equations. The solve runs on the square-root-weighted design through a
//! column-pivoted QR, which both detects rank deficiency (naming the
//! offending columns) and avoids forming `XᵀWX` explicitly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Pivot tolerance relative to the largest pivot of the decomposition.
pub(crate) const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug)]
pub(crate) struct WlsSolution {
    pub coefficients: DVector<f64>,
    /// Diagonal of `(XᵀWX)⁻¹`, in original column order.
    pub covariance_diag: Vec<f64>,
}

/// Extracts the column order of a pivoted QR as plain indices.
fn pivot_order(qr: &nalgebra::ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>, p: usize) -> Vec<usize> {
    let mut order = DMatrix::<f64>::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut order);
    order.iter().map(|v| v.round() as usize).collect()
}

/// Solves `min_b Σ w_i (y_i - x_i·b)²` for rows with positive weight.
///
/// Errors with [`Error::SingularDesign`] when the positively weighted rows do
/// not span all columns, and [`Error::DegenerateWeights`] when fewer such rows
/// exist than coefficients.
pub(crate) fn solve_weighted_least_squares(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    weights: &[f64],
) -> Result<WlsSolution> {
    let p = design.ncols();
    if p == 0 {
        return Ok(WlsSolution {
            coefficients: DVector::zeros(0),
            covariance_diag: Vec::new(),
        });
    }
    let active: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    if active.len() < p {
        return Err(Error::DegenerateWeights(format!(
            "{} positively weighted rows for {} coefficients",
            active.len(),
            p
        )));
    }

    let n = active.len();
    let mut xw = DMatrix::<f64>::zeros(n, p);
    let mut yw = DVector::<f64>::zeros(n);
    for (row, &i) in active.iter().enumerate() {
        let s = weights[i].sqrt();
        for k in 0..p {
            xw[(row, k)] = s * design[(i, k)];
        }
        yw[row] = s * response[i];
    }

    let qr = xw.col_piv_qr();
    let r = qr.r();
    let order = pivot_order(&qr, p);
    let max_pivot = r[(0, 0)].abs();
    let tol = RANK_TOLERANCE * max_pivot;
    let rank = (0..p).take_while(|&k| r[(k, k)].abs() > tol).count();
    if rank < p || max_pivot == 0.0 {
        let mut columns: Vec<usize> = order[rank..].to_vec();
        columns.sort_unstable();
        return Err(Error::SingularDesign { columns });
    }

    let z = qr.q().transpose() * yw;
    let u = r
        .solve_upper_triangular(&z)
        .ok_or(Error::SingularDesign { columns: vec![] })?;
    let rinv = r
        .solve_upper_triangular(&DMatrix::<f64>::identity(p, p))
        .ok_or(Error::SingularDesign { columns: vec![] })?;

    let mut coefficients = DVector::zeros(p);
    let mut covariance_diag = vec![0.0; p];
    for k in 0..p {
        coefficients[order[k]] = u[k];
        covariance_diag[order[k]] = rinv.row(k).iter().map(|v| v * v).sum();
    }
    Ok(WlsSolution {
        coefficients,
        covariance_diag,
    })
}

/// Rank check only: verifies the positively weighted rows span all columns.
pub(crate) fn check_full_rank(design: &DMatrix<f64>, weights: &[f64]) -> Result<()> {
    let p = design.ncols();
    if p == 0 {
        return Ok(());
    }
    let active: Vec<usize> = weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    if active.len() < p {
        return Err(Error::DegenerateWeights(format!(
            "{} positively weighted rows for {} coefficients",
            active.len(),
            p
        )));
    }
    let mut xw = DMatrix::<f64>::zeros(active.len(), p);
    for (row, &i) in active.iter().enumerate() {
        let s = weights[i].sqrt();
        for k in 0..p {
            xw[(row, k)] = s * design[(i, k)];
        }
    }
    let qr = xw.col_piv_qr();
    let r = qr.r();
    let order = pivot_order(&qr, p);
    let tol = RANK_TOLERANCE * r[(0, 0)].abs();
    let rank = (0..p).take_while(|&k| r[(k, k)].abs() > tol).count();
    if rank < p || r[(0, 0)] == 0.0 {
        let mut columns: Vec<usize> = order[rank..].to_vec();
        columns.sort_unstable();
        return Err(Error::SingularDesign { columns });
    }
    Ok(())
}

/// Validates that weights are finite and non-negative.
pub(crate) fn validate_weights(weights: &[f64]) -> Result<()> {
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::DegenerateWeights(format!(
                "weight {w} is negative or non-finite"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exact_linear_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0, 1.0, 4.0]);
        let y = DVector::from_row_slice(&[2.0, 4.0, 6.0, 8.0]);
        let w = vec![1.0; 4];
        let sol = solve_weighted_least_squares(&x, &y, &w).unwrap();
        assert_relative_eq!(sol.coefficients[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(sol.coefficients[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn names_dependent_columns() {
        let x = DMatrix::from_row_slice(4, 3, &[
            1.0, 2.0, 4.0, //
            1.0, 3.0, 6.0, //
            1.0, 4.0, 8.0, //
            1.0, 5.0, 10.0,
        ]);
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let err = solve_weighted_least_squares(&x, &y, &[1.0; 4]).unwrap_err();
        match err {
            Error::SingularDesign { columns } => {
                assert_eq!(columns.len(), 1);
                assert!(columns[0] == 1 || columns[0] == 2);
            }
            other => panic!("expected SingularDesign, got {other:?}"),
        }
    }

    #[test]
    fn zero_weights_rejected() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(matches!(
            solve_weighted_least_squares(&x, &y, &[0.0, 0.0]),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = DMatrix::from_row_slice(5, 2, &[
            1.0, 1.0, //
            1.0, 2.0, //
            1.0, 3.0, //
            1.0, 4.0, //
            1.0, 100.0,
        ]);
        let y = DVector::from_row_slice(&[2.0, 4.0, 6.0, 8.0, -1000.0]);
        let w = vec![1.0, 1.0, 1.0, 1.0, 0.0];
        let sol = solve_weighted_least_squares(&x, &y, &w).unwrap();
        assert_relative_eq!(sol.coefficients[1], 2.0, epsilon = 1e-10);
    }
}
