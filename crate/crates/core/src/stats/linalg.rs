//! Householder QR least squares on small dense column-major matrices.

/// QR factorization outputs needed for inference: solution, the p x p
/// upper-triangular R, and the residual sum of squares.
#[derive(Debug)]
pub struct QrLeastSquares {
    pub coefficients: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    pub sse: f64,
}

/// Solves min ||y - X b||^2 by Householder QR. `columns` holds the p
/// columns of X, each of length n >= p. Returns Err(j) if column j makes
/// the matrix numerically rank deficient.
pub fn qr_least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<QrLeastSquares, usize> {
    let p = columns.len();
    let n = y.len();
    debug_assert!(columns.iter().all(|c| c.len() == n));
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    let mut qty = y.to_vec();

    let max_col_norm = a
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let tol = f64::EPSILON * (n.max(p) as f64) * max_col_norm.max(1.0);

    for j in 0..p {
        // Householder vector for column j below the diagonal.
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= tol {
            return Err(j);
        }
        let alpha = if a[j][j] >= 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        if vtv > 0.0 {
            let apply = |target: &mut [f64]| {
                let dot: f64 = v.iter().zip(target[j..].iter()).map(|(a, b)| a * b).sum();
                let scale = 2.0 * dot / vtv;
                for (vi, ti) in v.iter().zip(target[j..].iter_mut()) {
                    *ti -= scale * vi;
                }
            };
            for col in a.iter_mut().skip(j) {
                apply(col);
            }
            apply(&mut qty);
        }
        a[j][j] = alpha;
    }

    let mut r = vec![vec![0.0; p]; p];
    for (j, col) in a.iter().enumerate() {
        for i in 0..=j {
            r[i][j] = col[i];
        }
    }

    // Back substitution: R b = (Q^T y)[..p].
    let mut coefficients = vec![0.0; p];
    for i in (0..p).rev() {
        let mut acc = qty[i];
        for k in i + 1..p {
            acc -= r[i][k] * coefficients[k];
        }
        coefficients[i] = acc / r[i][i];
    }

    let sse: f64 = qty[p..].iter().map(|v| v * v).sum();
    Ok(QrLeastSquares {
        coefficients,
        r,
        sse,
    })
}

/// Inverts an upper-triangular matrix by back substitution.
pub fn invert_upper(r: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = r.len();
    let mut inv = vec![vec![0.0; p]; p];
    for col in 0..p {
        for i in (0..=col).rev() {
            let mut acc = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                acc -= r[i][k] * inv[k][col];
            }
            inv[i][col] = acc / r[i][i];
        }
    }
    inv
}

/// Diagonal of (X^T X)^{-1} = R^{-1} R^{-T}: squared row norms of R^{-1}.
pub fn xtx_inverse_diagonal(r: &[Vec<f64>]) -> Vec<f64> {
    let inv = invert_upper(r);
    inv.iter()
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_has_zero_residual() {
        let columns = vec![vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 2.0]];
        let y = vec![1.0, 2.0, 3.0];
        let qr = qr_least_squares(&columns, &y).unwrap();
        assert!((qr.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((qr.coefficients[1] - 1.0).abs() < 1e-12);
        assert!(qr.sse.abs() < 1e-20);
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let columns = vec![
            vec![1.0, 1.0, 1.0, 1.0],
            vec![0.0, 1.0, 2.0, 3.0],
            vec![0.0, 1.0, 2.0, 3.0],
        ];
        let y = vec![0.0, 1.0, 1.0, 2.0];
        assert_eq!(qr_least_squares(&columns, &y).unwrap_err(), 2);
    }

    #[test]
    fn upper_inverse_is_inverse() {
        let r = vec![
            vec![2.0, 1.0, -1.0],
            vec![0.0, -3.0, 0.5],
            vec![0.0, 0.0, 1.5],
        ];
        let inv = invert_upper(&r);
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += r[i][k] * inv[k][j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-12);
            }
        }
    }
}
