//! Dense normal-equation solvers for the weighted least-squares fits.

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
/// Returns `None` when the matrix is singular.
pub(crate) fn solve_strict(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = matrix_scale(&a);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot_row][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    Some(back_substitute(&a, &b))
}

/// Like [`solve_strict`] but degenerate pivots drop their unknown to zero
/// instead of failing, so collinear design columns get a zero coefficient.
pub(crate) fn solve_lenient(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let scale = matrix_scale(&a);
    let mut dropped = vec![false; n];
    for col in 0..n {
        let pivot_row = (col..n)
            .filter(|&i| !dropped[i])
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap());
        let pivot_row = match pivot_row {
            Some(r) if a[r][col].abs() > 1e-10 * scale => r,
            _ => {
                dropped[col] = true;
                continue;
            }
        };
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        dropped.swap(col, pivot_row);
        for row in (col + 1)..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        if dropped[col] {
            x[col] = 0.0;
            continue;
        }
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}

fn back_substitute(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x
}

fn matrix_scale(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(1e-300)
}

/// Weighted least squares via the normal equations. `rows` are design rows
/// (the caller appends its own intercept column); degenerate directions get
/// zero coefficients.
pub(crate) fn weighted_least_squares(rows: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut xtwx = vec![vec![0.0; p]; p];
    let mut xtwy = vec![0.0; p];
    for (row, (&target, &weight)) in rows.iter().zip(y.iter().zip(w)) {
        for i in 0..p {
            let wi = weight * row[i];
            xtwy[i] += wi * target;
            for j in i..p {
                xtwx[i][j] += wi * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtwx[i][j] = xtwx[j][i];
        }
    }
    solve_lenient(xtwx, xtwy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_a_plain_system() {
        let a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let b = vec![5.0, 10.0];
        let x = solve_strict(a, b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn strict_rejects_singular() {
        let a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert!(solve_strict(a, vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn lenient_zeroes_collinear_columns() {
        // Second column duplicates the first; its coefficient must drop to 0.
        let rows = vec![
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 2.0],
            vec![1.0, 1.0, 3.0],
        ];
        let y = vec![1.0, 3.0, 5.0, 7.0];
        let w = vec![1.0; 4];
        let beta = weighted_least_squares(&rows, &y, &w);
        assert!((beta[0] - 1.0).abs() < 1e-9);
        assert_eq!(beta[1], 0.0);
        assert!((beta[2] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_fit_recovers_exact_coefficients() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![1.0, i as f64, (i * i) as f64])
            .collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 + 3.0 * r[1] - 0.5 * r[2]).collect();
        let w: Vec<f64> = (0..10).map(|i| 0.5 + (i % 3) as f64).collect();
        let beta = weighted_least_squares(&rows, &y, &w);
        assert!((beta[0] - 2.0).abs() < 1e-8);
        assert!((beta[1] - 3.0).abs() < 1e-8);
        assert!((beta[2] + 0.5).abs() < 1e-8);
    }
}
