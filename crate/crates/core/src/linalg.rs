//! Dense symmetric positive-definite solves by Cholesky factorization.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Lower Cholesky factor `L` with `A = L L^T`. Only the lower triangle of `a`
/// is read. A pivot at or below `n * eps * max(diag)` is reported as rank
/// deficiency.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: a.ncols(),
        });
    }
    let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(0.0, f64::max);
    let tol = n as f64 * f64::EPSILON * max_diag;
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (row_i, row_j) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            let dot: f64 = row_i.iter().zip(row_j).map(|(x, y)| x * y).sum();
            let s = a[[i, j]] - dot;
            if i == j {
                if s.is_nan() || s <= tol {
                    return Err(Error::RankDeficient { pivot: i });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(Array2::from_shape_vec((n, n), l).expect("square"))
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: b.nrows(),
        });
    }
    let l = cholesky(a)?;
    let l = l.as_slice().expect("standard layout");
    let mut x = Array2::from_shape_fn((b.ncols(), n), |(j, i)| b[[i, j]]);
    for mut col in x.rows_mut() {
        let col = col.as_slice_mut().expect("contiguous");
        // L y = b
        for i in 0..n {
            let row = &l[i * n..i * n + i];
            let dot: f64 = row.iter().zip(&col[..i]).map(|(p, q)| p * q).sum();
            col[i] = (col[i] - dot) / l[i * n + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l[k * n + i] * col[k];
            }
            col[i] = s / l[i * n + i];
        }
    }
    Ok(x.reversed_axes().as_standard_layout().into_owned())
}
