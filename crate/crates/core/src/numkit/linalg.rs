use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular `L` with `L L^T = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim(
            "cholesky",
            format!("{n}x{n}"),
            format!("{n}x{}", a.cols()),
        ));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::Numeric(format!(
                "matrix is not positive definite: pivot {j} = {d:e}; diagonal range [{min:e}, {max:e}]"
            )));
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Solves `L y = b` for lower-triangular `L`.
pub fn forward_solve(l: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n {
        return Err(Error::dim("forward_solve", n, b.len()));
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for (k, yk) in y.iter().enumerate().take(i) {
            s -= l.get(i, k) * yk;
        }
        y[i] = s / l.get(i, i);
    }
    Ok(y)
}

/// Sample mean and covariance (`n - 1` denominator) of the rows of `x`.
pub fn mean_cov(x: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, d) = x.shape();
    let mean: Vec<f64> = x
        .sum_rows()
        .as_slice()
        .iter()
        .map(|s| s / n as f64)
        .collect();
    let centered = Matrix::from_fn(n, d, |i, j| x.get(i, j) - mean[j]);
    let cov = centered
        .t_matmul(&centered)
        .expect("shapes agree")
        .scale(1.0 / (n as f64 - 1.0));
    (mean, cov)
}
