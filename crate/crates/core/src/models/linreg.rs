//! Closed-form (ridge) least squares with an unpenalized intercept.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relative pivot floor below which an unregularized system counts as singular.
const SINGULAR_RTOL: f64 = 1e-10;

fn matrix_dims(x: &Tensor) -> Result<(usize, usize)> {
    match *x.shape() {
        [n, d] => Ok((n, d)),
        ref s => Err(Error::dim(format!("design matrix must be [n, d], got {s:?}"))),
    }
}

/// Solves `(XᵀX + λI)w = Xᵀy` on centered data, so the intercept is free of
/// the penalty. Returns `[w_1 .. w_d, intercept]`.
pub fn linreg_fit(x: &Tensor, y: &Tensor, ridge_lambda: f64) -> Result<Tensor> {
    let (n, d) = matrix_dims(x)?;
    if y.len() != n {
        return Err(Error::dim(format!(
            "design matrix {:?} vs target {:?}",
            x.shape(),
            y.shape()
        )));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::arg(format!("ridge lambda {ridge_lambda} must be ≥ 0")));
    }
    let xd = x.data();
    let mut x_mean = vec![0.0f64; d];
    for row in xd.chunks_exact(d) {
        for (m, &v) in x_mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    x_mean.iter_mut().for_each(|m| *m /= n as f64);
    let y_mean = y.data().iter().map(|&v| v as f64).sum::<f64>() / n as f64;

    let mut gram = vec![0.0f64; d * d];
    let mut rhs = vec![0.0f64; d];
    let mut centered = vec![0.0f64; d];
    for (row, &yi) in xd.chunks_exact(d).zip(y.data()) {
        for ((c, &v), m) in centered.iter_mut().zip(row).zip(&x_mean) {
            *c = v as f64 - m;
        }
        let yc = yi as f64 - y_mean;
        for i in 0..d {
            rhs[i] += centered[i] * yc;
            for j in 0..=i {
                gram[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        gram[i * d + i] += ridge_lambda;
        for j in 0..i {
            gram[j * d + i] = gram[i * d + j];
        }
    }
    let w = cholesky_solve(&mut gram, &rhs, d, ridge_lambda == 0.0)?;
    let intercept = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    let mut out: Vec<f32> = w.iter().map(|&v| v as f32).collect();
    out.push(intercept as f32);
    Tensor::new(vec![d + 1], out)
}

/// In-place Cholesky factorization of a symmetric `d×d` matrix, then two
/// triangular solves.
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize, strict: bool) -> Result<Vec<f64>> {
    let scale = (0..d).map(|i| a[i * d + i]).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut pivot = a[j * d + j];
        for k in 0..j {
            pivot -= a[j * d + k] * a[j * d + k];
        }
        let singular = if strict {
            pivot <= SINGULAR_RTOL * scale
        } else {
            pivot <= 0.0
        };
        if singular || !pivot.is_finite() {
            return Err(Error::Numerical(format!(
                "normal equations are singular at column {j}; use ridge_lambda > 0"
            )));
        }
        let l_jj = pivot.sqrt();
        a[j * d + j] = l_jj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l_jj;
        }
    }
    let mut z = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            z[i] -= a[i * d + k] * z[k];
        }
        z[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            z[i] -= a[k * d + i] * z[k];
        }
        z[i] /= a[i * d + i];
    }
    Ok(z)
}

/// `Xw + intercept` for weights laid out as `[w_1 .. w_d, intercept]`.
pub fn linreg_predict(weights: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (n, d) = matrix_dims(x)?;
    if weights.len() != d + 1 {
        return Err(Error::dim(format!(
            "weights {:?} do not fit design matrix {:?}",
            weights.shape(),
            x.shape()
        )));
    }
    let (w, intercept) = weights.data().split_at(d);
    let out = x
        .data()
        .chunks_exact(d)
        .map(|row| {
            let s: f64 = row.iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum();
            (s + intercept[0] as f64) as f32
        })
        .collect();
    Tensor::new(vec![n], out)
}
