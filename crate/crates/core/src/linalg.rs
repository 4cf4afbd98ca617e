//! Small dense helpers: power iteration and Cholesky solves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Deterministic start vector for power iteration.
///
/// All-ones is the natural choice but it lies in the null space of the
/// pairwise-difference operator, so each entry gets a golden-ratio jitter.
pub fn start_vector(d: usize) -> Array1<f64> {
    const PHI: f64 = 0.618_033_988_749_894_9;
    let mut v = Array1::from_iter((0..d).map(|i| 1.0 + (i as f64 * PHI).fract()));
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

#[derive(Debug, Clone, Copy)]
pub struct PowerResult {
    /// Largest eigenvalue estimate of the symmetric PSD operator.
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration for the top eigenvalue of a symmetric PSD operator given
/// as a closure `v -> Mv`.
pub fn power_iteration<F>(d: usize, mut apply: F, rel_tol: f64, max_iter: usize) -> PowerResult
where
    F: FnMut(ArrayView1<f64>) -> Array1<f64>,
{
    if d == 0 {
        return PowerResult { eigenvalue: 0.0, iterations: 0, converged: true };
    }
    let mut v = start_vector(d);
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        let w = apply(v.view());
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return PowerResult { eigenvalue: 0.0, iterations: it, converged: true };
        }
        v = w / norm;
        if it > 1 && (next - lambda).abs() <= rel_tol * next.abs() {
            return PowerResult { eigenvalue: next, iterations: it, converged: true };
        }
        lambda = next;
    }
    PowerResult { eigenvalue: lambda, iterations: max_iter, converged: false }
}

/// Largest eigenvalue of `X^T X` for a dense matrix.
pub fn gram_top_eigenvalue(x: ArrayView2<f64>) -> f64 {
    let res = power_iteration(x.ncols(), |v| x.t().dot(&x.dot(&v)), 1e-8, 10_000);
    if res.converged {
        res.eigenvalue
    } else {
        // squared Frobenius norm bounds the spectral norm squared
        x.iter().map(|a| a * a).sum()
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::arg("cholesky needs a square matrix"));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::arg(format!(
                "matrix is not positive definite (pivot {j} = {diag:e})"
            )));
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solve `L L^T x = b` given the lower factor.
pub fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = b.to_owned();
    for i in 0..n {
        let mut s = z[i];
        for k in 0..i {
            s -= l[[i, k]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = z[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * z[k];
        }
        z[i] = s / l[[i, i]];
    }
    z
}

/// Least squares via the normal equations.
pub fn least_squares(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Array1<f64>> {
    let gram = x.t().dot(&x);
    let l = cholesky(gram.view())?;
    Ok(cholesky_solve(l.view(), x.t().dot(&y).view()))
}
