//! Spectral radius by power iteration.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 10_000;

fn matvec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral radius of a square matrix.
///
/// Iterates on `A^2` from the all-ones vector: the squared operator has a
/// nonnegative dominant eigenvalue even when `A` has a `+rho / -rho` pair
/// (bipartite graphs, trees), so the iteration converges where plain power
/// iteration on `A` would oscillate. Stops once the residual of the
/// Rayleigh quotient is below `tol` relative to it.
pub fn spectral_radius(matrix: &Tensor, tol: f64) -> Result<f64> {
    let (n, m) = matrix.dims2()?;
    if n != m {
        return Err(Error::Shape(format!(
            "spectral radius needs a square matrix, got {n}x{m}"
        )));
    }
    let a = matrix.data();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    for _ in 0..MAX_ITERATIONS {
        matvec(a, n, &x, &mut y);
        matvec(a, n, &y, &mut z);
        let zn = norm(&z);
        if zn == 0.0 {
            // A^2 annihilates the iterate; for the nonnegative matrices used
            // here that means the matrix is nilpotent.
            return Ok(0.0);
        }
        if !zn.is_finite() {
            return Err(Error::Numeric("spectral radius iteration overflowed".into()));
        }
        // Rayleigh quotient of A^2; for symmetric A its error is bounded by
        // the residual norm.
        let mu: f64 = x.iter().zip(&z).map(|(p, q)| p * q).sum();
        let resid = norm(&x.iter().zip(&z).map(|(p, q)| q - mu * p).collect::<Vec<_>>());
        if resid <= tol * mu.abs() {
            return Ok(mu.abs().sqrt());
        }
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi = zi / zn;
        }
    }
    Err(Error::Numeric(format!(
        "spectral radius did not converge in {MAX_ITERATIONS} iterations"
    )))
}
