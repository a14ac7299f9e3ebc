//! Matrix-free top-eigenpair solvers for symmetric PSD operators.
//!
//! Degenerate top eigenvalues return some unit vector in the top eigenspace;
//! callers only rely on the eigenvalue in that case.

use alloc::vec;
use alloc::vec::Vec;

use super::linalg::{axpy, canonical_sign, dot, norm, normalize, tridiag_eigen, Matrix};
use super::rng::Rng;
use crate::error::{Error, Result};

/// A symmetric linear operator `w -> A w` on `R^dim`.
pub trait SymmetricMatvec {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl SymmetricMatvec for Matrix {
    fn dim(&self) -> usize {
        self.rows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.matvec(x, out);
    }
}

impl<T: SymmetricMatvec + ?Sized> SymmetricMatvec for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
}

/// Adapts a closure into an operator.
pub struct FnMatvec<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnMatvec<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> SymmetricMatvec for FnMatvec<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Materializes an operator column by column and symmetrizes the result.
pub fn materialize(op: &impl SymmetricMatvec) -> Matrix {
    let n = op.dim();
    let mut out = Matrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            out[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigOptions {
    /// Relative residual target: `|A e - lambda e| <= tol * lambda`.
    pub tol: f64,
    /// Defaults to `10 * dim` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for EigOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: None,
        }
    }
}

impl EigOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn iterations(&self, dim: usize) -> usize {
        self.max_iter.unwrap_or(10 * dim).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopEig {
    pub value: f64,
    /// Unit norm, largest-magnitude entry positive.
    pub vector: Vec<f64>,
    /// Final residual `|A e - lambda e|`.
    pub residual: f64,
    /// Number of operator applications.
    pub matvecs: usize,
}

fn start_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if normalize(&mut v) > 0.0 {
            return v;
        }
    }
}

fn residual(op: &impl SymmetricMatvec, e: &[f64], lambda: f64, work: &mut [f64]) -> f64 {
    op.apply(e, work);
    axpy(-lambda, e, work);
    norm(work)
}

fn zero_operator(dim: usize, rng: &mut Rng, matvecs: usize) -> TopEig {
    let mut vector = start_vector(dim, rng);
    canonical_sign(&mut vector);
    TopEig {
        value: 0.0,
        vector,
        residual: 0.0,
        matvecs,
    }
}

/// Power iteration with Rayleigh-quotient eigenvalue estimates.
pub fn top_eig_power(op: &impl SymmetricMatvec, opts: EigOptions, rng: &mut Rng) -> Result<TopEig> {
    let dim = op.dim();
    let max_iter = opts.iterations(dim);
    let mut x = start_vector(dim, rng);
    let mut y = vec![0.0; dim];
    let mut matvecs = 0;
    for _ in 0..max_iter {
        op.apply(&x, &mut y);
        matvecs += 1;
        let lambda = dot(&x, &y);
        // residual of the current iterate, reusing A x
        let r = {
            let mut acc = 0.0;
            for (yi, xi) in y.iter().zip(&x) {
                let d = yi - lambda * xi;
                acc += d * d;
            }
            libm::sqrt(acc)
        };
        if r <= opts.tol * lambda.abs() {
            let mut vector = x;
            canonical_sign(&mut vector);
            return Ok(TopEig {
                value: lambda,
                vector,
                residual: r,
                matvecs,
            });
        }
        let ny = normalize(&mut y);
        if ny == 0.0 {
            return Ok(zero_operator(dim, rng, matvecs));
        }
        core::mem::swap(&mut x, &mut y);
    }
    Err(Error::NoConvergence(max_iter))
}

/// Lanczos with full reorthogonalization.
///
/// The Krylov basis is kept in memory, so `max_iter` is capped at `dim`; at
/// that point the tridiagonal projection is exact.
pub fn top_eig_lanczos(
    op: &impl SymmetricMatvec,
    opts: EigOptions,
    rng: &mut Rng,
) -> Result<TopEig> {
    let dim = op.dim();
    let max_iter = opts.iterations(dim).min(dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iter + 1);
    basis.push(start_vector(dim, rng));
    let mut alpha: Vec<f64> = Vec::with_capacity(max_iter);
    let mut beta: Vec<f64> = Vec::with_capacity(max_iter);
    let mut w = vec![0.0; dim];
    let mut work = vec![0.0; dim];
    let mut matvecs = 0;

    for j in 0..max_iter {
        op.apply(&basis[j], &mut w);
        matvecs += 1;
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        axpy(-a, &basis[j], &mut w);
        if j > 0 {
            axpy(-beta[j - 1], &basis[j - 1], &mut w);
        }
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);

        let t = tridiag_eigen(&alpha, &beta)?;
        let theta = t.values[0];
        let last = t.vectors[(j, 0)];
        let estimate = libm::fabs(b * last);
        let exhausted = j + 1 == max_iter;
        let breakdown = b <= 1e-14 * theta.abs().max(f64::MIN_POSITIVE);

        if estimate <= opts.tol * theta.abs() || breakdown || exhausted {
            let mut e = vec![0.0; dim];
            for (k, q) in basis.iter().enumerate() {
                axpy(t.vectors[(k, 0)], q, &mut e);
            }
            normalize(&mut e);
            let r = residual(op, &e, theta, &mut work);
            matvecs += 1;
            if r <= opts.tol * theta.abs() || (theta == 0.0 && r == 0.0) {
                canonical_sign(&mut e);
                return Ok(TopEig {
                    value: theta,
                    vector: e,
                    residual: r,
                    matvecs,
                });
            }
            if theta.abs() == 0.0 && breakdown {
                return Ok(zero_operator(dim, rng, matvecs));
            }
            if exhausted || breakdown {
                return Err(Error::NoConvergence(max_iter));
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(core::mem::replace(&mut w, vec![0.0; dim]));
    }
    Err(Error::NoConvergence(max_iter))
}
