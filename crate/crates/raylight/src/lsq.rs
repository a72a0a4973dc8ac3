//! Regularised linear least squares by CGLS (conjugate gradients on the
//! normal equations, never forming `AᴴA`).

use crate::{Error, Result, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// A linear map `ℂⁿ → ℂᵐ` together with its adjoint.
pub trait LinearOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `y = A x`.
    fn apply(&self, x: &[C64], y: &mut [C64]);
    /// `x = Aᴴ y`.
    fn apply_adjoint(&self, y: &[C64], x: &mut [C64]);
}

#[derive(Clone, Copy, Debug)]
pub struct LsqOptions {
    /// Tikhonov weight in `‖Ax − b‖² + reg‖x‖²`.
    pub reg: f64,
    /// Stop when the normal-equation residual relative to `‖Aᴴb‖` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Restrict the unknowns to real values.
    pub real: bool,
    /// Report running out of iterations as an error instead of returning the iterate.
    pub strict: bool,
}

impl Default for LsqOptions {
    fn default() -> Self {
        LsqOptions { reg: 1e-8, tol: 1e-8, max_iter: 500, real: false, strict: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LsqReport {
    pub iterations: usize,
    pub converged: bool,
    /// Final `‖Aᴴ(b − Ax) − reg·x‖ / ‖Aᴴb‖`.
    pub relative_residual: f64,
    /// `sqrt(‖b − Ax‖² + reg‖x‖²)` after each iteration, starting with `‖b‖`.
    pub history: Vec<f64>,
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Minimises `‖Ax − b‖² + reg‖x‖²`.
pub fn cgls(op: &dyn LinearOperator, b: &[C64], opts: &LsqOptions) -> Result<(Vec<C64>, LsqReport)> {
    let (m, n) = (op.rows(), op.cols());
    if b.len() != m {
        return Err(Error::ShapeMismatch(format!("rhs has {} entries, operator has {m} rows", b.len())));
    }
    if !(opts.reg >= 0.0) {
        return Err(Error::InvalidParameters(format!("regularisation {} must be nonnegative", opts.reg)));
    }
    let project = |v: &mut [C64]| {
        if opts.real {
            for z in v.iter_mut() {
                z.im = 0.0;
            }
        }
    };
    let mut x = vec![ZERO; n];
    let mut r = b.to_vec();
    let mut s = vec![ZERO; n];
    op.apply_adjoint(&r, &mut s);
    project(&mut s);
    let s0 = norm2(&s).sqrt();
    let mut report = LsqReport { history: vec![norm2(b).sqrt()], ..Default::default() };
    if s0 == 0.0 {
        report.converged = true;
        return Ok((x, report));
    }
    let mut p = s.clone();
    let mut gamma = norm2(&s);
    let mut q = vec![ZERO; m];
    for it in 1..=opts.max_iter {
        op.apply(&p, &mut q);
        let denom = norm2(&q) + opts.reg * norm2(&p);
        if !(denom > 0.0) || !denom.is_finite() {
            break;
        }
        let alpha = gamma / denom;
        for (xi, pi) in x.iter_mut().zip(&p) {
            *xi += pi * alpha;
        }
        for (ri, qi) in r.iter_mut().zip(&q) {
            *ri -= qi * alpha;
        }
        op.apply_adjoint(&r, &mut s);
        project(&mut s);
        for (si, xi) in s.iter_mut().zip(&x) {
            *si -= xi * opts.reg;
        }
        let gamma_new = norm2(&s);
        report.iterations = it;
        report.relative_residual = gamma_new.sqrt() / s0;
        report.history.push((norm2(&r) + opts.reg * norm2(&x)).sqrt());
        if report.relative_residual < opts.tol {
            report.converged = true;
            break;
        }
        let beta = gamma_new / gamma;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + *pi * beta;
        }
        gamma = gamma_new;
    }
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NoConvergence { iterations: report.iterations, last_update: f64::NAN });
    }
    if opts.strict && !report.converged {
        return Err(Error::NoConvergence { iterations: report.iterations, last_update: report.relative_residual });
    }
    Ok((x, report))
}

/// Dense row-major matrix, mostly for tests.
#[derive(Clone, Debug)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl LinearOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            *yr = self.data[r * self.cols..(r + 1) * self.cols].iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }
    fn apply_adjoint(&self, y: &[C64], x: &mut [C64]) {
        x.iter_mut().for_each(|v| *v = ZERO);
        for (r, yr) in y.iter().enumerate() {
            for (c, xc) in x.iter_mut().enumerate() {
                *xc += self.data[r * self.cols + c].conj() * yr;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn solves_small_complex_system() {
        let a = DenseOperator { rows: 3, cols: 2, data: vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0), c(1.0, 0.0), c(0.0, 0.0), c(3.0, 0.5)] };
        let xt = [c(0.5, -1.0), c(2.0, 0.25)];
        let mut b = vec![ZERO; 3];
        a.apply(&xt, &mut b);
        let (x, rep) = cgls(&a, &b, &LsqOptions { reg: 0.0, tol: 1e-12, ..Default::default() }).unwrap();
        assert!(rep.converged);
        for (u, v) in x.iter().zip(&xt) {
            assert!((u - v).norm() < 1e-10);
        }
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = DenseOperator { rows: 2, cols: 2, data: vec![c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)] };
        let (x, rep) = cgls(&a, &[ZERO, ZERO], &LsqOptions::default()).unwrap();
        assert!(rep.converged);
        assert!(x.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn real_projection() {
        let a = DenseOperator { rows: 2, cols: 1, data: vec![c(1.0, 0.0), c(0.0, 1.0)] };
        // best real x for b = (1, i·3) is (1 + 3)/2 = 2
        let (x, _) = cgls(&a, &[c(1.0, 0.0), c(0.0, 3.0)], &LsqOptions { reg: 0.0, real: true, ..Default::default() }).unwrap();
        assert!((x[0] - c(2.0, 0.0)).norm() < 1e-12);
    }
}
