//! Banded LU and a damped Newton driver.

use crate::error::{Error, Result};

/// Pivots with `|p| <= PIVOT_RTOL * max|a_ij|` are treated as singular.
const PIVOT_RTOL: f64 = 1e-18;

/// Square matrix with `lower_bw` sub- and `upper_bw` super-diagonals,
/// stored row by row in dense band form.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower_bw: usize,
    upper_bw: usize,
    bands: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower_bw: usize, upper_bw: usize) -> Self {
        Self {
            n,
            lower_bw,
            upper_bw,
            bands: vec![0.0; n * (lower_bw + upper_bw + 1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, 0, 0);
        for i in 0..n {
            a.set(i, i, 1.0);
        }
        a
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower_bw(&self) -> usize {
        self.lower_bw
    }

    pub fn upper_bw(&self) -> usize {
        self.upper_bw
    }

    fn width(&self) -> usize {
        self.lower_bw + self.upper_bw + 1
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.lower_bw >= i && j <= i + self.upper_bw
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.lower_bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.bands[self.offset(i, j)]
        } else {
            0.0
        }
    }

    /// Panics when `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.offset(i, j);
        self.bands[k] = value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.offset(i, j);
        self.bands[k] += value;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower_bw);
                let hi = (i + self.upper_bw).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower_bw);
                let hi = (i + self.upper_bw).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// LU factors with row interchanges, in the layout of LAPACK's `gbtrf`:
/// `U` has upper bandwidth `lower_bw + upper_bw` after pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl BandedLu {
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width() + (j + self.kl - i)
    }

    pub fn factor(a: &BandedMatrix) -> Result<Self> {
        let n = a.n;
        let kl = a.lower_bw;
        let ku = a.upper_bw;
        let ku2 = kl + ku;
        let mut f = Self {
            n,
            kl,
            ku,
            lu: vec![0.0; n * (2 * kl + ku + 1)],
            perm: vec![0; n],
        };
        let mut amax = 0.0f64;
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n.saturating_sub(1));
            for j in lo..=hi {
                let v = a.get(i, j);
                amax = amax.max(v.abs());
                let k = f.idx(i, j);
                f.lu[k] = v;
            }
        }
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = f.lu[f.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = f.lu[f.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !best.is_finite() || best == 0.0 || best <= PIVOT_RTOL * amax {
                return Err(Error::SingularMatrix { row: k });
            }
            f.perm[k] = p;
            let jmax = (k + ku2).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (a_idx, b_idx) = (f.idx(k, j), f.idx(p, j));
                    f.lu.swap(a_idx, b_idx);
                }
            }
            let pivot = f.lu[f.idx(k, k)];
            for i in k + 1..=last {
                let ik = f.idx(i, k);
                let l = f.lu[ik] / pivot;
                f.lu[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = f.lu[f.idx(k, j)];
                        let ij = f.idx(i, j);
                        f.lu[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(f)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let ku2 = self.kl + self.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                x.swap(k, p);
            }
            let last = (k + self.kl).min(n - 1);
            let xk = x[k];
            for i in k + 1..=last {
                x[i] -= self.lu[self.idx(i, k)] * xk;
            }
        }
        for i in (0..n).rev() {
            let jmax = (i + ku2).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=jmax {
                s -= self.lu[self.idx(i, j)] * x[j];
            }
            x[i] = s / self.lu[self.idx(i, i)];
        }
        x
    }
}

/// Solves `A x = b` by banded Gaussian elimination with partial pivoting.
pub fn solve_banded(a: &BandedMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.n {
        return Err(Error::DimensionMismatch {
            expected: a.n,
            got: b.len(),
        });
    }
    Ok(BandedLu::factor(a)?.solve(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the residual max-norm.
    pub abs_tol: f64,
    pub max_iter: usize,
    /// Step reduction factor in the backtracking loop.
    pub backtrack: f64,
    /// Smallest step fraction tried before giving up.
    pub min_step: f64,
    /// Compare the analytic Jacobian against central differences at the
    /// initial iterate (debug builds only).
    pub check_jacobian: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            max_iter: 50,
            backtrack: 0.5,
            min_step: 2f64.powi(-20),
            check_jacobian: false,
        }
    }
}

impl NewtonOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidParams("newton abs_tol must be positive".into()));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidParams("newton max_iter must be at least 1".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidParams("backtracking factor must lie in (0, 1)".into()));
        }
        if !(self.min_step > 0.0 && self.min_step <= 1.0) {
            return Err(Error::InvalidParams("min_step must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton iteration with residual-norm backtracking.
///
/// Non-convergence is reported through [`NewtonResult::converged`]; the
/// returned solution is the last accepted iterate.
pub fn newton_solve<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: &[f64],
    opts: &NewtonOptions,
) -> NewtonResult
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> BandedMatrix,
{
    let mut x = x0.to_vec();
    let mut r = residual(&x);
    let mut iterations = 0;

    if opts.check_jacobian && cfg!(debug_assertions) {
        let err = jacobian_mismatch(&mut residual, &mut jacobian, &x);
        debug_assert!(err <= 1e-6, "jacobian mismatch {err:e}");
    }

    loop {
        let rnorm = norm_inf(&r);
        if !rnorm.is_finite() {
            return NewtonResult {
                solution: x,
                iterations,
                residual_norm: rnorm,
                converged: false,
            };
        }
        if rnorm <= opts.abs_tol || iterations >= opts.max_iter {
            return NewtonResult {
                solution: x,
                iterations,
                residual_norm: rnorm,
                converged: rnorm <= opts.abs_tol,
            };
        }
        let a = jacobian(&x);
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let dx = match solve_banded(&a, &rhs) {
            Ok(dx) => dx,
            Err(_) => {
                return NewtonResult {
                    solution: x,
                    iterations,
                    residual_norm: rnorm,
                    converged: false,
                }
            }
        };
        let merit = norm2(&r);
        let mut alpha = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, d)| a + alpha * d).collect();
            let rt = residual(&trial);
            let m = norm2(&rt);
            if m.is_finite() && m < merit {
                break Some((trial, rt));
            }
            alpha *= opts.backtrack;
            if alpha < opts.min_step {
                break None;
            }
        };
        match accepted {
            Some((xt, rt)) => {
                x = xt;
                r = rt;
                iterations += 1;
            }
            None => {
                return NewtonResult {
                    solution: x,
                    iterations,
                    residual_norm: rnorm,
                    converged: false,
                }
            }
        }
    }
}

/// Largest column-relative deviation between the analytic Jacobian and a
/// central finite-difference approximation at `x`.
pub fn jacobian_mismatch<R, J>(residual: &mut R, jacobian: &mut J, x: &[f64]) -> f64
where
    R: FnMut(&[f64]) -> Vec<f64>,
    J: FnMut(&[f64]) -> BandedMatrix,
{
    let a = jacobian(x);
    let n = x.len();
    let mut worst = 0.0f64;
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let rp = residual(&xp);
        xp[j] = x[j] - step;
        let rm = residual(&xp);
        xp[j] = x[j];
        let fd: Vec<f64> = rp
            .iter()
            .zip(&rm)
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect();
        let scale = norm_inf(&fd).max((0..n).map(|i| a.get(i, j).abs()).fold(0.0, f64::max));
        if scale == 0.0 {
            continue;
        }
        let diff = (0..n).map(|i| (a.get(i, j) - fd[i]).abs()).fold(0.0, f64::max);
        worst = worst.max(diff / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, diag: f64, off: f64) -> BandedMatrix {
        let mut a = BandedMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.set(i, i, diag);
            if i > 0 {
                a.set(i, i - 1, off);
            }
            if i + 1 < n {
                a.set(i, i + 1, off);
            }
        }
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = BandedMatrix::identity(5);
        let b = [1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(solve_banded(&a, &b).unwrap(), b.to_vec());
    }

    #[test]
    fn laplacian_3x3() {
        let a = tridiag(3, 2.0, -1.0);
        let x = solve_banded(&a, &[1.0, 1.0, 1.0]).unwrap();
        let expect = [1.5, 2.0, 1.5];
        for (xi, ei) in x.iter().zip(expect) {
            assert!((xi - ei).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_row_is_singular() {
        let mut a = tridiag(4, 2.0, -1.0);
        for j in 1..4 {
            a.set(2, j, 0.0);
        }
        assert!(matches!(
            solve_banded(&a, &[1.0; 4]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn pivoting_inside_band() {
        // zero on the diagonal forces a row interchange
        let mut a = BandedMatrix::zeros(3, 1, 1);
        a.set(0, 0, 0.0);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        a.set(1, 1, 1.0);
        a.set(1, 2, 1.0);
        a.set(2, 1, 1.0);
        a.set(2, 2, 3.0);
        let xs = [1.0, 2.0, -1.0];
        let b = a.matvec(&xs);
        let x = solve_banded(&a, &b).unwrap();
        for (p, q) in x.iter().zip(xs) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let a = BandedMatrix::identity(3);
        assert!(solve_banded(&a, &[1.0]).is_err());
    }

    #[test]
    fn newton_linear_one_iteration() {
        let c = [1.0, -2.0, 0.5];
        let res = newton_solve(
            |x: &[f64]| x.iter().zip(c).map(|(a, b)| a - b).collect(),
            |_x: &[f64]| BandedMatrix::identity(3),
            &[10.0, 10.0, 10.0],
            &NewtonOptions::default(),
        );
        assert!(res.converged);
        assert_eq!(res.iterations, 1);
        assert_eq!(res.solution, c.to_vec());
    }

    #[test]
    fn newton_scalar_square_root() {
        let opts = NewtonOptions::default();
        let res = newton_solve(
            |x: &[f64]| vec![x[0] * x[0] - 4.0],
            |x: &[f64]| {
                let mut a = BandedMatrix::zeros(1, 0, 0);
                a.set(0, 0, 2.0 * x[0]);
                a
            },
            &[3.0],
            &opts,
        );
        assert!(res.converged);
        assert!((res.solution[0] - 2.0).abs() <= opts.abs_tol);
        assert!(res.residual_norm <= opts.abs_tol);
    }

    #[test]
    fn newton_reports_failure_without_panicking() {
        // x^2 + 1 has no real root
        let res = newton_solve(
            |x: &[f64]| vec![x[0] * x[0] + 1.0],
            |x: &[f64]| {
                let mut a = BandedMatrix::zeros(1, 0, 0);
                a.set(0, 0, 2.0 * x[0]);
                a
            },
            &[0.5],
            &NewtonOptions::default(),
        );
        assert!(!res.converged);
        assert!(res.residual_norm >= 1.0);
    }

    #[test]
    fn jacobian_check_detects_error() {
        let mut r = |x: &[f64]| vec![x[0].sin() + x[1], x[0] * x[1]];
        let mut good = |x: &[f64]| {
            let mut a = BandedMatrix::zeros(2, 1, 1);
            a.set(0, 0, x[0].cos());
            a.set(0, 1, 1.0);
            a.set(1, 0, x[1]);
            a.set(1, 1, x[0]);
            a
        };
        assert!(jacobian_mismatch(&mut r, &mut good, &[0.3, -1.2]) < 1e-6);
        let mut bad = |x: &[f64]| {
            let mut a = good(x);
            a.set(1, 1, 2.0 * x[0]);
            a
        };
        assert!(jacobian_mismatch(&mut r, &mut bad, &[0.3, -1.2]) > 1e-3);
    }
}
