//! Sparse symmetric matrices, preconditioned CG and dense helpers.

use rayon::prelude::*;

use crate::{Error, Result};

/// Compressed sparse rows.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub ptr: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
}

impl Csr {
    /// Sums duplicate triplets; rows are sorted by column.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Csr {
        t.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut ptr = vec![0usize; n + 1];
        let mut col = Vec::with_capacity(t.len());
        let mut val: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(c);
                val.push(v);
                ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            ptr[i + 1] += ptr[i];
        }
        Csr { n, ptr, col, val }
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut s = 0.0;
            for q in self.ptr[i]..self.ptr[i + 1] {
                s += self.val[q] * x[self.col[q]];
            }
            *yi = s;
        });
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| (self.ptr[i]..self.ptr[i + 1]).find(|q| self.col[*q] == i).map_or(0.0, |q| self.val[q]))
            .collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for q in self.ptr[i]..self.ptr[i + 1] {
                let j = self.col[q];
                let back = (self.ptr[j]..self.ptr[j + 1]).find(|p| self.col[*p] == i).map_or(0.0, |p| self.val[p]);
                worst = worst.max((self.val[q] - back).abs());
            }
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug)]
pub struct CgTrace {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Jacobi-preconditioned CG for an SPD operator; stops when ‖r‖ ≤ tol·‖b‖.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgTrace> {
    let n = b.len();
    let bn = dot(b, b).sqrt();
    let mut trace = CgTrace { iterations: 0, residuals: Vec::new() };
    if bn == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        trace.residuals.push(0.0);
        return Ok(trace);
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let rn = dot(&r, &r).sqrt() / bn;
        trace.residuals.push(rn);
        if rn <= tol {
            trace.iterations = it;
            return Ok(trace);
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rn = dot(&r, &r).sqrt() / bn;
    if rn <= tol {
        trace.iterations = max_iter;
        trace.residuals.push(rn);
        return Ok(trace);
    }
    Err(Error::SolverDivergence { iters: max_iter, residual: rn })
}

/// Smallest eigenpair of A v = λ G v (A, G symmetric positive definite) by
/// block inverse iteration with Cholesky solves and Rayleigh–Ritz on the block.
pub fn smallest_generalized_eigen(
    a: &nalgebra::DMatrix<f64>,
    g: &nalgebra::DMatrix<f64>,
    tol: f64,
    max_outer: usize,
) -> Result<(f64, nalgebra::DVector<f64>, usize)> {
    let n = a.nrows();
    let fail = |iters, residual| Error::SolverDivergence { iters, residual };
    let chol = a.clone().cholesky().ok_or_else(|| fail(0, f64::NAN))?;
    let b = n.min(24);
    let mut v = nalgebra::DMatrix::from_fn(n, b, |i, j| (((i * 7919 + j * 104729 + 17) % 1009) as f64 / 504.5) - 1.0);
    let mut lam = f64::INFINITY;
    for it in 0..max_outer {
        let w = chol.solve(&(g * &v)).qr().q();
        let (vals, vecs) = ritz(&(w.transpose() * a * &w), &(w.transpose() * g * &w)).ok_or_else(|| fail(it, lam))?;
        v = &w * vecs;
        let rq = vals[0];
        let rel = (rq - lam).abs() / rq.abs().max(1e-300);
        lam = rq;
        if rel < tol && it > 2 {
            let x = v.column(0).into_owned();
            let s = x.dot(&(g * &x)).sqrt();
            return Ok((lam, x / s, it + 1));
        }
    }
    Err(fail(max_outer, lam))
}

/// Ritz values (ascending) and G-orthonormal Ritz vectors of a small pencil.
fn ritz(a: &nalgebra::DMatrix<f64>, g: &nalgebra::DMatrix<f64>) -> Option<(Vec<f64>, nalgebra::DMatrix<f64>)> {
    let g = (g + g.transpose()) * 0.5;
    let l = g.cholesky()?.l();
    let li = l.try_inverse()?;
    let c = &li * a * li.transpose();
    let eig = ((&c + c.transpose()) * 0.5).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|x, y| eig.eigenvalues[*x].total_cmp(&eig.eigenvalues[*y]));
    let vals = order.iter().map(|i| eig.eigenvalues[*i]).collect();
    let z = nalgebra::DMatrix::from_fn(c.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    Some((vals, li.transpose() * z))
}

/// All generalized eigenvalues (ascending) via G^{-1/2} A G^{-1/2}.
pub fn generalized_eigenvalues(a: &nalgebra::DMatrix<f64>, g: &nalgebra::DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolverDivergence { iters: 0, residual: f64::NAN })?;
    let l = chol.l();
    let li = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SolverDivergence { iters: 0, residual: f64::NAN })?;
    let c = &li * a * li.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + i as f64 * 0.01));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = Csr::from_triplets(n, t);
        assert_eq!(a.max_asymmetry(), 0.0);
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; n];
        a.apply(&xs, &mut b);
        let mut x = vec![0.0; n];
        pcg(|u, v| a.apply(u, v), &a.diag(), &b, &mut x, 1e-13, 500).unwrap();
        for i in 0..n {
            assert!((x[i] - xs[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_iteration_matches_dense() {
        let a = nalgebra::DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let g = nalgebra::DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.5]);
        let (l, _, _) = smallest_generalized_eigen(&a, &g, 1e-14, 500).unwrap();
        let ev = generalized_eigenvalues(&a, &g).unwrap();
        assert!((l - ev[0]).abs() < 1e-10);
    }
}
