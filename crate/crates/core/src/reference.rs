//! Full-vector reference solver for stochastic Galerkin systems.
//!
//! The operator is applied entry by entry as `y_i = sum_l sum_j G_l[i, j] K_l x_j`
//! on the full coefficient vector, with each `K_l` assembled as one sparse
//! saddle-point matrix. Nothing here goes through the low-rank format, so it
//! serves as an independent check of the low-rank Krylov solver.

use faer::Mat;

use crate::error::{mismatch, Result};
use crate::kron::{KronOperator, LinearOperator};
use crate::lowrank::Dims;
use crate::sparse::{self, SpMat, SparseLu};

/// Explicit term list `(G_l, K_l)` of a Kronecker operator.
pub struct FullOperator {
    dims: Dims,
    terms: Vec<(SpMat<f64>, SpMat<f64>)>,
}

impl FullOperator {
    pub fn new(op: &KronOperator<f64>) -> Self {
        let d = op.dims();
        let (nu, n) = (d.n_u, d.stride());
        let div = op.divergence();
        let terms = op
            .terms()
            .iter()
            .map(|t| {
                let mut trip = Vec::new();
                let offs = [(0, 0), (0, nu), (nu, 0), (nu, nu)];
                for (b, &(ro, co)) in t.blocks.iter().zip(&offs) {
                    if let Some(m) = b {
                        trip.extend(sparse::entries(m).map(|(i, j, v)| (ro + i, co + j, v)));
                    }
                }
                if t.divergence {
                    for (b, co) in [(&div.bx, 0), (&div.by, nu)] {
                        for (i, j, v) in sparse::entries(b) {
                            trip.push((2 * nu + i, co + j, v));
                            trip.push((co + j, 2 * nu + i, v));
                        }
                    }
                }
                (t.g.clone(), sparse::from_triplets(n, n, &trip))
            })
            .collect();
        Self { dims: d, terms }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let s = self.dims.stride();
        let mut y = vec![0.0; x.len()];
        for (g, k) in &self.terms {
            let (col_ptr, row_idx, vals) = (g.symbolic().col_ptr(), g.symbolic().row_idx(), g.val());
            for (j, xj) in x.chunks(s).enumerate() {
                if col_ptr[j] == col_ptr[j + 1] {
                    continue;
                }
                let kx = sparse::mul_vec(k, xj);
                for e in col_ptr[j]..col_ptr[j + 1] {
                    let i = row_idx[e];
                    for (a, b) in y[i * s..(i + 1) * s].iter_mut().zip(&kx) {
                        *a += vals[e] * b;
                    }
                }
            }
        }
        y
    }

    /// Term whose `G` factor is the identity, if any.
    fn mean_term(&self) -> Option<&SpMat<f64>> {
        let n = self.dims.n_xi;
        self.terms
            .iter()
            .find(|(g, _)| {
                let e: Vec<_> = sparse::entries(g).collect();
                e.len() == n && e.iter().all(|&(i, j, v)| i == j && v == 1.0)
            })
            .map(|(_, k)| k)
    }
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: Vec<f64>,
    /// Relative residual `‖b - A x‖ / ‖b‖` after each restart cycle.
    pub history: Vec<f64>,
    pub iterations: usize,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations,
/// right-preconditioned by `I ⊗ K_1^{-1}` from a sparse LU of the mean term.
pub fn solve(op: &FullOperator, b: &[f64], tol: f64, restart: usize, max_cycles: usize) -> Result<ReferenceSolution> {
    let d = op.dims;
    if b.len() != d.total() {
        return Err(mismatch("reference rhs", d.total(), b.len()));
    }
    let s = d.stride();
    let lu = match op.mean_term() {
        Some(k) => Some(SparseLu::new(k, "mean saddle-point")?),
        None => None,
    };
    let precond = |v: &[f64]| -> Vec<f64> {
        match &lu {
            Some(lu) => {
                let rhs = Mat::from_fn(s, d.n_xi, |i, j| v[j * s + i]);
                let z = lu.solve(rhs.as_ref());
                (0..d.total()).map(|k| z[(k % s, k / s)]).collect()
            }
            None => v.to_vec(),
        }
    };
    let bn = norm(b);
    let mut x = vec![0.0; b.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    if bn == 0.0 {
        return Ok(ReferenceSolution { x, history, iterations });
    }
    for _ in 0..max_cycles {
        let ax = op.apply(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        let beta = norm(&r);
        history.push(beta / bn);
        if beta <= tol * bn {
            break;
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|a| a / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        while k < restart {
            let mut w = op.apply(&precond(&v[k]));
            for i in 0..=k {
                h[i][k] = dot(&w, &v[i]);
                for (a, c) in w.iter_mut().zip(&v[i]) {
                    *a -= h[i][k] * c;
                }
            }
            h[k + 1][k] = norm(&w);
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let rho = h[k][k].hypot(h[k + 1][k]);
            cs[k] = h[k][k] / rho;
            sn[k] = h[k + 1][k] / rho;
            h[k][k] = rho;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let wn = norm(&w);
            iterations += 1;
            k += 1;
            if g[k].abs() <= 0.1 * tol * bn || wn == 0.0 {
                break;
            }
            v.push(w.iter().map(|a| a / wn).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            y[i] = (g[i] - (i + 1..k).map(|j| h[i][j] * y[j]).sum::<f64>()) / h[i][i];
        }
        let mut dz = vec![0.0; x.len()];
        for (yi, vi) in y.iter().zip(&v) {
            for (a, c) in dz.iter_mut().zip(vi) {
                *a += yi * c;
            }
        }
        for (a, c) in x.iter_mut().zip(precond(&dz)) {
            *a += c;
        }
    }
    Ok(ReferenceSolution { x, history, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::assemble_sparse;
    use crate::lowrank::LowRankVec;
    use crate::problem::tests::tiny;

    #[test]
    fn apply_matches_assembled_kronecker() {
        let p = tiny(2, 2, 0.1);
        let op = p.stokes_operator().unwrap();
        let full = FullOperator::new(&op);
        let big = assemble_sparse(&op, usize::MAX).unwrap();
        let x: Vec<f64> = (0..p.dims().total()).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let want = sparse::mul_vec(&big, &x);
        let got = full.apply(&x);
        let err = norm(&got.iter().zip(&want).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&want);
        assert!(err < 1e-13, "{err:e}");
    }

    #[test]
    fn solves_stokes_system_to_tolerance() {
        let p = tiny(2, 2, 0.2);
        let op = p.stokes_operator().unwrap();
        let full = FullOperator::new(&op);
        let b = p.stokes_rhs().unwrap().to_vector().unwrap();
        let sol = solve(&full, &b, 1e-12, 30, 20).unwrap();
        assert!(*sol.history.last().unwrap() <= 1e-12, "{:?}", sol.history);
        let lr = LowRankVec::from_full(&sol.x, p.dims(), 0.0).unwrap();
        let r = op.apply(&lr, 0.0).unwrap().to_vector().unwrap();
        let err = norm(&r.iter().zip(&b).map(|(a, c)| a - c).collect::<Vec<_>>()) / norm(&b);
        assert!(err <= 1e-11, "{err:e}");
    }
}
