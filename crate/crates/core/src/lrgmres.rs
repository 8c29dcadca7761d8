//! Restarted GMRES on low-rank vectors.
//!
//! Basis vectors are truncated after every operation, so they are not
//! orthogonal. Orthogonalization coefficients and the final least-squares
//! correction therefore come from explicit Gram systems instead of a
//! Hessenberg recurrence.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{mismatch, Error, Result};
use crate::kron::LinearOperator;
use crate::lowrank::LowRankVec;
use crate::Scalar;

/// Right preconditioner `M`, applied as `M^{-1}`.
pub trait Preconditioner<T: Scalar> {
    fn apply_inverse(&self, x: &LowRankVec<T>, eps: T) -> Result<LowRankVec<T>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl<T: Scalar> Preconditioner<T> for IdentityPreconditioner {
    fn apply_inverse(&self, x: &LowRankVec<T>, eps: T) -> Result<LowRankVec<T>> {
        Ok(x.truncated(eps))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LrGmresConfig<T> {
    /// Basis vectors per cycle.
    pub m_gm: usize,
    /// Relative residual target.
    pub eps_gmres: T,
    /// Truncation tolerance for basis vectors and iterates.
    pub eps_trunc: T,
    pub max_cycles: usize,
}

impl<T: Scalar> LrGmresConfig<T> {
    pub fn new(eps_gmres: T, eps_trunc: T) -> Self {
        Self {
            m_gm: 20,
            eps_gmres,
            eps_trunc,
            max_cycles: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_gm == 0 {
            return Err(Error::InvalidParameter {
                name: "m_gm",
                reason: "need at least one basis vector per cycle".into(),
            });
        }
        if !(self.eps_gmres > T::zero() && self.eps_gmres < T::one()) {
            return Err(Error::InvalidParameter {
                name: "eps_gmres",
                reason: format!("must lie in (0, 1), got {}", self.eps_gmres),
            });
        }
        if !(self.eps_trunc >= T::zero() && self.eps_trunc < T::one()) {
            return Err(Error::InvalidParameter {
                name: "eps_trunc",
                reason: format!("must lie in [0, 1), got {}", self.eps_trunc),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    /// The residual stopped decreasing; the previous iterate is returned.
    Stagnated,
    MaxCycles,
    ZeroRhs,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::Stagnated => "stagnated",
            Termination::MaxCycles => "max_cycles",
            Termination::ZeroRhs => "zero_rhs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LrGmresReport<T> {
    /// Relative residual `‖b - A x‖ / ‖b‖` at the start of every accepted cycle.
    pub cycle_residuals: Vec<T>,
    /// Residual of a rejected iterate when the divergence guard fired.
    pub rejected_residual: Option<T>,
    pub operator_applications: usize,
    pub preconditioner_applications: usize,
    pub inner_steps: usize,
    pub final_relative_residual: T,
    /// Largest block rank of each basis vector, in creation order.
    pub basis_ranks: Vec<usize>,
    pub solution_ranks: [usize; 3],
    /// Gram systems that needed the ridge.
    pub ridge_events: usize,
    pub termination: Termination,
}

impl<T: Scalar> LrGmresReport<T> {
    pub fn cycles(&self) -> usize {
        self.cycle_residuals.len().saturating_sub(1)
    }
}

const RIDGE: f64 = 1e-14;
const BREAKDOWN: f64 = 1e-14;

/// Solves the small symmetric system `g a = rhs`, adding a relative ridge when
/// the Cholesky factorization fails. Returns whether the ridge was used.
fn gram_solve<T: Scalar>(g: &Mat<T>, rhs: &Mat<T>) -> (Mat<T>, bool) {
    let n = g.nrows();
    let scale = (0..n).fold(T::zero(), |m, i| m.max(g[(i, i)].abs())).max(T::min_positive_value());
    if let Ok(c) = g.llt(Side::Lower) {
        // Pivots below the ridge level mean the system is numerically singular.
        let l = c.L();
        let pivot = (0..n).fold(T::infinity(), |m, i| m.min(l[(i, i)] * l[(i, i)]));
        if pivot > T::lit(RIDGE) * scale {
            let x = c.solve(rhs);
            if x.col(0).iter().all(|v| v.is_finite()) {
                return (x, false);
            }
        }
    }
    let mut tries = 0;
    let mut ridge = T::lit(RIDGE) * scale;
    loop {
        let reg = Mat::from_fn(n, n, |i, j| if i == j { g[(i, j)] + ridge } else { g[(i, j)] });
        match reg.llt(Side::Lower) {
            Ok(c) => return (c.solve(rhs), true),
            Err(_) if tries < 20 => {
                ridge = ridge * T::lit(10.0);
                tries += 1;
            }
            Err(_) => {
                // Semidefinite beyond repair: fall back to an LU with pivoting.
                return (reg.partial_piv_lu().solve(rhs), true);
            }
        }
    }
}

/// Gram matrix of `vs` reusing `known`, the Gram matrix of a prefix of `vs`.
fn extend_gram<T: Scalar>(known: &Mat<T>, vs: &[LowRankVec<T>]) -> Result<Mat<T>> {
    let (k, n) = (known.nrows(), vs.len());
    let mut g = Mat::zeros(n, n);
    for j in 0..k {
        for i in 0..k {
            g[(i, j)] = known[(i, j)];
        }
    }
    for i in k..n {
        for j in 0..=i {
            let d = vs[i].dot(&vs[j])?;
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    Ok(g)
}

fn gram_matrix<T: Scalar>(vs: &[LowRankVec<T>]) -> Result<Mat<T>> {
    let n = vs.len();
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let d = vs[i].dot(&vs[j])?;
            g[(i, j)] = d;
            g[(j, i)] = d;
        }
    }
    Ok(g)
}

/// Low-rank restarted GMRES with right preconditioning, starting from `x0`.
pub fn solve<T, A, M>(
    a: &A,
    m: &M,
    b: &LowRankVec<T>,
    x0: &LowRankVec<T>,
    cfg: &LrGmresConfig<T>,
) -> Result<(LowRankVec<T>, LrGmresReport<T>)>
where
    T: Scalar,
    A: LinearOperator<T> + ?Sized,
    M: Preconditioner<T> + ?Sized,
{
    cfg.validate()?;
    if b.dims() != a.dims() || x0.dims() != a.dims() {
        return Err(mismatch("lrgmres::solve", format!("{:?}", a.dims()), format!("{:?} / {:?}", b.dims(), x0.dims())));
    }
    let mut report = LrGmresReport {
        cycle_residuals: Vec::new(),
        rejected_residual: None,
        operator_applications: 0,
        preconditioner_applications: 0,
        inner_steps: 0,
        final_relative_residual: T::zero(),
        basis_ranks: Vec::new(),
        solution_ranks: [0; 3],
        ridge_events: 0,
        termination: Termination::ZeroRhs,
    };
    let bnorm = b.norm();
    if bnorm == T::zero() {
        report.solution_ranks = x0.ranks();
        return Ok((x0.clone(), report));
    }
    let eps = cfg.eps_trunc;
    let mut x = x0.clone();
    let mut prev: Option<(LowRankVec<T>, T)> = None;
    loop {
        let r = if x.max_rank() == 0 {
            b.clone()
        } else {
            report.operator_applications += 1;
            let ax = a.apply(&x, T::zero())?;
            LowRankVec::linear_combination(&[(T::one(), b), (-T::one(), &ax)])?
        };
        let rnorm = r.norm();
        let rel = rnorm / bnorm;
        if let Some((px, pnorm)) = &prev {
            if rnorm >= *pnorm {
                report.rejected_residual = Some(rel);
                report.termination = Termination::Stagnated;
                report.final_relative_residual = *pnorm / bnorm;
                report.solution_ranks = px.ranks();
                log::debug!("lrgmres: residual grew to {:e}; returning previous iterate", rel.to_f64_lossy());
                return Ok((px.clone(), report));
            }
        }
        report.cycle_residuals.push(rel);
        log::debug!("lrgmres cycle {}: rel. residual {:e}, rank {}", report.cycles(), rel.to_f64_lossy(), x.max_rank());
        if rel < cfg.eps_gmres {
            report.termination = Termination::Converged;
        } else if report.cycles() == cfg.max_cycles {
            report.termination = Termination::MaxCycles;
        }
        if rel < cfg.eps_gmres || report.cycles() == cfg.max_cycles {
            report.final_relative_residual = rel;
            report.solution_ranks = x.ranks();
            return Ok((x, report));
        }

        // Arnoldi-like cycle on truncated vectors.
        let r_trunc = r.truncated(eps);
        let tn = r_trunc.norm();
        if tn == T::zero() {
            report.final_relative_residual = rel;
            report.solution_ranks = x.ranks();
            report.termination = Termination::Stagnated;
            return Ok((x, report));
        }
        let mut basis = vec![r_trunc.scaled(T::one() / tn)];
        let mut images: Vec<LowRankVec<T>> = Vec::with_capacity(cfg.m_gm);
        // Gram matrix of the basis, extended by one row per step.
        let mut vg: Mat<T> = Mat::zeros(0, 0);
        report.basis_ranks.push(basis[0].max_rank());
        for j in 0..cfg.m_gm {
            report.preconditioner_applications += 1;
            let z = m.apply_inverse(&basis[j], eps)?;
            report.operator_applications += 1;
            let w = a.apply(&z, eps)?;
            report.inner_steps += 1;
            let wnorm = w.norm();
            images.push(w.clone());
            if j + 1 == cfg.m_gm {
                break;
            }
            vg = extend_gram(&vg, &basis)?;
            let g = &vg;
            let rhs = Mat::from_fn(basis.len(), 1, |i, _| basis[i].dot(&w).unwrap_or(T::zero()));
            let (alpha, ridged) = gram_solve(g, &rhs);
            report.ridge_events += ridged as usize;
            let mut terms: Vec<(T, &LowRankVec<T>)> = vec![(T::one(), &w)];
            terms.extend(basis.iter().enumerate().map(|(i, v)| (-alpha[(i, 0)], v)));
            let next = LowRankVec::linear_combination(&terms)?.truncated(eps);
            let nn = next.norm();
            if !(nn > T::lit(BREAKDOWN) * wnorm) {
                break;
            }
            let v = next.scaled(T::one() / nn);
            report.basis_ranks.push(v.max_rank());
            basis.push(v);
        }
        // Least squares min ‖r - A M^{-1} V β‖ through its normal equations.
        let k = images.len();
        let g = gram_matrix(&images)?;
        let rhs = Mat::from_fn(k, 1, |i, _| images[i].dot(&r).unwrap_or(T::zero()));
        let (beta, ridged) = gram_solve(&g, &rhs);
        report.ridge_events += ridged as usize;
        let terms: Vec<(T, &LowRankVec<T>)> = (0..k).map(|i| (beta[(i, 0)], &basis[i])).collect();
        let vb = LowRankVec::linear_combination(&terms)?.truncated(eps);
        report.preconditioner_applications += 1;
        let corr = m.apply_inverse(&vb, eps)?;
        let next = x.add(&corr)?.truncated(eps);
        prev = Some((x, rnorm));
        x = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kron::{Divergence, Identity, KronOperator, OperatorMode, Term};
    use crate::lowrank::{Dims, Factored, Field};
    use crate::sparse;
    use faer::linalg::solvers::SolveLstsq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: Dims, r: usize) -> LowRankVec<f64> {
        let blocks = Field::ALL.map(|f| Factored {
            v: Mat::from_fn(d.spatial(f), r, |_, _| rng.gen_range(-1.0..1.0)),
            w: Mat::from_fn(d.n_xi, r, |_, _| rng.gen_range(-1.0..1.0)),
        });
        LowRankVec::from_blocks(d, blocks).unwrap()
    }

    /// Diagonally dominant nonsymmetric saddle-free operator.
    fn test_operator(rng: &mut ChaCha8Rng, d: Dims) -> KronOperator<f64> {
        let n = d.n_u;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + rng.gen::<f64>()));
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + 0.3 * rng.gen::<f64>()));
                t.push((i + 1, i, -1.2));
            }
        }
        let f = sparse::from_triplets(n, n, &t);
        let g1 = sparse::from_triplets(d.n_xi, d.n_xi, &(0..d.n_xi).map(|i| (i, i, 0.3)).chain((1..d.n_xi).map(|i| (i, i - 1, 0.2))).collect::<Vec<_>>());
        let div = Divergence::new(
            sparse::from_triplets(d.n_p, n, &(0..d.n_p).map(|i| (i, 2 * i, 1.0)).chain((0..d.n_p).map(|i| (i, 2 * i + 1, -0.5))).collect::<Vec<_>>()),
            sparse::from_triplets(d.n_p, n, &(0..d.n_p).map(|i| (i, i, 0.7)).collect::<Vec<_>>()),
        );
        KronOperator::new(
            d,
            OperatorMode::Jacobian,
            vec![
                Term { g: sparse::identity(d.n_xi), blocks: [Some(f.clone()), None, None, Some(f.clone())], divergence: true },
                Term { g: g1, blocks: [Some(sparse::identity(n)), Some(sparse::scale(&sparse::identity(n), 0.1)), None, Some(sparse::identity(n))], divergence: false },
            ],
            div,
        )
        .unwrap()
    }

    #[test]
    fn identity_converges_in_one_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Dims::new(10, 4, 5);
        let b = random_vec(&mut rng, d, 2);
        let cfg = LrGmresConfig::new(1e-10, 1e-14);
        let (x, rep) = solve(&Identity(d), &IdentityPreconditioner, &b, &LowRankVec::zeros(d), &cfg).unwrap();
        assert_eq!(rep.termination, Termination::Converged, "{rep:?}");
        assert_eq!(rep.inner_steps, 1);
        let diff = x.sub(&b).unwrap().norm() / b.norm();
        assert!(diff < 1e-12);
    }

    #[test]
    fn zero_rhs_returns_initial_guess() {
        let d = Dims::new(6, 2, 3);
        let b = LowRankVec::<f64>::zeros(d);
        let (x, rep) = solve(&Identity(d), &IdentityPreconditioner, &b, &b, &LrGmresConfig::new(1e-8, 0.0)).unwrap();
        assert_eq!(rep.termination, Termination::ZeroRhs);
        assert_eq!(x.max_rank(), 0);
        assert_eq!(rep.operator_applications, 0);
    }

    fn dense_gmres_cycles(a: &Mat<f64>, b: &[f64], m: usize, cycles: usize) -> Vec<f64> {
        let n = b.len();
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut x = vec![0.0; n];
        let mut out = Vec::new();
        let mv = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| a[(i, j)] * v[j]).sum()).collect() };
        for _ in 0..=cycles {
            let ax = mv(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.push(rn / bn);
            // Modified Gram-Schmidt Arnoldi, then a dense least-squares solve.
            let mut q = vec![r.iter().map(|v| v / rn).collect::<Vec<f64>>()];
            let mut h = Mat::<f64>::zeros(m + 1, m);
            for j in 0..m {
                let mut w = mv(&q[j]);
                for i in 0..=j {
                    let c: f64 = w.iter().zip(&q[i]).map(|(p, s)| p * s).sum();
                    h[(i, j)] = c;
                    for (wk, qk) in w.iter_mut().zip(&q[i]) {
                        *wk -= c * qk;
                    }
                }
                let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                h[(j + 1, j)] = wn;
                q.push(w.iter().map(|v| v / wn).collect());
            }
            let e = Mat::from_fn(m + 1, 1, |i, _| if i == 0 { rn } else { 0.0 });
            let y = h.qr().solve_lstsq(&e);
            for j in 0..m {
                for k in 0..n {
                    x[k] += y[(j, 0)] * q[j][k];
                }
            }
        }
        out
    }

    #[test]
    fn matches_dense_gmres_at_cycle_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Dims::new(12, 5, 4);
        let op = test_operator(&mut rng, d);
        let dense = sparse::to_dense(&crate::kron::assemble_sparse(&op, usize::MAX).unwrap());
        let b = random_vec(&mut rng, d, 2);
        let m = 4;
        let cfg = LrGmresConfig { m_gm: m, eps_gmres: 1e-14, eps_trunc: 0.0, max_cycles: 3 };
        let (_, rep) = solve(&op, &IdentityPreconditioner, &b, &LowRankVec::zeros(d), &cfg).unwrap();
        let want = dense_gmres_cycles(&dense, &b.to_vector().unwrap(), m, 3);
        assert_eq!(rep.cycle_residuals.len(), 4);
        for (got, want) in rep.cycle_residuals.iter().zip(&want) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn reported_residual_is_true_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims::new(15, 6, 5);
        let op = test_operator(&mut rng, d);
        let b = random_vec(&mut rng, d, 1);
        let cfg = LrGmresConfig { m_gm: 6, eps_gmres: 1e-9, eps_trunc: 1e-12, max_cycles: 20 };
        let (x, rep) = solve(&op, &IdentityPreconditioner, &b, &LowRankVec::zeros(d), &cfg).unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        let r = b.sub(&op.apply(&x, 0.0).unwrap()).unwrap().norm() / b.norm();
        assert!((r - rep.final_relative_residual).abs() < 1e-12);
        assert!(rep.cycle_residuals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn single_precision_solve() {
        let d = Dims::new(8, 3, 3);
        let blocks = Field::ALL.map(|f| Factored::<f32> {
            v: Mat::from_fn(d.spatial(f), 1, |i, _| 1.0 + i as f32),
            w: Mat::from_fn(d.n_xi, 1, |i, _| 1.0 - 0.2 * i as f32),
        });
        let b = LowRankVec::from_blocks(d, blocks).unwrap();
        let cfg = LrGmresConfig::<f32>::new(1e-5, 1e-7);
        let (x, rep) = solve(&Identity(d), &IdentityPreconditioner, &b, &LowRankVec::zeros(d), &cfg).unwrap();
        assert_eq!(rep.termination, Termination::Converged);
        assert!(x.sub(&b).unwrap().norm() / b.norm() < 1e-5);
    }

    #[test]
    fn gram_ridge_handles_singular_systems() {
        let g = Mat::from_fn(2, 2, |_, _| 1.0f64);
        let rhs = Mat::from_fn(2, 1, |_, _| 1.0);
        let (x, ridged) = gram_solve(&g, &rhs);
        assert!(ridged);
        assert!(x.col(0).iter().all(|v| v.is_finite()));
    }
}
