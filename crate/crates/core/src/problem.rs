//! The assembled stochastic Galerkin problem: mesh, basis, random viscosity,
//! Kronecker operators and the nonlinear residual.
//!
//! Unknowns are the interior velocity dofs and all pressure dofs. The
//! Dirichlet data is deterministic, so the boundary lift lives in the first
//! gPC mode only. With `g` the lift, the residual is
//! `r = y - sum_l G_l ⊗ P_l(u) u - G_1 ⊗ W(g) u`, where the last term collects
//! the convection of the lift by the interior velocity.

use faer::Mat;

use crate::error::{Error, Result};
use crate::fem::{Discretization, Geometry, Mesh, Split};
use crate::gpc::GpcBasis;
use crate::kron::{Divergence, KronOperator, LinearOperator, OperatorMode, Term};
use crate::lowrank::{Dims, Factored, Field, LowRankVec};
use crate::random_field::{CovarianceKernel, KernelKind, KlField, KlModes, DEFAULT_KL_GRID};
use crate::sparse::{self, SpMat};

/// Everything needed to assemble a problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub geometry: Geometry,
    pub h: f64,
    pub kernel: CovarianceKernel,
    pub nu0: f64,
    /// Coefficient of variation `sigma / nu0`.
    pub cov: f64,
    pub n_nu: usize,
    pub d_max: usize,
    pub kl_grid: (usize, usize),
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::channel_with_obstacle(),
            h: 0.25,
            kernel: CovarianceKernel {
                kind: KernelKind::SquaredExponential,
                l1: 32.0,
                l2: 32.0,
            },
            nu0: 1.0 / 50.0,
            cov: 0.01,
            n_nu: 5,
            d_max: 3,
            kl_grid: DEFAULT_KL_GRID,
        }
    }
}

impl ProblemSpec {
    /// Mean Reynolds number with characteristic `U L = 2`.
    pub fn reynolds(&self) -> f64 {
        reynolds_from_viscosity(self.nu0)
    }
}

pub fn reynolds_from_viscosity(nu0: f64) -> f64 {
    2.0 / nu0
}

pub fn viscosity_from_reynolds(re: f64) -> f64 {
    2.0 / re
}

/// Newton or Picard linearization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearization {
    Picard,
    Newton,
}

/// Stage of the nonlinear iteration an operator or preconditioner belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stokes,
    Picard,
    Newton,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Stokes => "stokes",
            Phase::Picard => "picard",
            Phase::Newton => "newton",
        }
    }

    pub fn linearization(self) -> Option<Linearization> {
        match self {
            Phase::Stokes => None,
            Phase::Picard => Some(Linearization::Picard),
            Phase::Newton => Some(Linearization::Newton),
        }
    }
}

/// Convection matrices built from the gPC modes of an iterate.
struct ModeConvection {
    n: Vec<Option<Split>>,
    w: Vec<Option<[Split; 4]>>,
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub disc: Discretization,
    pub basis: GpcBasis<f64>,
    pub field: KlField,
    /// `A_l` for `l = 1..=n_nu+1`.
    pub laplacians: Vec<Split>,
    div: Divergence<f64>,
    /// `W(g)` blocks of the boundary lift.
    lift_newton: [Split; 4],
    rhs: LowRankVec<f64>,
}

impl Problem {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        if !(spec.cov >= 0.0 && spec.cov.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "cov",
                reason: format!("coefficient of variation must be nonnegative, got {}", spec.cov),
            });
        }
        let mesh = Mesh::build(spec.geometry, spec.h)?;
        let disc = Discretization::new(mesh);
        let basis = GpcBasis::<f64>::new(spec.n_nu, spec.d_max);
        let modes = KlModes::solve(spec.kernel, spec.geometry.domain, spec.n_nu, spec.kl_grid)?;
        let field = KlField::new(modes, spec.nu0, spec.cov * spec.nu0)?;
        field.check_positive(&disc.quad_points)?;
        let coeffs = field.viscosity_coefficients(&basis, &disc.quad_points)?;
        let laplacians: Vec<Split> = coeffs.iter().map(|c| disc.assembler.laplacian(c)).collect();
        let div = Divergence::new(disc.bx.ii.clone(), disc.by.ii.clone());
        let (lx, ly) = disc.full_velocity(&vec![0.0; disc.n_u()], &vec![0.0; disc.n_u()], true);
        let lift_newton = disc.assembler.newton(&lx, &ly);
        let lift_conv = disc.assembler.convection(&lx, &ly);
        let dims = Dims::new(disc.n_u(), disc.n_p(), basis.len());

        // y: -A_l,IB g in mode l, -N(g)_IB g and -B_IB g in the mean mode.
        let n_terms = laplacians.len();
        let mut vx = Mat::<f64>::zeros(dims.n_u, n_terms);
        let mut vy = Mat::<f64>::zeros(dims.n_u, n_terms);
        for (l, a) in laplacians.iter().enumerate() {
            let ax = sparse::mul_vec(&a.ib, &disc.gx);
            let ay = sparse::mul_vec(&a.ib, &disc.gy);
            for i in 0..dims.n_u {
                vx[(i, l)] = -ax[i];
                vy[(i, l)] = -ay[i];
            }
        }
        let nx = sparse::mul_vec(&lift_conv.ib, &disc.gx);
        let ny = sparse::mul_vec(&lift_conv.ib, &disc.gy);
        for i in 0..dims.n_u {
            vx[(i, 0)] -= nx[i];
            vy[(i, 0)] -= ny[i];
        }
        let bp = sparse::mul_vec(&disc.bx.ib, &disc.gx);
        let bq = sparse::mul_vec(&disc.by.ib, &disc.gy);
        let vp = Mat::<f64>::from_fn(dims.n_p, 1, |i, _| -(bp[i] + bq[i]));
        let e = |k: usize| Mat::<f64>::from_fn(dims.n_xi, k, |i, j| if i == j { 1.0 } else { 0.0 });
        let rhs = LowRankVec::from_blocks(
            dims,
            [
                Factored::new(vx, e(n_terms))?,
                Factored::new(vy, e(n_terms))?,
                Factored::new(vp, e(1))?,
            ],
        )?
        .truncated(0.0);

        Ok(Self {
            spec,
            disc,
            basis,
            field,
            laplacians,
            div,
            lift_newton,
            rhs,
        })
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.disc.n_u(), self.disc.n_p(), self.basis.len())
    }

    /// Right-hand side `y` from the Dirichlet data.
    pub fn rhs(&self) -> &LowRankVec<f64> {
        &self.rhs
    }

    pub fn divergence(&self) -> &Divergence<f64> {
        &self.div
    }

    fn g(&self, l: usize) -> SpMat<f64> {
        self.basis.g(l).clone()
    }

    /// `sum_{l <= n_nu+1} G_l ⊗ [A_l B^T; B 0]`.
    pub fn stokes_operator(&self) -> Result<KronOperator<f64>> {
        let terms = self
            .laplacians
            .iter()
            .enumerate()
            .map(|(l, a)| Term {
                g: self.g(l),
                blocks: [Some(a.ii.clone()), None, None, Some(a.ii.clone())],
                divergence: l == 0,
            })
            .collect();
        KronOperator::new(self.dims(), OperatorMode::Stokes, terms, self.div.clone())
    }

    /// Nodal velocity of every gPC mode of `u` (lift added to the mean mode).
    pub fn mode_velocities(&self, u: &LowRankVec<f64>) -> Result<Vec<Option<(Vec<f64>, Vec<f64>)>>> {
        let [ux, uy, _] = u.densify()?;
        let n_xi = self.basis.len();
        Ok((0..n_xi)
            .map(|l| {
                let cx: Vec<f64> = ux.col(l).iter().copied().collect();
                let cy: Vec<f64> = uy.col(l).iter().copied().collect();
                let zero = cx.iter().chain(&cy).all(|v| *v == 0.0);
                (l == 0 || !zero).then(|| self.disc.full_velocity(&cx, &cy, l == 0))
            })
            .collect())
    }

    fn mode_convection(&self, u: &LowRankVec<f64>, newton: bool) -> Result<ModeConvection> {
        let fields = self.mode_velocities(u)?;
        let asm = &self.disc.assembler;
        let n = fields.iter().map(|f| f.as_ref().map(|(x, y)| asm.convection(x, y))).collect();
        let w = fields
            .iter()
            .map(|f| f.as_ref().filter(|_| newton).map(|(x, y)| asm.newton(x, y)))
            .collect();
        Ok(ModeConvection { n, w })
    }

    fn convective_terms(&self, conv: &ModeConvection, newton: bool) -> Vec<Term<f64>> {
        (0..self.basis.len())
            .filter_map(|l| {
                let a = self.laplacians.get(l);
                let nl = conv.n[l].as_ref();
                if a.is_none() && nl.is_none() {
                    return None;
                }
                let diag: Vec<&Split> = a.into_iter().chain(nl).collect();
                let base = Split::sum(&diag);
                let blocks = match (newton, conv.w[l].as_ref()) {
                    (true, Some([wxx, wxy, wyx, wyy])) => [
                        Some(Split::sum(&[&base, wxx]).ii),
                        Some(wxy.ii.clone()),
                        Some(wyx.ii.clone()),
                        Some(Split::sum(&[&base, wyy]).ii),
                    ],
                    _ => [Some(base.ii.clone()), None, None, Some(base.ii)],
                };
                Some(Term {
                    g: self.g(l),
                    blocks,
                    divergence: l == 0,
                })
            })
            .collect()
    }

    /// Oseen matrix `J_P` or Jacobian `J_N` at the iterate `u`.
    pub fn linearized(&self, u: &LowRankVec<f64>, lin: Linearization) -> Result<KronOperator<f64>> {
        let newton = lin == Linearization::Newton;
        let conv = self.mode_convection(u, newton)?;
        let mode = if newton { OperatorMode::Jacobian } else { OperatorMode::Oseen };
        KronOperator::new(self.dims(), mode, self.convective_terms(&conv, newton), self.div.clone())
    }

    /// Nonlinear residual `r(u)`, truncated at `eps`.
    pub fn residual(&self, u: &LowRankVec<f64>, eps: f64) -> Result<LowRankVec<f64>> {
        let conv = self.mode_convection(u, false)?;
        let mut terms = self.convective_terms(&conv, false);
        let [wxx, wxy, wyx, wyy] = &self.lift_newton;
        terms.push(Term {
            g: self.g(0),
            blocks: [Some(wxx.ii.clone()), Some(wxy.ii.clone()), Some(wyx.ii.clone()), Some(wyy.ii.clone())],
            divergence: false,
        });
        let op = KronOperator::new(self.dims(), OperatorMode::Oseen, terms, self.div.clone())?;
        let pu = op.apply(u, 0.0)?;
        Ok(LowRankVec::linear_combination(&[(1.0, &self.rhs), (-1.0, &pu)])?.truncated(eps))
    }

    /// Residual of the linear Stokes problem `y_st - A_st u`.
    pub fn stokes_residual(&self, u: &LowRankVec<f64>, eps: f64) -> Result<LowRankVec<f64>> {
        let au = self.stokes_operator()?.apply(u, 0.0)?;
        let rhs = self.stokes_rhs()?;
        Ok(LowRankVec::linear_combination(&[(1.0, &rhs), (-1.0, &au)])?.truncated(eps))
    }

    /// Right-hand side of the Stokes problem (no convective lift term).
    pub fn stokes_rhs(&self) -> Result<LowRankVec<f64>> {
        let (lx, ly) = self.disc.full_velocity(&vec![0.0; self.disc.n_u()], &vec![0.0; self.disc.n_u()], true);
        let nl = self.disc.assembler.convection(&lx, &ly);
        let dims = self.dims();
        let nx = sparse::mul_vec(&nl.ib, &self.disc.gx);
        let ny = sparse::mul_vec(&nl.ib, &self.disc.gy);
        let v = |c: &[f64]| Mat::<f64>::from_fn(dims.n_u, 1, |i, _| c[i]);
        let e1 = Mat::<f64>::from_fn(dims.n_xi, 1, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let corr = LowRankVec::from_blocks(
            dims,
            [
                Factored::new(v(&nx), e1.clone())?,
                Factored::new(v(&ny), e1)?,
                Factored::zero(dims.n_p, dims.n_xi),
            ],
        )?;
        Ok(self.rhs.add(&corr)?.truncated(0.0))
    }

    /// Mean-mode nodal velocity of `u` including the lift.
    pub fn mean_velocity(&self, u: &LowRankVec<f64>) -> (Vec<f64>, Vec<f64>) {
        let b = |f: Field| {
            let blk = u.block(f);
            (0..blk.nrows())
                .map(|i| (0..blk.rank()).map(|k| blk.v[(i, k)] * blk.w[(0, k)]).sum())
                .collect::<Vec<f64>>()
        };
        self.disc.full_velocity(&b(Field::Ux), &b(Field::Uy), true)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::geometry::Rect;

    pub(crate) fn tiny(n_nu: usize, d_max: usize, cov: f64) -> Problem {
        Problem::new(ProblemSpec {
            // Off-centre obstacle: the open strip would carry exact Poiseuille flow.
            geometry: Geometry {
                obstacle: Some(Rect::new(0.5, 1.0, -0.5, 0.0).unwrap()),
                ..Geometry::strip(Rect::new(0.0, 2.0, -1.0, 1.0).unwrap())
            },
            h: 0.5,
            n_nu,
            d_max,
            cov,
            kernel: CovarianceKernel::new(KernelKind::SquaredExponential, 2.0, 2.0).unwrap(),
            nu0: 0.05,
            kl_grid: (16, 16),
        })
        .unwrap()
    }

    #[test]
    fn reynolds_convention() {
        assert!((reynolds_from_viscosity(1.0 / 50.0) - 100.0).abs() < 1e-12);
        assert!((viscosity_from_reynolds(300.0) - 1.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn residual_at_zero_is_rhs_and_rank_bound() {
        let p = tiny(2, 2, 0.05);
        let z = LowRankVec::zeros(p.dims());
        let r = p.residual(&z, 0.0).unwrap();
        let (a, b) = (r.to_vector().unwrap(), p.rhs().to_vector().unwrap());
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-14));
        assert!(p.rhs().max_rank() <= 3);
    }

    #[test]
    fn oseen_at_zero_is_stokes_plus_lift_convection() {
        let p = tiny(2, 2, 0.05);
        let z = LowRankVec::zeros(p.dims());
        let oseen = p.linearized(&z, Linearization::Picard).unwrap();
        let stokes = p.stokes_operator().unwrap();
        assert_eq!(stokes.terms().len(), 3);
        assert_eq!(oseen.terms().len(), 3);
        for k in 1..3 {
            let d = sparse::add(
                oseen.terms()[k].blocks[0].as_ref().unwrap(),
                &sparse::scale(stokes.terms()[k].blocks[0].as_ref().unwrap(), -1.0),
            );
            assert_eq!(sparse::max_abs(&d), 0.0);
        }
        // The mean term differs by the convection of the boundary lift only.
        let (lx, ly) = p.disc.full_velocity(&vec![0.0; p.disc.n_u()], &vec![0.0; p.disc.n_u()], true);
        let ng = p.disc.assembler.convection(&lx, &ly);
        let want = sparse::add(stokes.terms()[0].blocks[0].as_ref().unwrap(), &ng.ii);
        let d = sparse::add(oseen.terms()[0].blocks[0].as_ref().unwrap(), &sparse::scale(&want, -1.0));
        assert!(sparse::max_abs(&d) < 1e-15);
    }

    #[test]
    fn sigma_zero_drops_fluctuation_terms() {
        let p = tiny(2, 2, 0.0);
        assert_eq!(p.stokes_operator().unwrap().terms().len(), 1);
    }
}
