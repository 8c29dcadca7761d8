//! Mean-based block upper-triangular preconditioner
//!
//! `M = I ⊗ [M_A  B^T; 0  -M_s]`, with `M_A` the mean momentum block and the
//! Schur complement `M_s ≈ B F_1^{-1} B^T` replaced by a least-squares
//! commutator:
//!
//! `M_s^{-1} = (B M*^{-1} B^T)^{-1} (B M*^{-1} F_1 H^{-1} B^T) (B H^{-1} B^T)^{-1}`,
//! `H = D^{-1/2} M* D^{-1/2}`.

use faer::Mat;

use crate::error::{mismatch, Result};
use crate::fem::Split;
use crate::lowrank::{Factored, Field, LowRankVec};
use crate::lrgmres::Preconditioner;
use crate::problem::{Phase, Problem};
use crate::sparse::{self, SparseLu, SpMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LscOptions {
    /// Down-weight Dirichlet-adjacent dofs in `H`; off gives `H = M*`.
    pub boundary_adjust: bool,
}

impl Default for LscOptions {
    fn default() -> Self {
        Self { boundary_adjust: true }
    }
}

pub struct MeanPreconditioner {
    phase: Phase,
    /// `F_xx` and `F_yy` of the mean term (identical except in Newton mode).
    f: [SpMat<f64>; 2],
    lu_x: SparseLu,
    /// `None` when `F_yy = F_xx`.
    lu_y: Option<SparseLu>,
    bx: SpMat<f64>,
    by: SpMat<f64>,
    bxt: SpMat<f64>,
    byt: SpMat<f64>,
    minv: Vec<f64>,
    hinv: Vec<f64>,
    lu_bmb: SparseLu,
    lu_bhb: SparseLu,
}

impl std::fmt::Debug for MeanPreconditioner {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MeanPreconditioner")
            .field("phase", &self.phase)
            .field("n_u", &self.minv.len())
            .field("n_p", &self.bx.nrows())
            .finish()
    }
}

impl MeanPreconditioner {
    /// Builds from the mean mode of `u`; `u` is ignored in the Stokes phase.
    pub fn build(problem: &Problem, u: Option<&LowRankVec<f64>>, phase: Phase, opts: LscOptions) -> Result<Self> {
        let d = &problem.disc;
        let a1 = &problem.laplacians[0];
        let (fxx, fyy, shared) = match (phase, u) {
            (Phase::Stokes, _) | (_, None) => (a1.ii.clone(), a1.ii.clone(), true),
            (_, Some(u)) => {
                let (wx, wy) = problem.mean_velocity(u);
                let n1 = d.assembler.convection(&wx, &wy);
                let base = Split::sum(&[a1, &n1]);
                if phase == Phase::Newton {
                    let [wxx, _, _, wyy] = d.assembler.newton(&wx, &wy);
                    (Split::sum(&[&base, &wxx]).ii, Split::sum(&[&base, &wyy]).ii, false)
                } else {
                    (base.ii.clone(), base.ii, true)
                }
            }
        };
        let lu_x = SparseLu::new(&fxx, "M_A (x)")?;
        let lu_y = if shared { None } else { Some(SparseLu::new(&fyy, "M_A (y)")?) };
        let minv: Vec<f64> = d.mass_diag.iter().map(|m| 1.0 / m).collect();
        let hinv: Vec<f64> = if opts.boundary_adjust {
            minv.iter().zip(&d.boundary_weights).map(|(m, w)| m * w).collect()
        } else {
            minv.clone()
        };
        let (bx, by) = (d.bx.ii.clone(), d.by.ii.clone());
        let gram = |w: &[f64]| sparse::add(&sparse::weighted_gram(&bx, w), &sparse::weighted_gram(&by, w));
        let lu_bmb = SparseLu::new(&gram(&minv), "LSC B M*^-1 B^T")?;
        let lu_bhb = SparseLu::new(&gram(&hinv), "LSC B H^-1 B^T")?;
        Ok(Self {
            phase,
            f: [fxx, fyy],
            lu_x,
            lu_y,
            bxt: sparse::transpose(&bx),
            byt: sparse::transpose(&by),
            bx,
            by,
            minv,
            hinv,
            lu_bmb,
            lu_bhb,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Whether the two velocity blocks of `M_A` coincide.
    pub fn shared_momentum_block(&self) -> bool {
        self.lu_y.is_none()
    }

    pub fn momentum_blocks(&self) -> &[SpMat<f64>; 2] {
        &self.f
    }

    fn scale_rows(d: &[f64], m: &Mat<f64>) -> Mat<f64> {
        Mat::from_fn(m.nrows(), m.ncols(), |i, j| d[i] * m[(i, j)])
    }

    /// `M_s^{-1} q` for every column of `q`.
    pub fn schur_inverse(&self, q: &Mat<f64>) -> Mat<f64> {
        let s = self.lu_bhb.solve(q.as_ref());
        let ux = Self::scale_rows(&self.hinv, &sparse::mul_dense(&self.bxt, s.as_ref()));
        let uy = Self::scale_rows(&self.hinv, &sparse::mul_dense(&self.byt, s.as_ref()));
        let fx = Self::scale_rows(&self.minv, &sparse::mul_dense(&self.f[0], ux.as_ref()));
        let fy = Self::scale_rows(&self.minv, &sparse::mul_dense(&self.f[1], uy.as_ref()));
        let mid = sparse::mul_dense(&self.bx, fx.as_ref()) + sparse::mul_dense(&self.by, fy.as_ref());
        self.lu_bmb.solve(mid.as_ref())
    }
}

impl Preconditioner<f64> for MeanPreconditioner {
    fn apply_inverse(&self, x: &LowRankVec<f64>, eps: f64) -> Result<LowRankVec<f64>> {
        let dims = x.dims();
        if dims.n_u != self.minv.len() || dims.n_p != self.bx.nrows() {
            return Err(mismatch(
                "MeanPreconditioner::apply_inverse",
                format!("n_u={}, n_p={}", self.minv.len(), self.bx.nrows()),
                format!("n_u={}, n_p={}", dims.n_u, dims.n_p),
            ));
        }
        // The parametric factor is the identity, so only V factors change.
        let xp = x.block(Field::P);
        let zp = Factored {
            v: -self.schur_inverse(&xp.v),
            w: xp.w.clone(),
        };
        let vel = |k: usize, bt: &SpMat<f64>| -> Factored<f64> {
            let xu = x.block(Field::ALL[k]);
            let coupled = Factored {
                v: sparse::mul_dense(bt, zp.v.as_ref()),
                w: zp.w.clone(),
            };
            let rhs = Factored::concat(&[(1.0, xu), (-1.0, &coupled)], dims.n_u, dims.n_xi);
            Factored {
                v: match (k, &self.lu_y) {
                    (1, Some(lu)) => lu.solve(rhs.v.as_ref()),
                    _ => self.lu_x.solve(rhs.v.as_ref()),
                },
                w: rhs.w,
            }
        };
        let zx = vel(0, &self.bxt);
        let zy = vel(1, &self.byt);
        Ok(LowRankVec::from_blocks(dims, [zx, zy, zp])?.truncated(eps))
    }
}
