//! Moments, samples and coefficient diagnostics of stochastic Galerkin solutions.
//!
//! All routines assume an orthonormal gPC basis whose first function is the
//! constant, so the mean is the first coefficient and the variance is the sum
//! of squares of the remaining ones.

use std::io::Write;

use faer::Mat;

use crate::error::{mismatch, Error, Result};
use crate::fem::{Discretization, Dof};
use crate::gpc::{GpcBasis, Normalization};
use crate::lowrank::{Factored, Field, LowRankVec};
use crate::sparse;
use crate::Scalar;

/// Mean and variance fields on free dofs, coefficient norms and spectra.
#[derive(Debug, Clone)]
pub struct SolutionStats<T: Scalar> {
    pub mean: [Vec<T>; 3],
    pub variance: [Vec<T>; 3],
    /// `‖u_i‖_2` over all three blocks, one entry per gPC index.
    pub coefficient_norms: Vec<T>,
    pub singular_values: [Vec<T>; 3],
}

impl<T: Scalar> SolutionStats<T> {
    pub fn mean(&self, f: Field) -> &[T] {
        &self.mean[f.index()]
    }

    pub fn variance(&self, f: Field) -> &[T] {
        &self.variance[f.index()]
    }
}

fn check_basis<T: Scalar>(u: &LowRankVec<T>, basis: &GpcBasis<T>) -> Result<()> {
    if basis.normalization() != Normalization::Orthonormal {
        return Err(Error::InvalidParameter {
            name: "basis",
            reason: "moments require an orthonormal basis".into(),
        });
    }
    if basis.len() != u.dims().n_xi {
        return Err(mismatch("gPC basis", u.dims().n_xi, basis.len()));
    }
    Ok(())
}

/// `V w` where `w` is row `i` of `W`.
fn mode<T: Scalar>(b: &Factored<T>, i: usize) -> Vec<T> {
    (0..b.nrows())
        .map(|j| (0..b.rank()).fold(T::zero(), |a, k| a + b.v[(j, k)] * b.w[(i, k)]))
        .collect()
}

/// Row-wise `v_j^T Q v_j` with `Q = W_{1..}^T W_{1..}`.
fn block_variance<T: Scalar>(b: &Factored<T>) -> Vec<T> {
    let r = b.rank();
    let wt = b.w.get(1.., ..);
    let q = wt.transpose() * wt;
    let vq = &b.v * &q;
    (0..b.nrows())
        .map(|j| {
            let s = (0..r).fold(T::zero(), |a, k| a + vq[(j, k)] * b.v[(j, k)]);
            // Q is positive semidefinite, so negative values are rounding.
            if s < T::zero() {
                T::zero()
            } else {
                s
            }
        })
        .collect()
}

/// Norms `‖V w_i‖` for every row `w_i` of `W`, through a thin QR of `V`.
fn row_norms<T: Scalar>(b: &Factored<T>) -> Vec<T> {
    let m = b.ncols();
    if b.rank() == 0 {
        return vec![T::zero(); m];
    }
    let r = b.v.qr().thin_R().to_owned();
    let rw = &r * b.w.transpose();
    (0..m)
        .map(|i| (0..rw.nrows()).fold(T::zero(), |a, k| a + rw[(k, i)] * rw[(k, i)]).sqrt())
        .collect()
}

/// Moments and diagnostics computed from the factors without densifying.
pub fn compute_stats<T: Scalar>(u: &LowRankVec<T>, basis: &GpcBasis<T>) -> Result<SolutionStats<T>> {
    check_basis(u, basis)?;
    let mean = Field::ALL.map(|f| mode(u.block(f), 0));
    let variance = Field::ALL.map(|f| block_variance(u.block(f)));
    let per_block = Field::ALL.map(|f| row_norms(u.block(f)));
    let coefficient_norms = (0..u.dims().n_xi)
        .map(|i| per_block.iter().fold(T::zero(), |a, n| a + n[i] * n[i]).sqrt())
        .collect();
    Ok(SolutionStats {
        mean,
        variance,
        coefficient_norms,
        singular_values: Field::ALL.map(|f| u.block(f).singular_values()),
    })
}

/// Evaluates the gPC expansion at `xi` as `V (W^T psi(xi))` per block.
pub fn sample_solution<T: Scalar>(u: &LowRankVec<T>, basis: &GpcBasis<T>, xi: &[T]) -> Result<[Vec<T>; 3]> {
    if basis.len() != u.dims().n_xi {
        return Err(mismatch("gPC basis", u.dims().n_xi, basis.len()));
    }
    let psi = basis.eval(xi)?;
    Ok(Field::ALL.map(|f| {
        let b = u.block(f);
        let c: Vec<T> = (0..b.rank())
            .map(|k| (0..b.ncols()).fold(T::zero(), |a, i| a + b.w[(i, k)] * psi[i]))
            .collect();
        (0..b.nrows())
            .map(|j| (0..b.rank()).fold(T::zero(), |a, k| a + b.v[(j, k)] * c[k]))
            .collect()
    }))
}

/// One row of the coefficient table.
#[derive(Debug, Clone)]
pub struct CoefficientRow<T: Scalar> {
    pub index: usize,
    pub label: String,
    pub total_degree: usize,
    pub norm: T,
    pub block_norms: [T; 3],
}

/// Per-index coefficient norms plus the parametric factors for heat maps.
#[derive(Debug, Clone)]
pub struct CoefficientDiagnostics<T: Scalar> {
    pub rows: Vec<CoefficientRow<T>>,
    /// Largest `|W_ik|` in each column `k` of every block.
    pub column_max: [Vec<T>; 3],
    pub singular_values: [Vec<T>; 3],
}

impl<T: Scalar> CoefficientDiagnostics<T> {
    /// Index of the largest coefficient norm.
    pub fn dominant_index(&self) -> Option<usize> {
        self.rows
            .iter()
            .max_by(|a, b| a.norm.partial_cmp(&b.norm).unwrap_or(std::cmp::Ordering::Equal))
            .map(|r| r.index)
    }

    /// CSV table `index,label,degree,norm,norm_ux,norm_uy,norm_p`.
    ///
    /// The first line records the basis normalization in use.
    pub fn write_csv<W: Write>(&self, tag: &str, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# normalization={tag}")?;
        writeln!(out, "index,label,degree,norm,norm_ux,norm_uy,norm_p")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.index,
                r.label,
                r.total_degree,
                r.norm.to_f64_lossy(),
                r.block_norms[0].to_f64_lossy(),
                r.block_norms[1].to_f64_lossy(),
                r.block_norms[2].to_f64_lossy()
            )?;
        }
        Ok(())
    }
}

pub fn coefficient_diagnostics<T: Scalar>(u: &LowRankVec<T>, basis: &GpcBasis<T>) -> Result<CoefficientDiagnostics<T>> {
    check_basis(u, basis)?;
    let per_block = Field::ALL.map(|f| row_norms(u.block(f)));
    let rows = basis
        .indices()
        .iter()
        .enumerate()
        .map(|(i, mi)| {
            let block_norms = [per_block[0][i], per_block[1][i], per_block[2][i]];
            CoefficientRow {
                index: i,
                label: mi.label(),
                total_degree: mi.total_degree(),
                norm: block_norms.iter().fold(T::zero(), |a, &n| a + n * n).sqrt(),
                block_norms,
            }
        })
        .collect();
    let column_max = Field::ALL.map(|f| {
        let w = &u.block(f).w;
        (0..w.ncols())
            .map(|k| (0..w.nrows()).fold(T::zero(), |a, i| a.max(w[(i, k)].abs())))
            .collect()
    });
    Ok(CoefficientDiagnostics {
        rows,
        column_max,
        singular_values: Field::ALL.map(|f| u.block(f).singular_values()),
    })
}

/// Graph norms `‖∇u‖ = (∫ ∇u : ∇u)^{1/2}` for velocity and `‖p‖_{L^2}` for
/// pressure, evaluated on full nodal fields.
#[derive(Debug, Clone, Copy)]
pub struct GraphNorms<'a> {
    disc: &'a Discretization,
}

impl<'a> GraphNorms<'a> {
    pub fn new(disc: &'a Discretization) -> Self {
        Self { disc }
    }

    /// `‖∇u‖` of one velocity component on all nodes.
    pub fn velocity(&self, u: &[f64]) -> f64 {
        self.disc.assembler.gradient_norm_sq(u).max(0.0).sqrt()
    }

    pub fn pressure(&self, p: &[f64]) -> f64 {
        let mp = sparse::mul_vec(&self.disc.pressure_mass, p);
        p.iter().zip(&mp).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// `‖∇(u_x, u_y)‖ + ‖p‖`.
    pub fn combined(&self, f: &[Vec<f64>; 3]) -> f64 {
        self.velocity(&f[0]).hypot(self.velocity(&f[1])) + self.pressure(&f[2])
    }
}

/// Mean fields on all nodes (lift included) and variance fields on all nodes
/// (zero on Dirichlet nodes).
pub fn nodal_fields(disc: &Discretization, s: &SolutionStats<f64>) -> ([Vec<f64>; 3], [Vec<f64>; 3]) {
    let (mx, my) = disc.full_velocity(s.mean(Field::Ux), s.mean(Field::Uy), true);
    let (vx, vy) = disc.full_velocity(s.variance(Field::Ux), s.variance(Field::Uy), false);
    ([mx, my, s.mean(Field::P).to_vec()], [vx, vy, s.variance(Field::P).to_vec()])
}

/// Differences of mean and variance fields, each divided by the reference's
/// combined graph norm of the same statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatsDifference {
    /// `‖∇η_x‖, ‖∇η_y‖, ‖η_p‖` over the normalization.
    pub mean: [f64; 3],
    pub variance: [f64; 3],
    /// `(‖∇η_u‖ + ‖η_p‖)` over the normalization.
    pub mean_total: f64,
    pub variance_total: f64,
}

impl StatsDifference {
    pub fn max(&self) -> f64 {
        self.mean_total.max(self.variance_total)
    }
}

/// Normalized differences of `a` against the reference `b`.
pub fn stats_difference(disc: &Discretization, a: &SolutionStats<f64>, b: &SolutionStats<f64>) -> StatsDifference {
    let g = GraphNorms::new(disc);
    let (am, av) = nodal_fields(disc, a);
    let (bm, bv) = nodal_fields(disc, b);
    let diff = |x: &[Vec<f64>; 3], y: &[Vec<f64>; 3]| -> [Vec<f64>; 3] {
        std::array::from_fn(|k| x[k].iter().zip(&y[k]).map(|(p, q)| p - q).collect())
    };
    let parts = |d: &[Vec<f64>; 3], norm: f64| {
        let n = if norm > 0.0 { norm } else { 1.0 };
        let per = [g.velocity(&d[0]) / n, g.velocity(&d[1]) / n, g.pressure(&d[2]) / n];
        (per, g.combined(d) / n)
    };
    let (mean, mean_total) = parts(&diff(&am, &bm), g.combined(&bm));
    let (variance, variance_total) = parts(&diff(&av, &bv), g.combined(&bv));
    StatsDifference {
        mean,
        variance,
        mean_total,
        variance_total,
    }
}

/// Mean and variance of each field at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeMoments {
    pub x: f64,
    pub y: f64,
    pub mean: [f64; 3],
    pub variance: [f64; 3],
}

/// Interpolates every gPC coefficient at `(x, y)`, adding the lift to the mean.
pub fn probe_moments(disc: &Discretization, u: &LowRankVec<f64>, x: f64, y: f64) -> Result<ProbeMoments> {
    let mesh = disc.mesh();
    let outside = || Error::InvalidParameter {
        name: "probe",
        reason: format!("point ({x}, {y}) is not in the mesh"),
    };
    let vw = mesh.velocity_weights(x, y).ok_or_else(outside)?;
    let pw = mesh.pressure_weights(x, y).ok_or_else(outside)?;
    let n_xi = u.dims().n_xi;
    let mut mean = [0.0; 3];
    let mut variance = [0.0; 3];
    for f in Field::ALL {
        let b = u.block(f);
        // Interpolated row of V over the element's free dofs.
        let mut row = vec![0.0; b.rank()];
        let mut lift = 0.0;
        let weights: Vec<(usize, f64)> = match f {
            Field::P => pw.iter().map(|&(n, w)| (n, w)).collect(),
            _ => vw
                .iter()
                .filter_map(|&(n, w)| match mesh.dofs[n] {
                    Dof::Free(i) => Some((i, w)),
                    Dof::Fixed(i) => {
                        lift += w * if f == Field::Ux { disc.gx[i] } else { disc.gy[i] };
                        None
                    }
                })
                .collect(),
        };
        for (i, w) in weights {
            for (k, r) in row.iter_mut().enumerate() {
                *r += w * b.v[(i, k)];
            }
        }
        let coeffs: Vec<f64> = (0..n_xi)
            .map(|i| row.iter().enumerate().map(|(k, r)| r * b.w[(i, k)]).sum())
            .collect();
        mean[f.index()] = coeffs[0] + lift;
        variance[f.index()] = coeffs[1..].iter().map(|c| c * c).sum();
    }
    Ok(ProbeMoments { x, y, mean, variance })
}

/// Nodal CSV of mean and variance fields.
///
/// Velocity rows carry the lift in the mean and zero variance on Dirichlet
/// nodes; pressure rows follow with `kind = p`.
pub fn write_stats_csv<W: Write>(disc: &Discretization, s: &SolutionStats<f64>, mut out: W) -> std::io::Result<()> {
    let mesh = disc.mesh();
    let ([mx, my, _], [vx, vy, _]) = nodal_fields(disc, s);
    writeln!(out, "kind,node,x,y,mean_ux,mean_uy,var_ux,var_uy,mean_p,var_p")?;
    for (n, p) in mesh.nodes.iter().enumerate() {
        writeln!(
            out,
            "u,{n},{:.6},{:.6},{:.16e},{:.16e},{:.16e},{:.16e},,",
            p[0], p[1], mx[n], my[n], vx[n], vy[n]
        )?;
    }
    for (n, p) in mesh.pnodes.iter().enumerate() {
        writeln!(
            out,
            "p,{n},{:.6},{:.6},,,,,{:.16e},{:.16e}",
            p[0],
            p[1],
            s.mean(Field::P)[n],
            s.variance(Field::P)[n]
        )?;
    }
    Ok(())
}

/// Densified reference for the moments, used to cross-check the factored route.
pub fn dense_moments(u: &LowRankVec<f64>) -> Result<([Vec<f64>; 3], [Vec<f64>; 3])> {
    let mats: [Mat<f64>; 3] = u.densify()?;
    let mean = mats.each_ref().map(|m| (0..m.nrows()).map(|j| m[(j, 0)]).collect());
    let var = mats
        .each_ref()
        .map(|m| (0..m.nrows()).map(|j| (1..m.ncols()).map(|i| m[(j, i)] * m[(j, i)]).sum()).collect());
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lowrank::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, ranks: [usize; 3], seed: u64) -> LowRankVec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = |r: usize, c: usize| Mat::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
        let blocks = Field::ALL.map(|f| Factored::new(m(dims.spatial(f), ranks[f.index()]), m(dims.n_xi, ranks[f.index()])).unwrap());
        LowRankVec::from_blocks(dims, blocks).unwrap()
    }

    #[test]
    fn mean_only_field_has_zero_variance() {
        let basis = GpcBasis::<f64>::new(2, 2);
        let dims = Dims::new(7, 3, basis.len());
        let e1 = |r: usize| Mat::from_fn(dims.n_xi, r, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let blocks = Field::ALL.map(|f| {
            let n = dims.spatial(f);
            Factored::new(Mat::from_fn(n, 1, |i, _| i as f64 + 1.0), e1(1)).unwrap()
        });
        let u = LowRankVec::from_blocks(dims, blocks).unwrap();
        let s = compute_stats(&u, &basis).unwrap();
        for f in Field::ALL {
            assert!(s.variance(f).iter().all(|&v| v == 0.0));
            assert_eq!(s.mean(f)[2], 3.0);
        }
    }

    #[test]
    fn factored_stats_match_densified() {
        let basis = GpcBasis::<f64>::new(3, 2);
        let dims = Dims::new(40, 12, basis.len());
        let u = random(dims, [5, 3, 2], 7);
        let s = compute_stats(&u, &basis).unwrap();
        let (mean, var) = dense_moments(&u).unwrap();
        for f in Field::ALL {
            let k = f.index();
            let scale = var[k].iter().fold(1.0f64, |a, &b| a.max(b));
            for j in 0..dims.spatial(f) {
                assert!((s.mean[k][j] - mean[k][j]).abs() <= 1e-12 * scale);
                assert!((s.variance[k][j] - var[k][j]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn parseval_over_coefficients() {
        let basis = GpcBasis::<f64>::new(3, 2);
        let dims = Dims::new(30, 9, basis.len());
        let u = random(dims, [4, 4, 2], 11);
        let s = compute_stats(&u, &basis).unwrap();
        let sum: f64 = s.coefficient_norms.iter().map(|n| n * n).sum();
        let n = u.norm();
        assert!((sum - n * n).abs() <= 1e-12 * n * n);
        let d = coefficient_diagnostics(&u, &basis).unwrap();
        assert_eq!(d.rows[0].label, basis.indices()[0].label());
        for (r, c) in d.rows.iter().zip(&s.coefficient_norms) {
            assert!((r.norm - c).abs() <= 1e-13 * n);
        }
    }

    #[test]
    fn samples_match_densified_evaluation() {
        let basis = GpcBasis::<f64>::new(3, 3);
        let dims = Dims::new(25, 8, basis.len());
        let u = random(dims, [6, 2, 3], 3);
        let mats = u.densify().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let psi = basis.eval(&xi).unwrap();
            let got = sample_solution(&u, &basis, &xi).unwrap();
            for f in Field::ALL {
                let m = &mats[f.index()];
                for j in 0..m.nrows() {
                    let want: f64 = (0..m.ncols()).map(|i| m[(j, i)] * psi[i]).sum();
                    worst = worst.max((got[f.index()][j] - want).abs() / want.abs().max(1.0));
                }
            }
        }
        assert!(worst <= 1e-12, "max relative error {worst:e}");
    }

    #[test]
    fn sample_at_origin_sums_modes_nonzero_there() {
        let basis = GpcBasis::<f64>::new(1, 2);
        let dims = Dims::new(1, 1, 3);
        // Modes psi_0 and psi_2 only; psi_2(0) = -sqrt(5)/2.
        let w = Mat::from_fn(3, 1, |i, _| [1.0, 0.0, 2.0][i]);
        let blocks = Field::ALL.map(|_| Factored::new(Mat::from_fn(1, 1, |_, _| 1.0), w.clone()).unwrap());
        let u = LowRankVec::from_blocks(dims, blocks).unwrap();
        let s = sample_solution(&u, &basis, &[0.0]).unwrap();
        let want = 1.0 - 2.0 * 5f64.sqrt() / 2.0;
        assert!((s[0][0] - want).abs() < 1e-14);
    }

    #[test]
    fn graph_norms_of_simple_fields() {
        let disc = Discretization::new(crate::fem::Mesh::build(crate::fem::Geometry::channel_with_obstacle(), 0.5).unwrap());
        let g = GraphNorms::new(&disc);
        let mesh = disc.mesh();
        // u = x has |∇u|^2 = 1, so ‖∇u‖^2 is the area of the domain minus the obstacle.
        let ux: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let area = 24.0 - 0.0625;
        assert!((g.velocity(&ux).powi(2) - area).abs() < 1e-10);
        let one = vec![1.0; disc.n_p()];
        assert!((g.pressure(&one).powi(2) - area).abs() < 1e-10);
        let zero = vec![0.0; mesh.nodes.len()];
        assert!((g.combined(&[ux.clone(), zero, one]) - 2.0 * area.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn identical_stats_have_zero_difference() {
        let p = crate::problem::tests::tiny(2, 2, 0.1);
        let u = random(p.dims(), [3, 2, 2], 4);
        let s = compute_stats(&u, &p.basis).unwrap();
        let d = stats_difference(&p.disc, &s, &s);
        assert_eq!(d.max(), 0.0);
        let v = compute_stats(&u.scaled(1.0 + 1e-6), &p.basis).unwrap();
        let d = stats_difference(&p.disc, &v, &s);
        assert!(d.variance_total > 1e-6 && d.variance_total < 3e-6);
    }

    #[test]
    fn probe_moments_agree_with_nodal_interpolation() {
        let p = crate::problem::tests::tiny(2, 2, 0.1);
        let dims = p.dims();
        let u = random(dims, [3, 3, 2], 5);
        let s = compute_stats(&u, &p.basis).unwrap();
        let mesh = p.disc.mesh();
        let (mx, _) = p.disc.full_velocity(s.mean(Field::Ux), s.mean(Field::Uy), true);
        let (px, py) = (1.3, 0.2);
        let pm = probe_moments(&p.disc, &u, px, py).unwrap();
        assert!((pm.mean[0] - mesh.eval_velocity(&mx, px, py).unwrap()).abs() < 1e-12);
        assert!((pm.mean[2] - mesh.eval_pressure(s.mean(Field::P), px, py).unwrap()).abs() < 1e-12);
        // At a node the interpolated variance is the nodal variance.
        let (node, i) = mesh
            .dofs
            .iter()
            .enumerate()
            .find_map(|(n, d)| match *d {
                Dof::Free(i) => Some((n, i)),
                Dof::Fixed(_) => None,
            })
            .unwrap();
        let q = mesh.nodes[node];
        let at = probe_moments(&p.disc, &u, q[0], q[1]).unwrap();
        assert!((at.variance[1] - s.variance(Field::Uy)[i]).abs() <= 1e-12 * s.variance(Field::Uy)[i].max(1.0));
        assert!(probe_moments(&p.disc, &u, 0.75, -0.25).is_err());
    }
}
