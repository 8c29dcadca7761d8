//! Random viscosity built from a truncated Karhunen–Loève expansion.
//!
//! `nu(x, xi) = nu0 + sigma * sum_k sqrt(lambda_k) nu_k(x) xi_k` with
//! `xi_k ~ U[-1, 1]`. The covariance kernels are separable, so the Nyström
//! eigenproblem on a tensor midpoint grid reduces to two 1D eigenproblems.

use std::io::Write;

use faer::{Mat, Side};

use crate::error::{mismatch, Error, Result};
use crate::geometry::Rect;
use crate::gpc::GpcBasis;
use crate::Scalar;

/// Default Nyström grid over `[0,12] x [-1,1]`.
pub const DEFAULT_KL_GRID: (usize, usize) = (96, 16);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `exp(-sum |x_i - y_i| / l_i)`
    AbsoluteExponential,
    /// `exp(-sum (x_i - y_i)^2 / l_i^2)`
    SquaredExponential,
}

impl KernelKind {
    pub fn tag(self) -> &'static str {
        match self {
            KernelKind::AbsoluteExponential => "AE",
            KernelKind::SquaredExponential => "SE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AE" => Some(KernelKind::AbsoluteExponential),
            "SE" => Some(KernelKind::SquaredExponential),
            _ => None,
        }
    }

    fn factor(self, d: f64, l: f64) -> f64 {
        match self {
            KernelKind::AbsoluteExponential => (-d.abs() / l).exp(),
            KernelKind::SquaredExponential => (-(d * d) / (l * l)).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceKernel {
    pub kind: KernelKind,
    pub l1: f64,
    pub l2: f64,
}

impl CovarianceKernel {
    pub fn new(kind: KernelKind, l1: f64, l2: f64) -> Result<Self> {
        for (name, l) in [("l1", l1), ("l2", l2)] {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("correlation length must be positive, got {l}"),
                });
            }
        }
        Ok(Self { kind, l1, l2 })
    }

    pub fn eval(&self, x: (f64, f64), y: (f64, f64)) -> f64 {
        self.kind.factor(x.0 - y.0, self.l1) * self.kind.factor(x.1 - y.1, self.l2)
    }
}

/// Nyström eigenpairs of one separable factor on a uniform midpoint grid.
#[derive(Debug, Clone)]
struct Axis {
    nodes: Vec<f64>,
    h: f64,
    l: f64,
    kind: KernelKind,
    /// Descending.
    values: Vec<f64>,
    /// Column `a` holds eigenfunction `a` at the nodes, unit discrete L2 norm.
    funcs: Mat<f64>,
}

impl Axis {
    fn solve(kind: KernelKind, l: f64, a: f64, b: f64, n: usize) -> Result<Self> {
        let h = (b - a) / n as f64;
        let nodes: Vec<f64> = (0..n).map(|j| a + (j as f64 + 0.5) * h).collect();
        let k = Mat::<f64>::from_fn(n, n, |i, j| h * kind.factor(nodes[i] - nodes[j], l));
        let eig = k
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Eigensolve(format!("{e:?}")))?;
        let s = eig.S().column_vector();
        let u = eig.U();
        let order: Vec<usize> = (0..n).rev().collect();
        let values: Vec<f64> = order.iter().map(|&c| s[c]).collect();
        let scale = 1.0 / h.sqrt();
        let mut funcs = Mat::<f64>::from_fn(n, n, |i, c| u[(i, order[c])] * scale);
        for c in 0..n {
            let first = (0..n).map(|i| funcs[(i, c)]).find(|v| v.abs() > 1e-12).unwrap_or(1.0);
            if first < 0.0 {
                for i in 0..n {
                    funcs[(i, c)] = -funcs[(i, c)];
                }
            }
        }
        Ok(Self {
            nodes,
            h,
            l,
            kind,
            values,
            funcs,
        })
    }

    /// Nyström interpolation `phi_a(t) = (1/lambda_a) sum_j h C(t, t_j) phi_a(t_j)`.
    fn eval(&self, a: usize, t: f64) -> f64 {
        let s: f64 = self
            .nodes
            .iter()
            .enumerate()
            .map(|(j, &tj)| self.kind.factor(t - tj, self.l) * self.funcs[(j, a)])
            .sum();
        s * self.h / self.values[a]
    }
}

/// Leading KL eigenpairs of a covariance kernel over a rectangle.
#[derive(Debug, Clone)]
pub struct KlModes {
    kernel: CovarianceKernel,
    rect: Rect,
    ax: Axis,
    ay: Axis,
    /// `(a, b)` pairs of 1D modes, sorted by descending product eigenvalue.
    pairs: Vec<(usize, usize)>,
    eigenvalues: Vec<f64>,
    all_eigenvalues: Vec<f64>,
}

impl KlModes {
    /// Nyström solve on an `nx x ny` midpoint grid over `rect`.
    pub fn solve(kernel: CovarianceKernel, rect: Rect, n_nu: usize, grid: (usize, usize)) -> Result<Self> {
        let (nx, ny) = grid;
        if nx == 0 || ny == 0 || n_nu > nx * ny / 4 {
            return Err(Error::InvalidParameter {
                name: "kl_grid",
                reason: format!("{nx}x{ny} grid too coarse for {n_nu} modes"),
            });
        }
        let ax = Axis::solve(kernel.kind, kernel.l1, rect.x0, rect.x1, nx)?;
        let ay = Axis::solve(kernel.kind, kernel.l2, rect.y0, rect.y1, ny)?;
        let mut all: Vec<(f64, usize, usize)> = (0..nx)
            .flat_map(|a| (0..ny).map(move |b| (a, b)))
            .map(|(a, b)| (ax.values[a] * ay.values[b], a, b))
            .collect();
        all.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
        let eigenvalues: Vec<f64> = all[..n_nu].iter().map(|p| p.0).collect();
        // A product of two negative 1D values would masquerade as positive.
        for (k, &(lam, a, b)) in all[..n_nu].iter().enumerate() {
            if !(lam > 0.0 && ax.values[a] > 0.0 && ay.values[b] > 0.0) {
                return Err(Error::NonPositiveEigenvalue { index: k + 1, value: lam });
            }
        }
        Ok(Self {
            kernel,
            rect,
            pairs: all[..n_nu].iter().map(|p| (p.1, p.2)).collect(),
            all_eigenvalues: all.iter().map(|p| p.0).collect(),
            eigenvalues,
            ax,
            ay,
        })
    }

    pub fn kernel(&self) -> CovarianceKernel {
        self.kernel
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn n_nu(&self) -> usize {
        self.pairs.len()
    }

    /// `lambda_1 >= ... >= lambda_{n_nu} > 0`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Every eigenvalue of the discrete operator, descending.
    pub fn all_eigenvalues(&self) -> &[f64] {
        &self.all_eigenvalues
    }

    /// Nyström grid points, x index fastest.
    pub fn grid_points(&self) -> Vec<(f64, f64)> {
        self.ay
            .nodes
            .iter()
            .flat_map(|&y| self.ax.nodes.iter().map(move |&x| (x, y)))
            .collect()
    }

    pub fn grid_weight(&self) -> f64 {
        self.ax.h * self.ay.h
    }

    /// Eigenfunction `k` (0-based) at the grid points.
    pub fn grid_values(&self, k: usize) -> Vec<f64> {
        let (a, b) = self.pairs[k];
        let nx = self.ax.nodes.len();
        (0..nx * self.ay.nodes.len())
            .map(|p| self.ax.funcs[(p % nx, a)] * self.ay.funcs[(p / nx, b)])
            .collect()
    }

    /// Eigenfunction `k` (0-based) at an arbitrary point of the rectangle.
    pub fn eigenfunction(&self, k: usize, x: f64, y: f64) -> f64 {
        let (a, b) = self.pairs[k];
        self.ax.eval(a, x) * self.ay.eval(b, y)
    }

    /// `sum_{k < n} lambda_k nu_k(p) nu_k(q)`.
    pub fn mercer(&self, n: usize, p: (f64, f64), q: (f64, f64)) -> f64 {
        (0..n)
            .map(|k| self.eigenvalues[k] * self.eigenfunction(k, p.0, p.1) * self.eigenfunction(k, q.0, q.1))
            .sum()
    }

    /// CSV with one row per mode: `index,lambda,v1,...` (grid values, x fastest).
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let (nx, ny) = (self.ax.nodes.len(), self.ay.nodes.len());
        writeln!(
            out,
            "# kernel={} l1={} l2={} grid={}x{}",
            self.kernel.kind.tag(),
            self.kernel.l1,
            self.kernel.l2,
            nx,
            ny
        )?;
        for k in 0..self.n_nu() {
            let vals: Vec<String> = self.grid_values(k).iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(out, "{},{:.12e},{}", k + 1, self.eigenvalues[k], vals.join(","))?;
        }
        Ok(())
    }
}

/// The affine random viscosity.
#[derive(Debug, Clone)]
pub struct KlField {
    pub nu0: f64,
    pub sigma: f64,
    modes: KlModes,
}

/// `xi_k = psi_{e_k} / sqrt(3)` for the orthonormal Legendre basis.
const ORTHONORMAL_LINEAR_FACTOR: f64 = 0.577_350_269_189_625_8;

impl KlField {
    pub fn new(modes: KlModes, nu0: f64, sigma: f64) -> Result<Self> {
        if !(nu0 > 0.0 && nu0.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "nu0",
                reason: format!("mean viscosity must be positive, got {nu0}"),
            });
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma_nu",
                reason: format!("standard deviation must be nonnegative, got {sigma}"),
            });
        }
        Ok(Self { nu0, sigma, modes })
    }

    pub fn modes(&self) -> &KlModes {
        &self.modes
    }

    pub fn n_nu(&self) -> usize {
        self.modes.n_nu()
    }

    pub fn cov(&self) -> f64 {
        self.sigma / self.nu0
    }

    /// `sigma * sqrt(lambda_k) * nu_k(x, y)`, the coefficient of `xi_k`.
    pub fn mode_amplitude(&self, k: usize, x: f64, y: f64) -> f64 {
        self.sigma * self.modes.eigenvalues[k].sqrt() * self.modes.eigenfunction(k, x, y)
    }

    /// `nu(x, xi)` for one parameter sample.
    pub fn realize(&self, x: f64, y: f64, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.n_nu() {
            return Err(mismatch("KlField::realize", self.n_nu(), xi.len()));
        }
        Ok(self.nu0 + (0..self.n_nu()).map(|k| self.mode_amplitude(k, x, y) * xi[k]).sum::<f64>())
    }

    /// Gpc coefficients of `nu` at `(x, y)`: entry `l` multiplies `psi_{l+1}`.
    pub fn gpc_coefficients(&self, x: f64, y: f64) -> Vec<f64> {
        std::iter::once(self.nu0)
            .chain((0..self.n_nu()).map(|k| self.mode_amplitude(k, x, y) * ORTHONORMAL_LINEAR_FACTOR))
            .collect()
    }

    /// Coefficient arrays `nu_l` sampled at `points`, `l = 1..=n_nu+1`.
    pub fn viscosity_coefficients<T: Scalar>(&self, basis: &GpcBasis<T>, points: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
        if basis.n_nu() != self.n_nu() {
            return Err(mismatch("viscosity_coefficients (n_nu)", self.n_nu(), basis.n_nu()));
        }
        let idx = basis.indices();
        for k in 0..self.n_nu() {
            let ok = idx
                .get(k + 1)
                .is_some_and(|m| m.degrees().iter().enumerate().all(|(j, &d)| d == usize::from(j == k)));
            if !ok {
                return Err(Error::InvalidParameter {
                    name: "basis",
                    reason: format!("index {} is not the linear polynomial in xi_{}", k + 2, k + 1),
                });
            }
        }
        let mut out = vec![Vec::with_capacity(points.len()); self.n_nu() + 1];
        for &(x, y) in points {
            for (l, c) in self.gpc_coefficients(x, y).into_iter().enumerate() {
                out[l].push(c);
            }
        }
        Ok(out)
    }

    /// Exact minimum of `nu(x, .)` over the parameter cube.
    pub fn min_viscosity(&self, x: f64, y: f64) -> f64 {
        self.nu0 - (0..self.n_nu()).map(|k| self.mode_amplitude(k, x, y).abs()).sum::<f64>()
    }

    /// Variance of `nu(x, xi)` under uniform `xi`.
    pub fn variance(&self, x: f64, y: f64) -> f64 {
        (0..self.n_nu()).map(|k| self.mode_amplitude(k, x, y).powi(2)).sum::<f64>() / 3.0
    }

    /// Fails if some realization is nonpositive at one of `points`.
    pub fn check_positive(&self, points: &[(f64, f64)]) -> Result<()> {
        for &(x, y) in points {
            let m = self.min_viscosity(x, y);
            if m <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: "sigma_nu",
                    reason: format!("viscosity reaches {m:.3e} at ({x}, {y}); lower the coefficient of variation"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpc::GpcBasis;

    fn modes(kind: KernelKind, l: f64, n_nu: usize) -> KlModes {
        KlModes::solve(CovarianceKernel::new(kind, l, l).unwrap(), Rect::channel(), n_nu, DEFAULT_KL_GRID).unwrap()
    }

    #[test]
    fn kernel_values() {
        let ae = CovarianceKernel::new(KernelKind::AbsoluteExponential, 1.0, 1.0).unwrap();
        let se = CovarianceKernel::new(KernelKind::SquaredExponential, 2.0, 2.0).unwrap();
        assert_eq!(ae.eval((0.3, 0.1), (0.3, 0.1)), 1.0);
        assert_eq!(se.eval((0.3, 0.1), (0.3, 0.1)), 1.0);
        assert!((ae.eval((1.0, 0.0), (0.0, 0.0)) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((se.eval((2.0, 0.0), (0.0, 0.0)) - (-1.0f64).exp()).abs() < 1e-15);
        assert!(CovarianceKernel::new(KernelKind::SquaredExponential, 0.0, 1.0).is_err());
    }

    #[test]
    fn trace_equals_area() {
        for kind in [KernelKind::AbsoluteExponential, KernelKind::SquaredExponential] {
            let m = modes(kind, 4.0, 5);
            let tr: f64 = m.all_eigenvalues().iter().sum();
            assert!((tr - 24.0).abs() < 24.0 * 1e-6, "{kind:?}: {tr}");
            assert!(m.eigenvalues().windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn se_decays_faster_than_ae() {
        let ae = modes(KernelKind::AbsoluteExponential, 8.0, 5);
        let se = modes(KernelKind::SquaredExponential, 8.0, 5);
        let r = |m: &KlModes| m.eigenvalues()[4] / m.eigenvalues()[0];
        assert!(r(&se) < r(&ae));
    }

    #[test]
    fn eigenfunctions_orthonormal() {
        let m = modes(KernelKind::AbsoluteExponential, 2.0, 5);
        let w = m.grid_weight();
        for a in 0..5 {
            let va = m.grid_values(a);
            for b in 0..5 {
                let vb = m.grid_values(b);
                let g: f64 = va.iter().zip(&vb).map(|(p, q)| p * q * w).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-8, "gram[{a}][{b}] = {g}");
            }
        }
    }

    #[test]
    fn interpolation_reproduces_grid_values() {
        let m = modes(KernelKind::SquaredExponential, 4.0, 5);
        let pts = m.grid_points();
        for k in 0..5 {
            let g = m.grid_values(k);
            for &p in [0usize, 17, 500, 1535].iter() {
                assert!((m.eigenfunction(k, pts[p].0, pts[p].1) - g[p]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn mercer_error_decreases() {
        let kernel = CovarianceKernel::new(KernelKind::SquaredExponential, 4.0, 4.0).unwrap();
        let m = KlModes::solve(kernel, Rect::channel(), 12, DEFAULT_KL_GRID).unwrap();
        let pts: Vec<(f64, f64)> = (0..8)
            .flat_map(|i| (0..8).map(move |j| (0.75 + 1.5 * i as f64, -0.875 + 0.25 * j as f64)))
            .collect();
        let err = |n: usize| {
            let mut s = 0.0;
            for &p in &pts {
                for &q in &pts {
                    s += (kernel.eval(p, q) - m.mercer(n, p, q)).powi(2);
                }
            }
            s.sqrt()
        };
        let errs: Vec<f64> = (1..=12).map(err).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{errs:?}");
        assert!(errs[11] < errs[0]);
    }

    #[test]
    fn deterministic_limit_and_mean() {
        let basis = GpcBasis::<f64>::new(5, 3);
        let f = KlField::new(modes(KernelKind::AbsoluteExponential, 4.0, 5), 0.02, 0.0).unwrap();
        let c = f.viscosity_coefficients(&basis, &[(1.0, 0.5), (7.0, -0.3)]).unwrap();
        assert_eq!(c[0], vec![0.02, 0.02]);
        assert!(c[1..].iter().flatten().all(|&v| v == 0.0));

        let f = KlField::new(f.modes().clone(), 0.02, 0.002).unwrap();
        assert_eq!(f.realize(3.0, 0.2, &[0.0; 5]).unwrap(), 0.02);
        // Gpc coefficients reproduce the realization through the basis.
        let xi = [0.3, -0.7, 0.1, 0.9, -0.2];
        let psi = basis.eval(&xi).unwrap();
        let c = f.gpc_coefficients(3.0, 0.2);
        let via_basis: f64 = c.iter().zip(&psi).map(|(a, b)| a * b).sum();
        assert!((via_basis - f.realize(3.0, 0.2, &xi).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn corners_stay_positive_at_ten_percent() {
        for kind in [KernelKind::AbsoluteExponential, KernelKind::SquaredExponential] {
            for l in [1.0, 8.0, 32.0] {
                let f = KlField::new(modes(kind, l, 5), 0.01, 0.001).unwrap();
                let pts = f.modes().grid_points();
                f.check_positive(&pts).unwrap();
                for corner in 0..32u32 {
                    let xi: Vec<f64> = (0..5).map(|k| if corner >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
                    for &(x, y) in pts.iter().step_by(37) {
                        assert!(f.realize(x, y, &xi).unwrap() > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn basis_mismatch_rejected() {
        let f = KlField::new(modes(KernelKind::AbsoluteExponential, 4.0, 5), 0.02, 0.001).unwrap();
        assert!(f.viscosity_coefficients(&GpcBasis::<f64>::new(4, 3), &[(1.0, 0.0)]).is_err());
    }

    #[test]
    fn too_many_modes_rejected() {
        let k = CovarianceKernel::new(KernelKind::AbsoluteExponential, 1.0, 1.0).unwrap();
        assert!(KlModes::solve(k, Rect::channel(), 5, (4, 4)).is_err());
    }
}
