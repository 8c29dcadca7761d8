//! Direct Picard/Newton solver for one viscosity realization.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fem::assembly::Split;
use crate::fem::operators::Discretization;
use crate::sparse::{self, SparseLu};

#[derive(Debug, Clone, Copy)]
pub struct DeterministicOptions {
    /// Picard steps before switching to Newton.
    pub picard_steps: usize,
    pub max_steps: usize,
    /// Stop when the residual falls below `tol` times the residual at zero.
    pub tol: f64,
    /// Drop the convective term (Stokes problem).
    pub stokes: bool,
}

impl Default for DeterministicOptions {
    fn default() -> Self {
        Self {
            picard_steps: 4,
            max_steps: 20,
            tol: 1e-10,
            stokes: false,
        }
    }
}

/// Velocity on all nodes and pressure on all pressure nodes.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
    pub p: Vec<f64>,
}

impl FlowField {
    /// CSV rows `x,y,ux,uy` for velocity nodes, then `x,y,p` for pressure nodes.
    pub fn write_csv<W: Write>(&self, d: &Discretization, mut out: W) -> std::io::Result<()> {
        writeln!(out, "kind,x,y,value1,value2")?;
        for (n, xy) in d.mesh().nodes.iter().enumerate() {
            writeln!(out, "u,{},{},{:.12e},{:.12e}", xy[0], xy[1], self.ux[n], self.uy[n])?;
        }
        for (n, xy) in d.mesh().pnodes.iter().enumerate() {
            writeln!(out, "p,{},{},{:.12e},", xy[0], xy[1], self.p[n])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DeterministicSolution {
    pub field: FlowField,
    /// Interior unknowns `[u_x; u_y; p]`.
    pub unknowns: Vec<f64>,
    /// Residual norms, starting with the residual at zero.
    pub history: Vec<f64>,
}

/// Steady Navier–Stokes solver with direct sparse linear algebra.
pub struct DeterministicSolver<'a> {
    disc: &'a Discretization,
    laplacian: Split,
}

impl<'a> DeterministicSolver<'a> {
    /// `viscosity` is sampled at the discretization's quadrature points.
    pub fn new(disc: &'a Discretization, viscosity: &[f64]) -> Result<Self> {
        if viscosity.len() != disc.quad_points.len() {
            return Err(crate::error::mismatch("viscosity samples", disc.quad_points.len(), viscosity.len()));
        }
        if let Some(v) = viscosity.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::InvalidParameter {
                name: "viscosity",
                reason: format!("nonpositive sample {v}"),
            });
        }
        Ok(Self {
            disc,
            laplacian: disc.assembler.laplacian(viscosity),
        })
    }

    fn split<'v>(&self, z: &'v [f64]) -> (&'v [f64], &'v [f64], &'v [f64]) {
        let nu = self.disc.n_u();
        (&z[..nu], &z[nu..2 * nu], &z[2 * nu..])
    }

    fn convection(&self, z: &[f64], stokes: bool) -> Option<(Split, (Vec<f64>, Vec<f64>))> {
        if stokes {
            return None;
        }
        let (ux, uy, _) = self.split(z);
        let (wx, wy) = self.disc.full_velocity(ux, uy, true);
        Some((self.disc.assembler.convection(&wx, &wy), (wx, wy)))
    }

    /// `-F(z)`, the negated nonlinear residual.
    pub fn residual(&self, z: &[f64], stokes: bool) -> Vec<f64> {
        let d = self.disc;
        let (ux, uy, p) = self.split(z);
        let f = match self.convection(z, stokes) {
            Some((n, _)) => Split::sum(&[&self.laplacian, &n]),
            None => self.laplacian.clone(),
        };
        let btx = sparse::mul_vec(&sparse::transpose(&d.bx.ii), p);
        let bty = sparse::mul_vec(&sparse::transpose(&d.by.ii), p);
        let rx = f.apply(ux, &d.gx);
        let ry = f.apply(uy, &d.gy);
        let rp: Vec<f64> = d
            .bx
            .apply(ux, &d.gx)
            .iter()
            .zip(d.by.apply(uy, &d.gy))
            .map(|(a, b)| a + b)
            .collect();
        rx.iter()
            .zip(&btx)
            .map(|(a, b)| -(a + b))
            .chain(ry.iter().zip(&bty).map(|(a, b)| -(a + b)))
            .chain(rp.iter().map(|a| -a))
            .collect()
    }

    pub fn solve(&self, opts: &DeterministicOptions) -> Result<DeterministicSolution> {
        let n = self.disc.stride();
        let mut z = vec![0.0; n];
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut r = self.residual(&z, opts.stokes);
        let r0 = norm(&r);
        let mut history = vec![r0];
        let mut step = 0;
        while norm(&r) > opts.tol * r0 {
            if step == opts.max_steps {
                return Err(Error::NonConvergence { steps: step, history });
            }
            let k = self.jacobian(&z, opts.stokes, step >= opts.picard_steps);
            let dz = SparseLu::new(&k, "deterministic Jacobian")?.solve_vec(&r);
            for (a, b) in z.iter_mut().zip(&dz) {
                *a += b;
            }
            r = self.residual(&z, opts.stokes);
            history.push(norm(&r));
            step += 1;
            if opts.stokes && norm(&r) > opts.tol * r0 {
                // A linear problem is solved exactly in one step; anything left is round-off.
                break;
            }
        }
        let (ux, uy, p) = self.split(&z);
        let (fx, fy) = self.disc.full_velocity(ux, uy, true);
        Ok(DeterministicSolution {
            field: FlowField {
                ux: fx,
                uy: fy,
                p: p.to_vec(),
            },
            unknowns: z,
            history,
        })
    }

    /// Oseen (`newton = false`) or Newton matrix at `z`.
    pub fn jacobian(&self, z: &[f64], stokes: bool, newton: bool) -> sparse::SpMat<f64> {
        let a = &self.laplacian;
        match self.convection(z, stokes) {
            None => self.disc.saddle_matrix([Some(&a.ii), None, None, Some(&a.ii)]),
            Some((nmat, (wx, wy))) => {
                let base = Split::sum(&[a, &nmat]);
                if newton {
                    let [wxx, wxy, wyx, wyy] = self.disc.assembler.newton(&wx, &wy);
                    let fxx = Split::sum(&[&base, &wxx]);
                    let fyy = Split::sum(&[&base, &wyy]);
                    self.disc
                        .saddle_matrix([Some(&fxx.ii), Some(&wxy.ii), Some(&wyx.ii), Some(&fyy.ii)])
                } else {
                    self.disc.saddle_matrix([Some(&base.ii), None, None, Some(&base.ii)])
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{Geometry, Mesh};

    fn disc() -> Discretization {
        Discretization::new(Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap())
    }

    #[test]
    fn stokes_one_step() {
        let d = disc();
        let nu = vec![0.02; d.quad_points.len()];
        let s = DeterministicSolver::new(&d, &nu).unwrap();
        let sol = s
            .solve(&DeterministicOptions {
                stokes: true,
                ..Default::default()
            })
            .unwrap();
        assert!(sol.history.last().unwrap() / sol.history[0] < 1e-10);
    }

    #[test]
    fn navier_stokes_symmetry() {
        let d = disc();
        let nu = vec![0.02; d.quad_points.len()];
        let sol = DeterministicSolver::new(&d, &nu).unwrap().solve(&DeterministicOptions::default()).unwrap();
        let h = &sol.history;
        assert!(h.last().unwrap() / h[0] <= 1e-10, "{h:?}");
        let m = d.mesh();
        let scale = sol.field.ux.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for n in 0..m.nodes.len() {
            let k = m.mirror_node(n).unwrap();
            assert!((sol.field.uy[n] + sol.field.uy[k]).abs() < 1e-8 * scale);
            assert!((sol.field.ux[n] - sol.field.ux[k]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn newton_matrix_matches_finite_differences() {
        let d = Discretization::new(
            Mesh::build(Geometry::strip(crate::geometry::Rect::new(0.0, 2.0, -1.0, 1.0).unwrap()), 0.5).unwrap(),
        );
        let nu = vec![0.05; d.quad_points.len()];
        let s = DeterministicSolver::new(&d, &nu).unwrap();
        let n = d.stride();
        let z: Vec<f64> = (0..n).map(|i| 0.3 * ((i * 7 % 5) as f64 - 2.0)).collect();
        let j = sparse::to_dense(&s.jacobian(&z, false, true));
        let h = 1e-6;
        for c in (0..n).step_by(3) {
            let (mut zp, mut zm) = (z.clone(), z.clone());
            zp[c] += h;
            zm[c] -= h;
            let (rp, rm) = (s.residual(&zp, false), s.residual(&zm, false));
            for r in 0..n {
                let fd = -(rp[r] - rm[r]) / (2.0 * h);
                assert!((fd - j[(r, c)]).abs() < 1e-7, "J[{r},{c}] = {} vs {fd}", j[(r, c)]);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_viscosity() {
        let d = disc();
        let mut nu = vec![0.02; d.quad_points.len()];
        nu[3] = 0.0;
        assert!(DeterministicSolver::new(&d, &nu).is_err());
    }
}
