//! Viscosity-independent spatial operators and saddle-point helpers.

use crate::fem::assembly::{Assembler, Split};
use crate::fem::mesh::Mesh;
use crate::sparse::{self, SpMat};

/// Matrices shared by every solve on one mesh.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub assembler: Assembler,
    pub bx: Split,
    pub by: Split,
    /// Diagonal of the consistent velocity mass matrix on free dofs.
    pub mass_diag: Vec<f64>,
    pub pressure_mass: SpMat<f64>,
    /// Dirichlet data on fixed dofs.
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    /// Boundary weights for the least-squares commutator.
    pub boundary_weights: Vec<f64>,
    pub quad_points: Vec<(f64, f64)>,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Self {
        let assembler = Assembler::new(mesh);
        let (bx, by) = assembler.divergence();
        let mass = assembler.mass();
        let mass_diag = (0..assembler.mesh().n_u())
            .map(|i| {
                let col = mass.ii.as_ref().get(i, i);
                *col.expect("mass diagonal stored")
            })
            .collect();
        let (gx, gy) = assembler.mesh().lift();
        Self {
            pressure_mass: assembler.pressure_mass(),
            boundary_weights: assembler.boundary_weights(),
            quad_points: assembler.quadrature_points(),
            bx,
            by,
            mass_diag,
            gx,
            gy,
            assembler,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        self.assembler.mesh()
    }

    pub fn n_u(&self) -> usize {
        self.mesh().n_u()
    }

    pub fn n_p(&self) -> usize {
        self.mesh().n_p()
    }

    /// Size of one deterministic coefficient vector `[u_x; u_y; p]`.
    pub fn stride(&self) -> usize {
        2 * self.n_u() + self.n_p()
    }

    /// Full nodal velocity from interior values, with or without the boundary lift.
    pub fn full_velocity(&self, ux: &[f64], uy: &[f64], with_lift: bool) -> (Vec<f64>, Vec<f64>) {
        let m = self.mesh();
        if with_lift {
            (m.expand(ux, Some(&self.gx)), m.expand(uy, Some(&self.gy)))
        } else {
            (m.expand(ux, None), m.expand(uy, None))
        }
    }

    /// Assembles `[Fxx Fxy Bx^T; Fyx Fyy By^T; Bx By 0]` on free dofs.
    pub fn saddle_matrix(&self, f: [Option<&SpMat<f64>>; 4]) -> SpMat<f64> {
        let (nu, np) = (self.n_u(), self.n_p());
        let n = 2 * nu + np;
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        let offs = [(0, 0), (0, nu), (nu, 0), (nu, nu)];
        for (blk, &(ro, co)) in f.iter().zip(&offs) {
            if let Some(m) = blk {
                t.extend(sparse::entries(m).map(|(i, j, v)| (ro + i, co + j, v)));
            }
        }
        for (b, co) in [(&self.bx.ii, 0), (&self.by.ii, nu)] {
            for (i, j, v) in sparse::entries(b) {
                t.push((2 * nu + i, co + j, v));
                t.push((co + j, 2 * nu + i, v));
            }
        }
        sparse::from_triplets(n, n, &t)
    }
}
