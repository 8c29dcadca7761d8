//! Taylor–Hood (Q2–Q1) assembly with Dirichlet elimination.
//!
//! Velocity matrices are returned split by column into the free-dof part
//! (`ii`) and the Dirichlet part (`ib`); the latter multiplies boundary data
//! when forming right-hand sides. All velocity matrices share one pattern.

use crate::fem::mesh::{Dof, Element, Mesh};
use crate::sparse::{self, Pattern, SpMat};

const GAUSS3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GAUSS3_W: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

/// Quadratic Lagrange basis on `[-1, 1]` with nodes `-1, 0, 1` and derivatives.
pub fn quad_1d(s: f64) -> ([f64; 3], [f64; 3]) {
    (
        [0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)],
        [s - 0.5, -2.0 * s, s + 0.5],
    )
}

/// Linear Lagrange basis on `[-1, 1]`.
pub fn lin_1d(s: f64) -> [f64; 2] {
    [0.5 * (1.0 - s), 0.5 * (1.0 + s)]
}

/// Shape data at the 3x3 Gauss points of the reference square.
#[derive(Debug, Clone)]
pub struct RefElement {
    /// Points `(s, t)`, index `i + 3 j`.
    pub pts: [(f64, f64); 9],
    pub w: [f64; 9],
    pub phi: [[f64; 9]; 9],
    pub ds: [[f64; 9]; 9],
    pub dt: [[f64; 9]; 9],
    pub psi: [[f64; 4]; 9],
}

impl RefElement {
    pub fn new() -> Self {
        let mut r = Self {
            pts: [(0.0, 0.0); 9],
            w: [0.0; 9],
            phi: [[0.0; 9]; 9],
            ds: [[0.0; 9]; 9],
            dt: [[0.0; 9]; 9],
            psi: [[0.0; 4]; 9],
        };
        for j in 0..3 {
            for i in 0..3 {
                let q = i + 3 * j;
                let (s, t) = (GAUSS3[i], GAUSS3[j]);
                r.pts[q] = (s, t);
                r.w[q] = GAUSS3_W[i] * GAUSS3_W[j];
                let ((ls, dls), (lt, dlt)) = (quad_1d(s), quad_1d(t));
                for b in 0..3 {
                    for a in 0..3 {
                        r.phi[q][a + 3 * b] = ls[a] * lt[b];
                        r.ds[q][a + 3 * b] = dls[a] * lt[b];
                        r.dt[q][a + 3 * b] = ls[a] * dlt[b];
                    }
                }
                let (ps, pt) = (lin_1d(s), lin_1d(t));
                for b in 0..2 {
                    for a in 0..2 {
                        r.psi[q][a + 2 * b] = ps[a] * pt[b];
                    }
                }
            }
        }
        r
    }
}

impl Default for RefElement {
    fn default() -> Self {
        Self::new()
    }
}

/// Physical shape data of one element at the quadrature points.
struct Geo {
    /// `weight * |det J|` per point.
    jw: [f64; 9],
    dx: [[f64; 9]; 9],
    dy: [[f64; 9]; 9],
}

impl Geo {
    fn new(r: &RefElement, e: &Element) -> Self {
        let (sx, sy) = (2.0 / e.hx(), 2.0 / e.hy());
        let det = 0.25 * e.hx() * e.hy();
        let mut g = Geo {
            jw: [0.0; 9],
            dx: [[0.0; 9]; 9],
            dy: [[0.0; 9]; 9],
        };
        for q in 0..9 {
            g.jw[q] = r.w[q] * det;
            for a in 0..9 {
                g.dx[q][a] = r.ds[q][a] * sx;
                g.dy[q][a] = r.dt[q][a] * sy;
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Ii(usize),
    Ib(usize),
    Skip,
}

/// A matrix whose columns are split into free (`ii`) and Dirichlet (`ib`) dofs.
#[derive(Debug, Clone)]
pub struct Split {
    pub ii: SpMat<f64>,
    pub ib: SpMat<f64>,
}

impl Split {
    pub fn scaled(&self, s: f64) -> Split {
        Split {
            ii: sparse::scale(&self.ii, s),
            ib: sparse::scale(&self.ib, s),
        }
    }

    /// Sum of matrices assembled by the same [`Assembler`].
    pub fn sum(parts: &[&Split]) -> Split {
        let ii: Vec<&SpMat<f64>> = parts.iter().map(|p| &p.ii).collect();
        let ib: Vec<&SpMat<f64>> = parts.iter().map(|p| &p.ib).collect();
        Split {
            ii: sparse::sum_same_pattern(&ii),
            ib: sparse::sum_same_pattern(&ib),
        }
    }

    /// `ii x + ib g`.
    pub fn apply(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut y = sparse::mul_vec(&self.ii, x);
        for (a, b) in y.iter_mut().zip(sparse::mul_vec(&self.ib, g)) {
            *a += b;
        }
        y
    }
}

/// Element-by-element assembly of every spatial matrix on one mesh.
#[derive(Debug, Clone)]
pub struct Assembler {
    mesh: Mesh,
    re: RefElement,
    v_ii: Pattern,
    v_ib: Pattern,
    v_slots: Vec<[Slot; 81]>,
    b_ii: Pattern,
    b_ib: Pattern,
    b_slots: Vec<[Slot; 36]>,
    pp: Pattern,
    pp_slots: Vec<[usize; 16]>,
}

impl Assembler {
    pub fn new(mesh: Mesh) -> Self {
        let (n_u, n_b, n_p) = (mesh.n_u(), mesh.n_fixed(), mesh.n_p());
        let (mut pii, mut pib, mut bii, mut bib, mut ppp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for e in &mesh.elements {
            for &rn in &e.v {
                let Dof::Free(r) = mesh.dofs[rn] else { continue };
                for &cn in &e.v {
                    match mesh.dofs[cn] {
                        Dof::Free(c) => pii.push((r, c)),
                        Dof::Fixed(c) => pib.push((r, c)),
                    }
                }
            }
            for &pk in &e.p {
                for &cn in &e.v {
                    match mesh.dofs[cn] {
                        Dof::Free(c) => bii.push((pk, c)),
                        Dof::Fixed(c) => bib.push((pk, c)),
                    }
                }
                for &pm in &e.p {
                    ppp.push((pk, pm));
                }
            }
        }
        let v_ii = Pattern::new(n_u, n_u, &pii);
        let v_ib = Pattern::new(n_u, n_b, &pib);
        let b_ii = Pattern::new(n_p, n_u, &bii);
        let b_ib = Pattern::new(n_p, n_b, &bib);
        let pp = Pattern::new(n_p, n_p, &ppp);
        let slot = |ii: &Pattern, ib: &Pattern, r: usize, cn: usize| match mesh.dofs[cn] {
            Dof::Free(c) => Slot::Ii(ii.slot(r, c).expect("pattern slot")),
            Dof::Fixed(c) => Slot::Ib(ib.slot(r, c).expect("pattern slot")),
        };
        let mut v_slots = Vec::with_capacity(mesh.elements.len());
        let mut b_slots = Vec::with_capacity(mesh.elements.len());
        let mut pp_slots = Vec::with_capacity(mesh.elements.len());
        for e in &mesh.elements {
            let mut vs = [Slot::Skip; 81];
            for a in 0..9 {
                if let Dof::Free(r) = mesh.dofs[e.v[a]] {
                    for b in 0..9 {
                        vs[9 * a + b] = slot(&v_ii, &v_ib, r, e.v[b]);
                    }
                }
            }
            let mut bs = [Slot::Skip; 36];
            let mut ps = [0; 16];
            for k in 0..4 {
                for b in 0..9 {
                    bs[9 * k + b] = slot(&b_ii, &b_ib, e.p[k], e.v[b]);
                }
                for m in 0..4 {
                    ps[4 * k + m] = pp.slot(e.p[k], e.p[m]).expect("pattern slot");
                }
            }
            v_slots.push(vs);
            b_slots.push(bs);
            pp_slots.push(ps);
        }
        Self {
            mesh,
            re: RefElement::new(),
            v_ii,
            v_ib,
            v_slots,
            b_ii,
            b_ib,
            b_slots,
            pp,
            pp_slots,
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn reference(&self) -> &RefElement {
        &self.re
    }

    /// Physical quadrature points, element-major (`9 e + q`).
    pub fn quadrature_points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(9 * self.mesh.elements.len());
        for e in &self.mesh.elements {
            for &(s, t) in &self.re.pts {
                out.push((
                    e.x0 + 0.5 * (s + 1.0) * e.hx(),
                    e.y0 + 0.5 * (t + 1.0) * e.hy(),
                ));
            }
        }
        out
    }

    fn velocity(&self, mut local: impl FnMut(usize, &Element, &Geo, &mut [[f64; 9]; 9])) -> Split {
        let mut ii = vec![0.0; self.v_ii.nnz()];
        let mut ib = vec![0.0; self.v_ib.nnz()];
        let mut k = [[0.0; 9]; 9];
        for (ei, e) in self.mesh.elements.iter().enumerate() {
            let g = Geo::new(&self.re, e);
            k.iter_mut().for_each(|r| r.fill(0.0));
            local(ei, e, &g, &mut k);
            for a in 0..9 {
                for b in 0..9 {
                    match self.v_slots[ei][9 * a + b] {
                        Slot::Ii(s) => ii[s] += k[a][b],
                        Slot::Ib(s) => ib[s] += k[a][b],
                        Slot::Skip => {}
                    }
                }
            }
        }
        Split {
            ii: self.v_ii.matrix(ii),
            ib: self.v_ib.matrix(ib),
        }
    }

    /// `∫ weight ∇φ_i · ∇φ_j`, with `weight` sampled at [`Self::quadrature_points`].
    pub fn laplacian(&self, weight: &[f64]) -> Split {
        assert_eq!(weight.len(), 9 * self.mesh.elements.len(), "weight per quadrature point");
        self.velocity(|ei, _, g, k| {
            for q in 0..9 {
                let c = g.jw[q] * weight[9 * ei + q];
                for a in 0..9 {
                    for b in 0..9 {
                        k[a][b] += c * (g.dx[q][a] * g.dx[q][b] + g.dy[q][a] * g.dy[q][b]);
                    }
                }
            }
        })
    }

    /// Consistent velocity mass matrix `∫ φ_i φ_j`.
    pub fn mass(&self) -> Split {
        let phi = &self.re.phi;
        self.velocity(|_, _, g, k| {
            for q in 0..9 {
                for a in 0..9 {
                    for b in 0..9 {
                        k[a][b] += g.jw[q] * phi[q][a] * phi[q][b];
                    }
                }
            }
        })
    }

    fn field_at(&self, e: &Element, g: &Geo, w: &[f64]) -> ([f64; 9], [f64; 9], [f64; 9]) {
        let (mut v, mut vx, mut vy) = ([0.0; 9], [0.0; 9], [0.0; 9]);
        for q in 0..9 {
            for a in 0..9 {
                let c = w[e.v[a]];
                v[q] += c * self.re.phi[q][a];
                vx[q] += c * g.dx[q][a];
                vy[q] += c * g.dy[q][a];
            }
        }
        (v, vx, vy)
    }

    /// Vector-convection matrix `∫ (w · ∇φ_j) φ_i` for a velocity given on all nodes.
    pub fn convection(&self, wx: &[f64], wy: &[f64]) -> Split {
        let n = self.mesh.nodes.len();
        assert!(wx.len() == n && wy.len() == n, "convecting field on all nodes");
        let phi = &self.re.phi;
        self.velocity(|_, e, g, k| {
            let (ux, _, _) = self.field_at(e, g, wx);
            let (uy, _, _) = self.field_at(e, g, wy);
            for q in 0..9 {
                for a in 0..9 {
                    let c = g.jw[q] * phi[q][a];
                    for b in 0..9 {
                        k[a][b] += c * (ux[q] * g.dx[q][b] + uy[q] * g.dy[q][b]);
                    }
                }
            }
        })
    }

    /// Newton derivative blocks `∫ φ_i φ_j ∂_b w_a` in the order `xx, xy, yx, yy`.
    pub fn newton(&self, wx: &[f64], wy: &[f64]) -> [Split; 4] {
        let n = self.mesh.nodes.len();
        assert!(wx.len() == n && wy.len() == n, "linearization field on all nodes");
        let phi = &self.re.phi;
        let block = |w: &[f64], deriv_y: bool| {
            self.velocity(|_, e, g, k| {
                let (_, dx, dy) = self.field_at(e, g, w);
                for q in 0..9 {
                    let d = if deriv_y { dy[q] } else { dx[q] };
                    for a in 0..9 {
                        let c = g.jw[q] * d * phi[q][a];
                        for b in 0..9 {
                            k[a][b] += c * phi[q][b];
                        }
                    }
                }
            })
        };
        [block(wx, false), block(wx, true), block(wy, false), block(wy, true)]
    }

    /// Divergence blocks `B^x, B^y` with `[B^x]_{kj} = -∫ ψ_k ∂_x φ_j`.
    pub fn divergence(&self) -> (Split, Split) {
        let psi = &self.re.psi;
        let mut out = Vec::with_capacity(2);
        for deriv_y in [false, true] {
            let mut ii = vec![0.0; self.b_ii.nnz()];
            let mut ib = vec![0.0; self.b_ib.nnz()];
            for (ei, e) in self.mesh.elements.iter().enumerate() {
                let g = Geo::new(&self.re, e);
                for kk in 0..4 {
                    for b in 0..9 {
                        let mut v = 0.0;
                        for q in 0..9 {
                            let d = if deriv_y { g.dy[q][b] } else { g.dx[q][b] };
                            v -= g.jw[q] * psi[q][kk] * d;
                        }
                        match self.b_slots[ei][9 * kk + b] {
                            Slot::Ii(s) => ii[s] += v,
                            Slot::Ib(s) => ib[s] += v,
                            Slot::Skip => {}
                        }
                    }
                }
            }
            out.push(Split {
                ii: self.b_ii.matrix(ii),
                ib: self.b_ib.matrix(ib),
            });
        }
        let by = out.pop().expect("two blocks");
        let bx = out.pop().expect("two blocks");
        (bx, by)
    }

    /// Pressure mass matrix `∫ ψ_k ψ_m`.
    pub fn pressure_mass(&self) -> SpMat<f64> {
        let psi = &self.re.psi;
        let mut vals = vec![0.0; self.pp.nnz()];
        for (ei, e) in self.mesh.elements.iter().enumerate() {
            let g = Geo::new(&self.re, e);
            for k in 0..4 {
                for m in 0..4 {
                    let v: f64 = (0..9).map(|q| g.jw[q] * psi[q][k] * psi[q][m]).sum();
                    vals[self.pp_slots[ei][4 * k + m]] += v;
                }
            }
        }
        self.pp.matrix(vals)
    }

    /// `∫ |∇w|^2` for a scalar field given on all velocity nodes.
    pub fn gradient_norm_sq(&self, w: &[f64]) -> f64 {
        assert_eq!(w.len(), self.mesh.nodes.len(), "value per velocity node");
        self.mesh
            .elements
            .iter()
            .map(|e| {
                let g = Geo::new(&self.re, e);
                let (_, wx, wy) = self.field_at(e, &g, w);
                (0..9).map(|q| g.jw[q] * (wx[q] * wx[q] + wy[q] * wy[q])).sum::<f64>()
            })
            .sum()
    }

    /// Boundary weights for the least-squares commutator on free velocity dofs.
    ///
    /// A dof in an element with edges on the Dirichlet boundary gets
    /// `|e| / (|e| + h_e |∂e ∩ Γ_D|)` (minimum over its elements, `h_e` the
    /// edge length normal to the boundary); all other dofs get 1.
    pub fn boundary_weights(&self) -> Vec<f64> {
        const EDGES: [[usize; 3]; 4] = [[0, 1, 2], [6, 7, 8], [0, 3, 6], [2, 5, 8]];
        let mut d = vec![1.0; self.mesh.n_u()];
        for e in &self.mesh.elements {
            let mut blen = 0.0;
            for (k, edge) in EDGES.iter().enumerate() {
                if edge.iter().all(|&a| self.mesh.tags[e.v[a]].is_dirichlet()) {
                    // Bottom/top edges have length hx and normal extent hy.
                    blen += if k < 2 { e.hx() * e.hy() } else { e.hy() * e.hx() };
                }
            }
            if blen == 0.0 {
                continue;
            }
            let w = e.area() / (e.area() + blen);
            for &n in &e.v {
                if let Dof::Free(i) = self.mesh.dofs[n] {
                    d[i] = f64::min(d[i], w);
                }
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{Geometry, Mesh};
    use crate::geometry::Rect;
    use crate::sparse::to_dense;

    fn strip() -> Assembler {
        Assembler::new(Mesh::build(Geometry::strip(Rect::new(0.0, 2.0, -1.0, 1.0).unwrap()), 0.5).unwrap())
    }

    fn ones(a: &Assembler) -> Vec<f64> {
        vec![1.0; 9 * a.mesh().elements.len()]
    }

    #[test]
    fn laplacian_symmetric_and_linear() {
        let a = strip();
        let l1 = to_dense(&a.laplacian(&ones(&a)).ii);
        let w3: Vec<f64> = ones(&a).iter().map(|v| 3.0 * v).collect();
        let l3 = to_dense(&a.laplacian(&w3).ii);
        for i in 0..l1.nrows() {
            for j in 0..l1.ncols() {
                assert!((l1[(i, j)] - l1[(j, i)]).abs() < 1e-13);
                assert!((l3[(i, j)] - 3.0 * l1[(i, j)]).abs() < 1e-13);
            }
        }
        assert!(l1.llt(faer::Side::Lower).is_ok());
    }

    #[test]
    fn mass_sums_to_fluid_area() {
        let a = Assembler::new(Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap());
        let r = a.reference();
        let total: f64 = a
            .mesh()
            .elements
            .iter()
            .map(|e| {
                let det = 0.25 * e.area();
                (0..9).map(|q| r.w[q] * det * r.phi[q].iter().sum::<f64>().powi(2)).sum::<f64>()
            })
            .sum();
        assert!((total - 23.9375).abs() < 1e-12);
        let pm: f64 = a.pressure_mass().val().iter().sum();
        assert!((pm - 23.9375).abs() < 1e-12);
    }

    #[test]
    fn enclosed_divergence_kills_constants() {
        let a = Assembler::new(Mesh::build(Geometry::enclosed(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap()), 0.25).unwrap());
        let (bx, by) = a.divergence();
        let (nu, nb) = (a.mesh().n_u(), a.mesh().n_fixed());
        for b in [&bx, &by] {
            let r = b.apply(&vec![1.0; nu], &vec![1.0; nb]);
            assert!(r.iter().all(|v| v.abs() < 1e-14));
        }
        // Constant pressure is in the kernel of B^T when every boundary dof is fixed.
        let np = a.mesh().n_p();
        let t = crate::sparse::transpose(&bx.ii);
        assert!(crate::sparse::mul_vec(&t, &vec![1.0; np]).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn convection_zero_and_linear() {
        let a = strip();
        let n = a.mesh().nodes.len();
        let z = a.convection(&vec![0.0; n], &vec![0.0; n]);
        assert!(crate::sparse::is_zero(&z.ii));
        let wx: Vec<f64> = a.mesh().nodes.iter().map(|p| p[0].sin() + p[1]).collect();
        let wy: Vec<f64> = a.mesh().nodes.iter().map(|p| p[0] * p[1]).collect();
        let n1 = a.convection(&wx, &wy);
        let w2x: Vec<f64> = wx.iter().map(|v| 2.0 * v).collect();
        let w2y: Vec<f64> = wy.iter().map(|v| 2.0 * v).collect();
        let n2 = a.convection(&w2x, &w2y);
        for (p, q) in n1.ii.val().iter().zip(n2.ii.val()) {
            assert!((2.0 * p - q).abs() < 1e-14);
        }
        let nw = a.newton(&wx, &wy);
        let nw2 = a.newton(&w2x, &w2y);
        for k in 0..4 {
            for (p, q) in nw[k].ii.val().iter().zip(nw2[k].ii.val()) {
                assert!((2.0 * p - q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn boundary_weights_only_near_dirichlet() {
        let a = Assembler::new(Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap());
        let d = a.boundary_weights();
        let m = a.mesh();
        let centre = m.dofs[m.nearest_node(6.0, 0.0)];
        let crate::fem::mesh::Dof::Free(c) = centre else { panic!() };
        assert_eq!(d[c], 1.0);
        let near = m.dofs[m.nearest_node(6.0, 0.875)];
        let crate::fem::mesh::Dof::Free(c) = near else { panic!() };
        assert!(d[c] < 1.0 && d[c] > 0.0);
    }
}
