//! Structured quadrilateral meshes of a channel with an optional square obstacle.

use crate::error::{Error, Result};
use crate::geometry::Rect;
use super::assembly::{lin_1d, quad_1d};

const EPS: f64 = 1e-10;

/// Boundary treatment of the rectangle's sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowKind {
    /// Poiseuille inflow at `x0`, no-slip walls, natural outflow at `x1`.
    Channel,
    /// No-slip on every side.
    Enclosed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub domain: Rect,
    pub obstacle: Option<Rect>,
    pub kind: FlowKind,
}

impl Geometry {
    /// The `[0,12] x [-1,1]` channel with the square obstacle centred at `(2,0)`.
    pub fn channel_with_obstacle() -> Self {
        Self {
            domain: Rect::channel(),
            obstacle: Some(Rect::obstacle()),
            kind: FlowKind::Channel,
        }
    }

    /// An open channel without obstacle.
    pub fn strip(domain: Rect) -> Self {
        Self {
            domain,
            obstacle: None,
            kind: FlowKind::Channel,
        }
    }

    pub fn enclosed(domain: Rect) -> Self {
        Self {
            domain,
            obstacle: None,
            kind: FlowKind::Enclosed,
        }
    }

    pub fn fluid_area(&self) -> f64 {
        self.domain.area() - self.obstacle.map_or(0.0, |o| o.area())
    }

    fn validate(&self) -> Result<()> {
        if let Some(o) = self.obstacle {
            let d = self.domain;
            if !(o.x0 > d.x0 && o.x1 < d.x1 && o.y0 > d.y0 && o.y1 < d.y1) {
                return Err(Error::InvalidParameter {
                    name: "obstacle",
                    reason: "obstacle must lie strictly inside the domain".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    Inflow,
    Wall,
    Obstacle,
    Outflow,
}

impl NodeTag {
    pub fn is_dirichlet(self) -> bool {
        matches!(self, NodeTag::Inflow | NodeTag::Wall | NodeTag::Obstacle)
    }
}

/// Velocity degree of freedom classification of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dof {
    Free(usize),
    Fixed(usize),
}

/// Axis-aligned biquadratic/bilinear element.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    /// Q2 nodes, local index `a + 3 b` for the point `(x0 + a hx/2, y0 + b hy/2)`.
    pub v: [usize; 9],
    /// Q1 nodes, local index `a + 2 b` for the corner `(x0 + a hx, y0 + b hy)`.
    pub p: [usize; 4],
}

impl Element {
    pub fn hx(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn hy(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.hx() * self.hy()
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub geometry: Geometry,
    pub h: f64,
    /// Element edge coordinates.
    pub xlines: Vec<f64>,
    pub ylines: Vec<f64>,
    /// Q2 node coordinates, numbered x fastest.
    pub nodes: Vec<[f64; 2]>,
    pub tags: Vec<NodeTag>,
    /// Q1 node coordinates, numbered x fastest.
    pub pnodes: Vec<[f64; 2]>,
    pub elements: Vec<Element>,
    pub dofs: Vec<Dof>,
    /// Node id of each free velocity dof.
    pub free: Vec<usize>,
    /// Node id of each Dirichlet velocity dof.
    pub fixed: Vec<usize>,
}

/// Splits `[a, b]` at the breakpoints into segments of at most `h`.
fn graded_lines(breaks: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let n = ((w[1] - w[0]) / h - EPS).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(if k == n { w[1] } else { w[0] + (w[1] - w[0]) * k as f64 / n as f64 });
        }
    }
    out
}

fn half_grid(lines: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * lines.len() - 1);
    for w in lines.windows(2) {
        out.push(w[0]);
        out.push(0.5 * (w[0] + w[1]));
    }
    out.push(*lines.last().expect("nonempty"));
    out
}

impl Mesh {
    /// Builds the mesh with target element size `h`.
    ///
    /// Each interval between consecutive breakpoints (domain and obstacle
    /// edges) is split into `ceil(len / h)` equal cells, so obstacle edges are
    /// always element edges and the grid is uniform whenever `h` divides the
    /// segment lengths.
    pub fn build(geometry: Geometry, h: f64) -> Result<Self> {
        geometry.validate()?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::MeshAlignment { h });
        }
        let d = geometry.domain;
        let (mut bx, mut by) = (vec![d.x0, d.x1], vec![d.y0, d.y1]);
        if let Some(o) = geometry.obstacle {
            bx = vec![d.x0, o.x0, o.x1, d.x1];
            by = vec![d.y0, o.y0, o.y1, d.y1];
        }
        let xlines = graded_lines(&bx, h);
        let ylines = graded_lines(&by, h);
        let (nx, ny) = (xlines.len() - 1, ylines.len() - 1);
        if nx * ny > 4_000_000 {
            return Err(Error::MeshAlignment { h });
        }
        let inside = |x: f64, y: f64| geometry.obstacle.is_some_and(|o| x > o.x0 + EPS && x < o.x1 - EPS && y > o.y0 + EPS && y < o.y1 - EPS);

        let hxs = half_grid(&xlines);
        let hys = half_grid(&ylines);
        let (nhx, nhy) = (hxs.len(), hys.len());
        let mut vid = vec![usize::MAX; nhx * nhy];
        let mut nodes = Vec::new();
        for (j, &y) in hys.iter().enumerate() {
            for (i, &x) in hxs.iter().enumerate() {
                if !inside(x, y) {
                    vid[j * nhx + i] = nodes.len();
                    nodes.push([x, y]);
                }
            }
        }
        let mut pid = vec![usize::MAX; (nx + 1) * (ny + 1)];
        let mut pnodes = Vec::new();
        for (j, &y) in ylines.iter().enumerate() {
            for (i, &x) in xlines.iter().enumerate() {
                if !inside(x, y) {
                    pid[j * (nx + 1) + i] = pnodes.len();
                    pnodes.push([x, y]);
                }
            }
        }
        let mut elements = Vec::new();
        for ey in 0..ny {
            for ex in 0..nx {
                let (x0, x1, y0, y1) = (xlines[ex], xlines[ex + 1], ylines[ey], ylines[ey + 1]);
                if inside(0.5 * (x0 + x1), 0.5 * (y0 + y1)) {
                    continue;
                }
                let mut v = [0; 9];
                for b in 0..3 {
                    for a in 0..3 {
                        v[a + 3 * b] = vid[(2 * ey + b) * nhx + 2 * ex + a];
                    }
                }
                let mut p = [0; 4];
                for b in 0..2 {
                    for a in 0..2 {
                        p[a + 2 * b] = pid[(ey + b) * (nx + 1) + ex + a];
                    }
                }
                debug_assert!(v.iter().chain(&p).all(|&k| k != usize::MAX));
                elements.push(Element { x0, x1, y0, y1, v, p });
            }
        }

        let tags: Vec<NodeTag> = nodes.iter().map(|&[x, y]| tag_of(&geometry, x, y)).collect();
        let mut dofs = Vec::with_capacity(nodes.len());
        let (mut free, mut fixed) = (Vec::new(), Vec::new());
        for (n, t) in tags.iter().enumerate() {
            if t.is_dirichlet() {
                dofs.push(Dof::Fixed(fixed.len()));
                fixed.push(n);
            } else {
                dofs.push(Dof::Free(free.len()));
                free.push(n);
            }
        }
        Ok(Self {
            geometry,
            h,
            xlines,
            ylines,
            nodes,
            tags,
            pnodes,
            elements,
            dofs,
            free,
            fixed,
        })
    }

    /// Velocity unknowns per component.
    pub fn n_u(&self) -> usize {
        self.free.len()
    }

    pub fn n_p(&self) -> usize {
        self.pnodes.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.len()
    }

    /// Dirichlet velocity values `(u_x, u_y)` at a node.
    pub fn dirichlet_value(&self, node: usize) -> (f64, f64) {
        match self.tags[node] {
            NodeTag::Inflow => (inflow_profile(&self.geometry.domain, self.nodes[node][1]), 0.0),
            _ => (0.0, 0.0),
        }
    }

    /// Dirichlet data on the fixed dofs, per component.
    pub fn lift(&self) -> (Vec<f64>, Vec<f64>) {
        self.fixed.iter().map(|&n| self.dirichlet_value(n)).unzip()
    }

    /// Expands interior values to all nodes using `boundary` on fixed dofs.
    pub fn expand(&self, interior: &[f64], boundary: Option<&[f64]>) -> Vec<f64> {
        self.dofs
            .iter()
            .map(|d| match *d {
                Dof::Free(i) => interior[i],
                Dof::Fixed(j) => boundary.map_or(0.0, |b| b[j]),
            })
            .collect()
    }

    /// Nearest velocity node to `(x, y)`.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        nearest(&self.nodes, x, y)
    }

    pub fn nearest_pressure_node(&self, x: f64, y: f64) -> usize {
        nearest(&self.pnodes, x, y)
    }

    /// Element containing `(x, y)` and the reference coordinates in `[-1, 1]^2`.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, f64, f64)> {
        self.elements.iter().enumerate().find_map(|(k, e)| {
            let inside = x >= e.x0 - EPS && x <= e.x1 + EPS && y >= e.y0 - EPS && y <= e.y1 + EPS;
            inside.then(|| (k, 2.0 * (x - e.x0) / e.hx() - 1.0, 2.0 * (y - e.y0) / e.hy() - 1.0))
        })
    }

    /// Q2 nodes and shape function values at `(x, y)`.
    pub fn velocity_weights(&self, x: f64, y: f64) -> Option<[(usize, f64); 9]> {
        let (k, s, t) = self.locate(x, y)?;
        let ((ps, _), (pt, _)) = (quad_1d(s), quad_1d(t));
        let e = &self.elements[k];
        Some(std::array::from_fn(|i| (e.v[i], ps[i % 3] * pt[i / 3])))
    }

    /// Q1 nodes and shape function values at `(x, y)`.
    pub fn pressure_weights(&self, x: f64, y: f64) -> Option<[(usize, f64); 4]> {
        let (k, s, t) = self.locate(x, y)?;
        let (ps, pt) = (lin_1d(s), lin_1d(t));
        let e = &self.elements[k];
        Some(std::array::from_fn(|i| (e.p[i], ps[i % 2] * pt[i / 2])))
    }

    /// Biquadratic interpolant of nodal velocity values at `(x, y)`.
    pub fn eval_velocity(&self, values: &[f64], x: f64, y: f64) -> Option<f64> {
        Some(self.velocity_weights(x, y)?.iter().map(|&(n, w)| w * values[n]).sum())
    }

    /// Bilinear interpolant of nodal pressure values at `(x, y)`.
    pub fn eval_pressure(&self, values: &[f64], x: f64, y: f64) -> Option<f64> {
        Some(self.pressure_weights(x, y)?.iter().map(|&(n, w)| w * values[n]).sum())
    }

    /// Node id of the velocity node mirrored about the channel centreline.
    pub fn mirror_node(&self, node: usize) -> Option<usize> {
        let [x, y] = self.nodes[node];
        let yc = 0.5 * (self.geometry.domain.y0 + self.geometry.domain.y1);
        let m = self.nearest_node(x, 2.0 * yc - y);
        let [mx, my] = self.nodes[m];
        ((mx - x).abs() < EPS && (my + y - 2.0 * yc).abs() < EPS).then_some(m)
    }
}

fn nearest(points: &[[f64; 2]], x: f64, y: f64) -> usize {
    let d = |p: &[f64; 2]| (p[0] - x).powi(2) + (p[1] - y).powi(2);
    (0..points.len())
        .min_by(|&a, &b| d(&points[a]).total_cmp(&d(&points[b])))
        .expect("mesh has nodes")
}

/// Unit-maximum Poiseuille profile across the channel.
pub fn inflow_profile(domain: &Rect, y: f64) -> f64 {
    let yc = 0.5 * (domain.y0 + domain.y1);
    let half = 0.5 * domain.height();
    1.0 - ((y - yc) / half).powi(2)
}

fn tag_of(g: &Geometry, x: f64, y: f64) -> NodeTag {
    let d = g.domain;
    let on = |a: f64, b: f64| (a - b).abs() < EPS;
    if on(y, d.y0) || on(y, d.y1) {
        return NodeTag::Wall;
    }
    match g.kind {
        FlowKind::Enclosed if on(x, d.x0) || on(x, d.x1) => return NodeTag::Wall,
        FlowKind::Channel if on(x, d.x0) => return NodeTag::Inflow,
        _ => {}
    }
    if let Some(o) = g.obstacle {
        if x > o.x0 - EPS && x < o.x1 + EPS && y > o.y0 - EPS && y < o.y1 + EPS {
            return NodeTag::Obstacle;
        }
    }
    if on(x, d.x1) {
        return NodeTag::Outflow;
    }
    NodeTag::Interior
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fine_mesh_is_uniform() {
        let m = Mesh::build(Geometry::channel_with_obstacle(), 0.125).unwrap();
        assert_eq!(m.elements.len(), 96 * 16 - 4);
        assert_eq!(m.nodes.len(), 193 * 33 - 9);
        assert_eq!(m.n_p(), 97 * 17 - 1);
        assert!(m.elements.iter().all(|e| (e.hx() - 0.125).abs() < 1e-12 && (e.hy() - 0.125).abs() < 1e-12));
        // Same scale as the reference discretization (6320 velocity / 1640 pressure dofs).
        assert!((6000..6700).contains(&m.nodes.len()));
    }

    #[test]
    fn coarse_mesh_is_graded_around_obstacle() {
        let m = Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap();
        assert_eq!(m.elements.len(), 49 * 9 - 1);
        assert!(m.elements.iter().all(|e| e.hx() <= 0.25 + 1e-12 && e.hy() <= 0.25 + 1e-12));
        let area: f64 = m.elements.iter().map(Element::area).sum();
        assert!((area - (24.0 - 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn boundary_tags_and_lift() {
        let m = Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap();
        let centre_inflow = m.nearest_node(0.0, 0.0);
        assert_eq!(m.tags[centre_inflow], NodeTag::Inflow);
        assert_eq!(m.dirichlet_value(centre_inflow), (1.0, 0.0));
        let wall = m.nearest_node(5.0, 1.0);
        assert_eq!(m.tags[wall], NodeTag::Wall);
        assert_eq!(m.dirichlet_value(wall), (0.0, 0.0));
        assert_eq!(m.tags[m.nearest_node(1.875, 0.0)], NodeTag::Obstacle);
        assert_eq!(m.tags[m.nearest_node(12.0, 0.5)], NodeTag::Outflow);
        assert!(!m.tags[m.nearest_node(12.0, 0.5)].is_dirichlet());
        assert_eq!(m.n_u() + m.n_fixed(), m.nodes.len());
    }

    #[test]
    fn mirror_nodes_exist() {
        let m = Mesh::build(Geometry::channel_with_obstacle(), 0.25).unwrap();
        for n in 0..m.nodes.len() {
            let mm = m.mirror_node(n).expect("mesh symmetric about y = 0");
            assert_eq!(m.mirror_node(mm), Some(n));
        }
    }

    #[test]
    fn rejects_bad_h() {
        assert!(Mesh::build(Geometry::channel_with_obstacle(), 0.0).is_err());
        assert!(Mesh::build(Geometry::channel_with_obstacle(), f64::NAN).is_err());
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let m = Mesh::build(Geometry::channel_with_obstacle(), 0.5).unwrap();
        let f = |x: f64, y: f64| 1.0 + x * y - 0.3 * x * x + y * y;
        let g = |x: f64, y: f64| 2.0 - x + 0.5 * y + x * y;
        let fv: Vec<f64> = m.nodes.iter().map(|p| f(p[0], p[1])).collect();
        let gv: Vec<f64> = m.pnodes.iter().map(|p| g(p[0], p[1])).collect();
        for &(x, y) in &[(0.1, -0.9), (3.6436, 0.0), (7.77, 0.31), (12.0, 1.0)] {
            assert!((m.eval_velocity(&fv, x, y).unwrap() - f(x, y)).abs() < 1e-12);
            assert!((m.eval_pressure(&gv, x, y).unwrap() - g(x, y)).abs() < 1e-12);
        }
        assert!(m.locate(2.0, 0.0).is_none());
        assert!(m.locate(12.5, 0.0).is_none());
    }
}
