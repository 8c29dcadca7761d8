//! Total-degree Legendre chaos on the uniform cube `[-1, 1]^n_nu`.
//!
//! The basis is orthonormal with respect to the uniform probability density,
//! so `G_1` (the triple product against the constant polynomial) is the
//! identity. Indices are enumerated by total degree and, within one degree,
//! in descending lexicographic order of the degree vector:
//! `(0,0), (1,0), (0,1), (2,0), (1,1), (0,2), ...`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::sparse::{self, SpMat};
use crate::Scalar;

/// Entries of assembled stochastic matrices below this magnitude are dropped.
pub const TRIPLE_PRODUCT_DROP_TOL: f64 = 1e-14;

/// Points outside the cube by more than this are rejected by [`GpcBasis::eval`].
pub const CUBE_TOL: f64 = 1e-12;

/// Degree of each univariate factor of a product polynomial.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn total_degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.0
    }

    /// Label such as `(1,0,2)`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        format!("({})", parts.join(","))
    }
}

/// Which scaling the basis polynomials carry; exported tables are tagged with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Orthonormal,
}

impl Normalization {
    pub fn tag(self) -> &'static str {
        match self {
            Normalization::Orthonormal => "orthonormal-legendre",
        }
    }
}

/// All multi-indices of length `n_nu` with total degree at most `d_max`.
pub fn enumerate_indices(n_nu: usize, d_max: usize) -> Vec<MultiIndex> {
    fn compositions(n: usize, total: usize, prefix: &mut Vec<usize>, out: &mut Vec<MultiIndex>) {
        if n == 0 {
            if total == 0 {
                out.push(MultiIndex(prefix.clone()));
            }
            return;
        }
        if n == 1 {
            prefix.push(total);
            out.push(MultiIndex(prefix.clone()));
            prefix.pop();
            return;
        }
        for first in (0..=total).rev() {
            prefix.push(first);
            compositions(n - 1, total - first, prefix, out);
            prefix.pop();
        }
    }

    let mut out = Vec::new();
    if n_nu == 0 {
        out.push(MultiIndex(Vec::new()));
        return out;
    }
    for deg in 0..=d_max {
        compositions(n_nu, deg, &mut Vec::with_capacity(n_nu), &mut out);
    }
    out
}

/// `binomial(n_nu + d_max, d_max)`.
pub fn basis_size(n_nu: usize, d_max: usize) -> usize {
    let mut c: u128 = 1;
    for k in 1..=d_max as u128 {
        c = c * (n_nu as u128 + k) / k;
    }
    c as usize
}

/// Values of the orthonormal Legendre polynomials `0..=n_max` at `x`, normalized
/// against the density `1/2` on `[-1, 1]`.
pub fn legendre_orthonormal<T: Scalar>(n_max: usize, x: T) -> Vec<T> {
    let mut p = Vec::with_capacity(n_max + 1);
    p.push(T::one());
    if n_max >= 1 {
        p.push(x);
    }
    for n in 1..n_max {
        let nf = T::lit(n as f64);
        let next = ((T::lit(2.0) * nf + T::one()) * x * p[n] - nf * p[n - 1]) / (nf + T::one());
        p.push(next);
    }
    for (n, v) in p.iter_mut().enumerate() {
        *v = *v * T::lit((2 * n + 1) as f64).sqrt();
    }
    p
}

/// Gauss–Legendre rule with `n` points on `[-1, 1]`; weights sum to 2.
pub fn gauss_legendre<T: Scalar>(n: usize) -> (Vec<T>, Vec<T>) {
    assert!(n >= 1);
    let mut nodes = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let nf = T::lit(n as f64);
    let eps = T::epsilon() * T::lit(4.0);
    for i in 0..(n + 1) / 2 {
        let mut x = T::lit((std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos());
        let mut dp = T::one();
        for _ in 0..100 {
            // Three-term recurrence for P_n and P_{n-1}.
            let (mut p0, mut p1) = (T::one(), x);
            for k in 1..n {
                let kf = T::lit(k as f64);
                let p2 = ((T::lit(2.0) * kf + T::one()) * x * p1 - kf * p0) / (kf + T::one());
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (x, T::one()) } else { (p1, p0) };
            dp = nf * (x * pn - pn1) / (x * x - T::one());
            let dx = pn / dp;
            x = x - dx;
            if dx.abs() <= eps {
                break;
            }
        }
        let w = T::lit(2.0) / ((T::one() - x * x) * dp * dp);
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = T::zero();
    }
    (nodes, weights)
}

/// Univariate triple products `<l_a l_b l_c>` for all degrees up to `d_max`,
/// indexed as `t[a][b][c]`.
fn univariate_triples<T: Scalar>(d_max: usize) -> Vec<Vec<Vec<T>>> {
    let q = (3 * d_max + 1).div_ceil(2) + 1;
    let (x, w) = gauss_legendre::<T>(q);
    let vals: Vec<Vec<T>> = x.iter().map(|&xq| legendre_orthonormal(d_max, xq)).collect();
    let half = T::lit(0.5);
    let mut t = vec![vec![vec![T::zero(); d_max + 1]; d_max + 1]; d_max + 1];
    for a in 0..=d_max {
        for b in a..=d_max {
            for c in b..=d_max {
                let v = if a == 0 {
                    // <l_0 l_b l_c> is orthonormality itself.
                    if b == c {
                        T::one()
                    } else {
                        T::zero()
                    }
                } else {
                    let mut s = T::zero();
                    for k in 0..q {
                        s = s + w[k] * vals[k][a] * vals[k][b] * vals[k][c];
                    }
                    s * half
                };
                for (i, j, k) in [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                    t[i][j][k] = v;
                }
            }
        }
    }
    t
}

/// Orthonormal total-degree Legendre basis and its stochastic matrices `G_l`.
#[derive(Clone)]
pub struct GpcBasis<T: Scalar> {
    n_nu: usize,
    d_max: usize,
    indices: Vec<MultiIndex>,
    triple_products: Vec<SpMat<T>>,
}

impl<T: Scalar> std::fmt::Debug for GpcBasis<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GpcBasis")
            .field("n_nu", &self.n_nu)
            .field("d_max", &self.d_max)
            .field("n_xi", &self.indices.len())
            .finish()
    }
}

impl<T: Scalar> GpcBasis<T> {
    pub fn new(n_nu: usize, d_max: usize) -> Self {
        let indices = enumerate_indices(n_nu, d_max);
        let triple_products = triple_product_matrices(&indices, d_max);
        Self {
            n_nu,
            d_max,
            indices,
            triple_products,
        }
    }

    pub fn n_nu(&self) -> usize {
        self.n_nu
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }

    /// Number of basis polynomials, `n_xi`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn normalization(&self) -> Normalization {
        Normalization::Orthonormal
    }

    /// Stochastic matrix `G_l` (zero-based `l`).
    pub fn g(&self, l: usize) -> &SpMat<T> {
        &self.triple_products[l]
    }

    pub fn triple_products(&self) -> &[SpMat<T>] {
        &self.triple_products
    }

    /// Position of the first-order polynomial in variable `k` (zero-based), i.e. `psi_{k+2}`.
    pub fn linear_index(&self, k: usize) -> usize {
        1 + k
    }

    /// Evaluates every basis polynomial at `xi`.
    pub fn eval(&self, xi: &[T]) -> Result<Vec<T>> {
        if xi.len() != self.n_nu {
            return Err(crate::error::mismatch("GpcBasis::eval", self.n_nu, xi.len()));
        }
        let tol = T::lit(CUBE_TOL);
        if xi.iter().any(|&x| x.abs() > T::one() + tol || x.is_nan()) {
            return Err(Error::OutsideCube {
                coords: xi.iter().map(|x| x.to_f64_lossy()).collect(),
            });
        }
        let uni: Vec<Vec<T>> = xi
            .iter()
            .map(|&x| legendre_orthonormal(self.d_max, x.max(-T::one()).min(T::one())))
            .collect();
        Ok(self
            .indices
            .iter()
            .map(|mi| {
                mi.0.iter()
                    .enumerate()
                    .fold(T::one(), |acc, (k, &d)| acc * uni[k][d])
            })
            .collect())
    }

    /// Writes all `G_l` entries as `l,i,j,value` rows (one-based indices).
    pub fn write_triple_products<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# normalization={}", self.normalization().tag())?;
        writeln!(out, "l,i,j,value")?;
        for (l, g) in self.triple_products.iter().enumerate() {
            let mut e: Vec<(usize, usize, T)> = sparse::entries(g).collect();
            e.sort_by_key(|&(i, j, _)| (i, j));
            for (i, j, v) in e {
                writeln!(out, "{},{},{},{}", l + 1, i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }
}

/// Assembles `[G_l]_{ij} = <psi_l psi_i psi_j>` from univariate triple products.
pub fn triple_product_matrices<T: Scalar>(indices: &[MultiIndex], d_max: usize) -> Vec<SpMat<T>> {
    let t = univariate_triples::<T>(d_max);
    let n = indices.len();
    let drop = T::lit(TRIPLE_PRODUCT_DROP_TOL);
    (0..n)
        .map(|l| {
            let dl = &indices[l].0;
            let mut trips = Vec::new();
            for i in 0..n {
                let di = &indices[i].0;
                for j in 0..n {
                    let dj = &indices[j].0;
                    let mut v = T::one();
                    for k in 0..dl.len() {
                        let (a, b, c) = (dl[k], di[k], dj[k]);
                        // Parity and triangle conditions of the Legendre triple product.
                        if (a + b + c) % 2 == 1 || a > b + c || b > a + c || c > a + b {
                            v = T::zero();
                            break;
                        }
                        v = v * t[a][b][c];
                    }
                    if v.abs() > drop {
                        trips.push((i, j, v));
                    }
                }
            }
            sparse::from_triplets(n, n, &trips)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_indices(5, 3).len(), 56);
        assert_eq!(basis_size(5, 3), 56);
        assert_eq!(enumerate_indices(3, 0), vec![MultiIndex(vec![0, 0, 0])]);
    }

    #[test]
    fn enumeration_order_two_variables() {
        let got: Vec<Vec<usize>> = enumerate_indices(2, 2).into_iter().map(|m| m.0).collect();
        assert_eq!(got, vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
    }

    #[test]
    fn enumeration_matches_published_positions() {
        let idx = enumerate_indices(5, 3);
        assert_eq!(idx[1].0, vec![1, 0, 0, 0, 0]);
        assert_eq!(idx[5].0, vec![0, 0, 0, 0, 1]);
        assert_eq!(idx[6].0, vec![2, 0, 0, 0, 0]);
        assert_eq!(idx[7].0, vec![1, 1, 0, 0, 0]);
        assert_eq!(idx[21].0, vec![3, 0, 0, 0, 0]);
    }

    #[test]
    fn enumeration_is_exhaustive() {
        // Brute force over the degree box.
        let (n, d) = (3, 3);
        let mut count = 0;
        for a in 0..=d {
            for b in 0..=d {
                for c in 0..=d {
                    if a + b + c <= d {
                        count += 1;
                    }
                }
            }
        }
        let idx = enumerate_indices(n, d);
        assert_eq!(idx.len(), count);
        let set: std::collections::HashSet<_> = idx.iter().cloned().collect();
        assert_eq!(set.len(), count);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre::<f64>(5);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        // x^8 integrates to 2/9 exactly with 5 points (degree <= 9).
        let s8: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(8)).sum();
        assert!((s8 - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn eval_values() {
        let b = GpcBasis::<f64>::new(1, 1);
        let v = b.eval(&[0.5]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 3f64.sqrt() * 0.5).abs() < 1e-15);

        let b = GpcBasis::<f64>::new(3, 3);
        let v = b.eval(&[0.0, 0.0, 0.0]).unwrap();
        for (mi, val) in b.indices().iter().zip(&v) {
            if mi.total_degree() % 2 == 1 {
                assert_eq!(*val, 0.0);
            }
        }
    }

    #[test]
    fn eval_rejects_outside_cube() {
        let b = GpcBasis::<f64>::new(2, 2);
        assert!(b.eval(&[1.0 + 1e-13, 0.0]).is_ok());
        assert!(matches!(b.eval(&[1.0 + 1e-9, 0.0]), Err(Error::OutsideCube { .. })));
        assert!(b.eval(&[0.0]).is_err());
    }

    #[test]
    fn univariate_triple_values() {
        let t = univariate_triples::<f64>(3);
        assert!(t[1][1][1].abs() < 1e-15);
        assert!((t[1][1][2] - 2.0 / 5f64.sqrt()).abs() < 1e-14);
        // Independent check by a 40-point rule.
        let (x, w) = gauss_legendre::<f64>(40);
        let mut s = 0.0;
        for (xq, wq) in x.iter().zip(&w) {
            let l = legendre_orthonormal(3, *xq);
            s += 0.5 * wq * l[1] * l[2] * l[3];
        }
        assert!((t[1][2][3] - s).abs() < 1e-14);
    }

    #[test]
    fn g1_is_identity_and_symmetric() {
        let b = GpcBasis::<f64>::new(3, 3);
        let g1 = sparse::to_dense(b.g(0));
        for i in 0..b.len() {
            for j in 0..b.len() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g1[(i, j)] - e).abs() < 1e-14);
            }
        }
        for g in b.triple_products() {
            let d = sparse::to_dense(g);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    assert_eq!(d[(i, j)], d[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn coo_export_is_tagged() {
        let b = GpcBasis::<f64>::new(1, 1);
        let mut buf = Vec::new();
        b.write_triple_products(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("# normalization=orthonormal-legendre\nl,i,j,value\n"));
        assert!(s.contains("2,1,2,1\n"));
    }
}
