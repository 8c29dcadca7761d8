//! Block low-rank representation of stochastic Galerkin coefficient vectors.
//!
//! A coefficient vector is split into the x-velocity, y-velocity and pressure
//! blocks. Each block is the matricized coefficient array (spatial dofs by gPC
//! index) held in factored form `U = V W^T`.

use std::io::Write;

use faer::{Mat, MatRef};

use crate::error::{mismatch, Error, Result};
use crate::Scalar;

/// Upper bound on the number of entries [`LowRankVec::densify`] will allocate.
pub const DENSIFY_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Ux,
    Uy,
    P,
}

impl Field {
    pub const ALL: [Field; 3] = [Field::Ux, Field::Uy, Field::P];

    pub fn index(self) -> usize {
        match self {
            Field::Ux => 0,
            Field::Uy => 1,
            Field::P => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::Ux => "ux",
            Field::Uy => "uy",
            Field::P => "p",
        }
    }
}

/// Sizes of the three blocks: `n_u` velocity dofs per component, `n_p`
/// pressure dofs, `n_xi` gPC polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_u: usize,
    pub n_p: usize,
    pub n_xi: usize,
}

impl Dims {
    pub fn new(n_u: usize, n_p: usize, n_xi: usize) -> Self {
        Self { n_u, n_p, n_xi }
    }

    pub fn spatial(&self, f: Field) -> usize {
        match f {
            Field::Ux | Field::Uy => self.n_u,
            Field::P => self.n_p,
        }
    }

    /// Length of one gPC coefficient `[u^x_i; u^y_i; p_i]`.
    pub fn stride(&self) -> usize {
        2 * self.n_u + self.n_p
    }

    pub fn total(&self) -> usize {
        self.stride() * self.n_xi
    }

    /// Offset of `field` inside one gPC coefficient.
    pub fn offset(&self, f: Field) -> usize {
        match f {
            Field::Ux => 0,
            Field::Uy => self.n_u,
            Field::P => 2 * self.n_u,
        }
    }
}

/// A matrix `U = V W^T` kept as its two factors.
#[derive(Debug, Clone)]
pub struct Factored<T: Scalar> {
    pub v: Mat<T>,
    pub w: Mat<T>,
}

impl<T: Scalar> Factored<T> {
    pub fn zero(n: usize, m: usize) -> Self {
        Self {
            v: Mat::zeros(n, 0),
            w: Mat::zeros(m, 0),
        }
    }

    pub fn new(v: Mat<T>, w: Mat<T>) -> Result<Self> {
        if v.ncols() != w.ncols() {
            return Err(mismatch("Factored::new (rank)", v.ncols(), w.ncols()));
        }
        Ok(Self { v, w })
    }

    /// Exact factorization `U = U I`.
    pub fn from_dense(u: MatRef<'_, T>) -> Self {
        Self {
            v: u.to_owned(),
            w: Mat::identity(u.ncols(), u.ncols()),
        }
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.v.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.w.nrows()
    }

    pub fn dense(&self) -> Mat<T> {
        if self.rank() == 0 {
            return Mat::zeros(self.nrows(), self.ncols());
        }
        &self.v * self.w.transpose()
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            v: Mat::from_fn(self.v.nrows(), self.v.ncols(), |i, j| self.v[(i, j)] * alpha),
            w: self.w.clone(),
        }
    }

    /// `trace((V_a W_a^T)^T V_b W_b^T)` evaluated on the factors.
    pub fn dot(&self, other: &Self) -> T {
        if self.rank() == 0 || other.rank() == 0 {
            return T::zero();
        }
        let gv = self.v.transpose() * &other.v;
        let gw = self.w.transpose() * &other.w;
        let mut s = T::zero();
        for j in 0..gv.ncols() {
            for i in 0..gv.nrows() {
                s = s + gv[(i, j)] * gw[(i, j)];
            }
        }
        s
    }

    /// Frobenius norm `‖V R_w^T‖_F` after a QR of `W`.
    ///
    /// Unlike `sqrt(dot(self, self))` this does not lose half the digits when
    /// the factors nearly cancel.
    pub fn norm(&self) -> T {
        if self.rank() == 0 {
            return T::zero();
        }
        let rw = self.w.qr().thin_R().to_owned();
        let vp = &self.v * rw.transpose();
        vp.col_iter()
            .flat_map(|c| c.iter().copied().collect::<Vec<T>>())
            .fold(T::zero(), |a, x| a + x * x)
            .sqrt()
    }

    /// Column-wise concatenation of several scaled factorizations.
    pub fn concat(parts: &[(T, &Factored<T>)], n: usize, m: usize) -> Self {
        let r: usize = parts.iter().map(|(_, f)| f.rank()).sum();
        let mut v = Mat::<T>::zeros(n, r);
        let mut w = Mat::<T>::zeros(m, r);
        let mut c = 0;
        for (alpha, f) in parts {
            for k in 0..f.rank() {
                for i in 0..n {
                    v[(i, c)] = f.v[(i, k)] * *alpha;
                }
                for i in 0..m {
                    w[(i, c)] = f.w[(i, k)];
                }
                c += 1;
            }
        }
        Self { v, w }
    }

    /// Truncation by thin QR of both factors and an SVD of the small core.
    ///
    /// The rank kept is the smallest `r` whose discarded singular tail obeys
    /// `sqrt(sum_{i>r} d_i^2) <= eps * sqrt(sum_i d_i^2)`. Singular values are
    /// folded into the left factor.
    pub fn truncate(&self, eps: T) -> (Self, TruncationStats<T>) {
        let (n, m, r_in) = (self.nrows(), self.ncols(), self.rank());
        let empty = |total: T| {
            (
                Self::zero(n, m),
                TruncationStats::new(r_in, 0, total, total, eps),
            )
        };
        if r_in == 0 || n == 0 || m == 0 {
            return empty(T::zero());
        }
        let (qv, x, s, y, qw) = match svd_of_product(self.v.as_ref(), self.w.as_ref()) {
            Some(parts) => parts,
            None => return empty(T::zero()),
        };
        let total = s.iter().fold(T::zero(), |a, &d| a + d * d).sqrt();
        if total == T::zero() {
            return empty(T::zero());
        }
        // tail[k] = norm of singular values k..end
        let mut tail = vec![T::zero(); s.len() + 1];
        for k in (0..s.len()).rev() {
            tail[k] = (tail[k + 1] * tail[k + 1] + s[k] * s[k]).sqrt();
        }
        let bound = eps * total;
        let keep = (0..=s.len()).find(|&k| tail[k] <= bound).unwrap_or(s.len());
        let v = Mat::from_fn(x.nrows(), keep, |i, j| x[(i, j)] * s[j]);
        let v = &qv * &v;
        let w = &qw * y.get(.., 0..keep);
        (
            Self { v, w },
            TruncationStats::new(r_in, keep, tail[keep], total, eps),
        )
    }

    /// Singular values of `V W^T`, nonincreasing.
    pub fn singular_values(&self) -> Vec<T> {
        match svd_of_product(self.v.as_ref(), self.w.as_ref()) {
            Some((_, _, s, _, _)) => s,
            None => Vec::new(),
        }
    }
}

type ProductSvd<T> = (Mat<T>, Mat<T>, Vec<T>, Mat<T>, Mat<T>);

/// `V W^T = Qv X diag(s) Y^T Qw^T` with orthonormal `Qv, Qw, X, Y`.
fn svd_of_product<T: Scalar>(v: MatRef<'_, T>, w: MatRef<'_, T>) -> Option<ProductSvd<T>> {
    // Compress against the parametric side first: its row count bounds the rank.
    let qr_w = w.qr();
    let qw = qr_w.compute_thin_Q();
    let rw = qr_w.thin_R();
    let vp = v * rw.transpose();
    let qr_v = vp.qr();
    let qv = qr_v.compute_thin_Q();
    let core = qr_v.thin_R().to_owned();
    let svd = core.thin_svd().ok()?;
    let s: Vec<T> = svd.S().column_vector().iter().copied().collect();
    Some((qv, svd.U().to_owned(), s, svd.V().to_owned(), qw))
}

/// Outcome of truncating one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationStats<T: Scalar> {
    pub input_rank: usize,
    pub output_rank: usize,
    /// Frobenius norm of the discarded part.
    pub discarded: T,
    /// Frobenius norm before truncation.
    pub total: T,
    pub tolerance: T,
}

impl<T: Scalar> TruncationStats<T> {
    fn new(input_rank: usize, output_rank: usize, discarded: T, total: T, tolerance: T) -> Self {
        assert!(
            discarded <= tolerance * total || output_rank == 0 && total == T::zero(),
            "truncation bound violated: discarded {discarded} > {tolerance} * {total}"
        );
        Self {
            input_rank,
            output_rank,
            discarded,
            total,
            tolerance,
        }
    }
}

/// Three-block low-rank coefficient vector.
#[derive(Debug, Clone)]
pub struct LowRankVec<T: Scalar> {
    dims: Dims,
    blocks: [Factored<T>; 3],
}

impl<T: Scalar> LowRankVec<T> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            blocks: [
                Factored::zero(dims.n_u, dims.n_xi),
                Factored::zero(dims.n_u, dims.n_xi),
                Factored::zero(dims.n_p, dims.n_xi),
            ],
        }
    }

    pub fn from_blocks(dims: Dims, blocks: [Factored<T>; 3]) -> Result<Self> {
        for f in Field::ALL {
            let b = &blocks[f.index()];
            if b.nrows() != dims.spatial(f) || b.ncols() != dims.n_xi {
                return Err(mismatch(
                    "LowRankVec::from_blocks",
                    format!("{}x{}", dims.spatial(f), dims.n_xi),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
        }
        Ok(Self { dims, blocks })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn block(&self, f: Field) -> &Factored<T> {
        &self.blocks[f.index()]
    }

    pub fn blocks(&self) -> &[Factored<T>; 3] {
        &self.blocks
    }

    pub fn into_blocks(self) -> [Factored<T>; 3] {
        self.blocks
    }

    pub fn ranks(&self) -> [usize; 3] {
        [self.blocks[0].rank(), self.blocks[1].rank(), self.blocks[2].rank()]
    }

    pub fn max_rank(&self) -> usize {
        self.ranks().into_iter().max().unwrap_or(0)
    }

    fn check(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(mismatch(context, format!("{:?}", self.dims), format!("{:?}", other.dims)));
        }
        Ok(())
    }

    /// Exact sum by factor concatenation.
    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::linear_combination(&[(T::one(), self), (T::one(), other)])
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::linear_combination(&[(T::one(), self), (-T::one(), other)])
    }

    pub fn scaled(&self, alpha: T) -> Self {
        Self {
            dims: self.dims,
            blocks: [
                self.blocks[0].scaled(alpha),
                self.blocks[1].scaled(alpha),
                self.blocks[2].scaled(alpha),
            ],
        }
    }

    /// `sum_k c_k x_k` without truncation; the rank is the sum of the input ranks.
    pub fn linear_combination(terms: &[(T, &Self)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or(Error::InvalidParameter {
                name: "terms",
                reason: "empty linear combination".into(),
            })?
            .1;
        for (_, t) in terms {
            first.check(t, "LowRankVec::linear_combination")?;
        }
        let dims = first.dims;
        let blocks = Field::ALL.map(|f| {
            let parts: Vec<(T, &Factored<T>)> = terms.iter().map(|(c, x)| (*c, x.block(f))).collect();
            Factored::concat(&parts, dims.spatial(f), dims.n_xi)
        });
        Ok(Self { dims, blocks })
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check(other, "LowRankVec::dot")?;
        Ok((0..3).fold(T::zero(), |s, k| s + self.blocks[k].dot(&other.blocks[k])))
    }

    /// Euclidean norm of the full coefficient vector.
    pub fn norm(&self) -> T {
        let s = (0..3).fold(T::zero(), |s, k| {
            let n = self.blocks[k].norm();
            s + n * n
        });
        s.sqrt()
    }

    /// Blockwise truncation with a common relative tolerance.
    pub fn truncate(&self, eps: T) -> (Self, [TruncationStats<T>; 3]) {
        let [(a, sa), (b, sb), (c, sc)] = [0, 1, 2].map(|k| self.blocks[k].truncate(eps));
        (
            Self {
                dims: self.dims,
                blocks: [a, b, c],
            },
            [sa, sb, sc],
        )
    }

    pub fn truncated(&self, eps: T) -> Self {
        self.truncate(eps).0
    }

    fn guard(&self) -> Result<()> {
        let entries = self.dims.total();
        if entries > DENSIFY_LIMIT {
            return Err(Error::TooLarge {
                entries,
                limit: DENSIFY_LIMIT,
            });
        }
        Ok(())
    }

    /// Matricized blocks `U^x, U^y, P`.
    pub fn densify(&self) -> Result<[Mat<T>; 3]> {
        self.guard()?;
        Ok([self.blocks[0].dense(), self.blocks[1].dense(), self.blocks[2].dense()])
    }

    /// Full coefficient vector `[u_1; ...; u_{n_xi}]` with `u_i = [u^x_i; u^y_i; p_i]`.
    pub fn to_vector(&self) -> Result<Vec<T>> {
        let mats = self.densify()?;
        let d = self.dims;
        let mut out = vec![T::zero(); d.total()];
        for i in 0..d.n_xi {
            for f in Field::ALL {
                let m = &mats[f.index()];
                let off = i * d.stride() + d.offset(f);
                for j in 0..d.spatial(f) {
                    out[off + j] = m[(j, i)];
                }
            }
        }
        Ok(out)
    }

    pub fn from_dense_blocks(dims: Dims, mats: [Mat<T>; 3], eps: T) -> Result<Self> {
        let blocks = mats.map(|m| Factored::from_dense(m.as_ref()));
        Ok(Self::from_blocks(dims, blocks)?.truncated(eps))
    }

    /// Matricizes a full coefficient vector and compresses it at `eps`.
    pub fn from_full(x: &[T], dims: Dims, eps: T) -> Result<Self> {
        if x.len() != dims.total() {
            return Err(mismatch("LowRankVec::from_full", dims.total(), x.len()));
        }
        let mats = Field::ALL.map(|f| {
            Mat::from_fn(dims.spatial(f), dims.n_xi, |j, i| x[i * dims.stride() + dims.offset(f) + j])
        });
        Self::from_dense_blocks(dims, mats, eps)
    }

    /// Writes `V` or `W` of one block as a wide CSV (`row,c1,...,cr`).
    pub fn write_factor_csv<W: Write>(&self, f: Field, left: bool, mut out: W) -> std::io::Result<()> {
        let b = self.block(f);
        let m = if left { &b.v } else { &b.w };
        let header: Vec<String> = (1..=m.ncols()).map(|c| format!("c{c}")).collect();
        writeln!(out, "row,{}", header.join(","))?;
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
            writeln!(out, "{},{}", i + 1, row.join(","))?;
        }
        Ok(())
    }
}
