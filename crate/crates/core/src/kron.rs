//! Stochastic Galerkin operators `sum_l G_l ⊗ F_l` acting on low-rank vectors.

use faer::Mat;

use crate::error::{mismatch, Error, Result};
use crate::lowrank::{Dims, Factored, Field, LowRankVec};
use crate::sparse::{self, SpMat};
use crate::Scalar;

/// Which linearization an operator represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorMode {
    Stokes,
    Oseen,
    Jacobian,
}

impl OperatorMode {
    pub fn name(self) -> &'static str {
        match self {
            OperatorMode::Stokes => "stokes",
            OperatorMode::Oseen => "oseen",
            OperatorMode::Jacobian => "jacobian",
        }
    }
}

/// Something that maps low-rank vectors to low-rank vectors.
pub trait LinearOperator<T: Scalar> {
    fn dims(&self) -> Dims;

    /// Applies the operator and truncates the result at `eps`.
    fn apply(&self, x: &LowRankVec<T>, eps: T) -> Result<LowRankVec<T>>;
}

/// Divergence blocks and their transposes.
#[derive(Debug, Clone)]
pub struct Divergence<T: Scalar> {
    pub bx: SpMat<T>,
    pub by: SpMat<T>,
    pub bxt: SpMat<T>,
    pub byt: SpMat<T>,
}

impl<T: Scalar> Divergence<T> {
    pub fn new(bx: SpMat<T>, by: SpMat<T>) -> Self {
        Self {
            bxt: sparse::transpose(&bx),
            byt: sparse::transpose(&by),
            bx,
            by,
        }
    }
}

/// One Kronecker term: `G ⊗ [Fxx Fxy (Bx^T); Fyx Fyy (By^T); (Bx) (By) 0]`.
#[derive(Debug, Clone)]
pub struct Term<T: Scalar> {
    pub g: SpMat<T>,
    /// `Fxx, Fxy, Fyx, Fyy`; `None` is a zero block.
    pub blocks: [Option<SpMat<T>>; 4],
    /// Whether this term carries the divergence blocks.
    pub divergence: bool,
}

impl<T: Scalar> Term<T> {
    fn is_zero(&self) -> bool {
        !self.divergence && self.blocks.iter().all(|b| b.as_ref().map_or(true, sparse::is_zero))
    }
}

#[derive(Debug, Clone)]
pub struct KronOperator<T: Scalar> {
    dims: Dims,
    mode: OperatorMode,
    terms: Vec<Term<T>>,
    /// Dense copies of the `G` factors.
    dense_g: Vec<Mat<T>>,
    div: Divergence<T>,
}

/// Above this fraction of `n_xi`, products are formed on the dense matricization.
const DENSE_RANK_FRACTION: f64 = 0.5;

impl<T: Scalar> KronOperator<T> {
    /// Builds the operator, dropping terms whose spatial part is zero.
    pub fn new(dims: Dims, mode: OperatorMode, terms: Vec<Term<T>>, div: Divergence<T>) -> Result<Self> {
        for (k, t) in terms.iter().enumerate() {
            if t.g.nrows() != dims.n_xi || t.g.ncols() != dims.n_xi {
                return Err(mismatch("KronOperator term G", dims.n_xi, t.g.nrows()));
            }
            for b in t.blocks.iter().flatten() {
                if b.nrows() != dims.n_u || b.ncols() != dims.n_u {
                    return Err(Error::DimensionMismatch {
                        context: "KronOperator term F",
                        expected: format!("{0}x{0}", dims.n_u),
                        found: format!("{}x{} (term {})", b.nrows(), b.ncols(), k + 1),
                    });
                }
            }
        }
        if div.bx.nrows() != dims.n_p || div.bx.ncols() != dims.n_u {
            return Err(mismatch("KronOperator divergence", format!("{}x{}", dims.n_p, dims.n_u), format!("{}x{}", div.bx.nrows(), div.bx.ncols())));
        }
        let terms: Vec<Term<T>> = terms.into_iter().filter(|t| !t.is_zero()).collect();
        let dense_g = terms.iter().map(|t| sparse::to_dense(&t.g)).collect();
        Ok(Self {
            dims,
            mode,
            terms,
            dense_g,
            div,
        })
    }

    pub fn mode(&self) -> OperatorMode {
        self.mode
    }

    pub fn terms(&self) -> &[Term<T>] {
        &self.terms
    }

    pub fn divergence(&self) -> &Divergence<T> {
        &self.div
    }

    /// Exact product without truncation, keeping every concatenated factor.
    ///
    /// Only meant for tests of the rank bound; [`LinearOperator::apply`] is the
    /// production path.
    pub fn apply_concatenated(&self, x: &LowRankVec<T>) -> Result<LowRankVec<T>> {
        self.check(x)?;
        let d = self.dims;
        let mut parts: [Vec<(Mat<T>, Mat<T>)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for t in &self.terms {
            for (out, inp, m) in self.couplings(t) {
                let b = x.block(inp);
                if b.rank() == 0 {
                    continue;
                }
                parts[out.index()].push((sparse::mul_dense(m, b.v.as_ref()), sparse::mul_dense(&t.g, b.w.as_ref())));
            }
        }
        let blocks = Field::ALL.map(|f| {
            let p: Vec<Factored<T>> = parts[f.index()]
                .drain(..)
                .map(|(v, w)| Factored { v, w })
                .collect();
            let refs: Vec<(T, &Factored<T>)> = p.iter().map(|f| (T::one(), f)).collect();
            Factored::concat(&refs, d.spatial(f), d.n_xi)
        });
        LowRankVec::from_blocks(d, blocks)
    }

    fn check(&self, x: &LowRankVec<T>) -> Result<()> {
        if x.dims() != self.dims {
            return Err(mismatch("KronOperator::apply", format!("{:?}", self.dims), format!("{:?}", x.dims())));
        }
        Ok(())
    }

    /// `(output block, input block, spatial matrix)` triples of one term.
    fn couplings<'a>(&'a self, t: &'a Term<T>) -> Vec<(Field, Field, &'a SpMat<T>)> {
        let mut c = Vec::with_capacity(8);
        let names = [(Field::Ux, Field::Ux), (Field::Ux, Field::Uy), (Field::Uy, Field::Ux), (Field::Uy, Field::Uy)];
        for (b, &(o, i)) in t.blocks.iter().zip(&names) {
            if let Some(m) = b {
                c.push((o, i, m));
            }
        }
        if t.divergence {
            c.push((Field::Ux, Field::P, &self.div.bxt));
            c.push((Field::Uy, Field::P, &self.div.byt));
            c.push((Field::P, Field::Ux, &self.div.bx));
            c.push((Field::P, Field::Uy, &self.div.by));
        }
        c
    }
}

impl<T: Scalar> LinearOperator<T> for KronOperator<T> {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn apply(&self, x: &LowRankVec<T>, eps: T) -> Result<LowRankVec<T>> {
        self.check(x)?;
        let d = self.dims;
        let threshold = (DENSE_RANK_FRACTION * d.n_xi as f64).ceil() as usize;
        // Spatial factors are kept transposed so sparse products run row-wise.
        // Inputs of high rank are expanded once; low-rank ones stay factored.
        let dense_in: [Option<Mat<T>>; 3] = Field::ALL.map(|f| {
            let b = x.block(f);
            (b.rank() >= threshold.max(1)).then(|| &b.w * b.v.transpose())
        });
        let vt: [Mat<T>; 3] = Field::ALL.map(|f| x.block(f).v.transpose().to_owned());
        let mut acc: [Option<Mat<T>>; 3] = [None, None, None];
        let mut factored: [Vec<Factored<T>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (t, gd) in self.terms.iter().zip(&self.dense_g) {
            // G U^T per dense input, shared by every block reading that input.
            let mut gu: [Option<Mat<T>>; 3] = [None, None, None];
            for (out, inp, m) in self.couplings(t) {
                let b = x.block(inp);
                if b.rank() == 0 {
                    continue;
                }
                match &dense_in[inp.index()] {
                    Some(ut) => {
                        let xt = gu[inp.index()].get_or_insert_with(|| gd * ut);
                        let a = acc[out.index()].get_or_insert_with(|| Mat::zeros(d.n_xi, d.spatial(out)));
                        sparse::mul_add_transposed(a, m, xt, T::one());
                    }
                    None => {
                        let mut yt = Mat::zeros(b.rank(), d.spatial(out));
                        sparse::mul_add_transposed(&mut yt, m, &vt[inp.index()], T::one());
                        factored[out.index()].push(Factored {
                            v: yt.transpose().to_owned(),
                            w: sparse::mul_dense(&t.g, b.w.as_ref()),
                        });
                    }
                }
            }
        }
        let blocks = Field::ALL.map(|f| {
            let k = f.index();
            let parts = std::mem::take(&mut factored[k]);
            let rank: usize = parts.iter().map(Factored::rank).sum();
            let (n, m) = (d.spatial(f), d.n_xi);
            if acc[k].is_some() || rank > m {
                let mut a = match acc[k].take() {
                    Some(at) => at.transpose().to_owned(),
                    None => Mat::zeros(n, m),
                };
                for p in &parts {
                    a += &p.v * p.w.transpose();
                }
                Factored::from_dense(a.as_ref()).truncate(eps).0
            } else {
                let refs: Vec<(T, &Factored<T>)> = parts.iter().map(|p| (T::one(), p)).collect();
                Factored::concat(&refs, n, m).truncate(eps).0
            }
        });
        LowRankVec::from_blocks(d, blocks)
    }
}

/// Identity operator, mostly for tests.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub Dims);

impl<T: Scalar> LinearOperator<T> for Identity {
    fn dims(&self) -> Dims {
        self.0
    }

    fn apply(&self, x: &LowRankVec<T>, eps: T) -> Result<LowRankVec<T>> {
        Ok(x.truncated(eps))
    }
}

/// Explicit sparse Kronecker assembly in the mode-major vector ordering.
///
/// Independent of the factored product; used for direct solves and oracles.
pub fn assemble_sparse<T: Scalar>(op: &KronOperator<T>, limit_nnz: usize) -> Result<SpMat<T>> {
    let d = op.dims;
    let off = |f: Field| d.offset(f);
    let mut trips: Vec<(usize, usize, T)> = Vec::new();
    for t in &op.terms {
        let g: Vec<(usize, usize, T)> = sparse::entries(&t.g).collect();
        for (out, inp, m) in op.couplings(t) {
            let est = trips.len() + g.len() * m.val().len();
            if est > limit_nnz {
                return Err(Error::TooLarge {
                    entries: est,
                    limit: limit_nnz,
                });
            }
            for &(gi, gk, gv) in &g {
                for (r, c, v) in sparse::entries(m) {
                    trips.push((gi * d.stride() + off(out) + r, gk * d.stride() + off(inp) + c, gv * v));
                }
            }
        }
    }
    Ok(sparse::from_triplets(d.total(), d.total(), &trips))
}
