//! Thin helpers over faer's compressed sparse column matrices.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, SymbolicSparseColMat, Triplet};
use faer::{Mat, MatMut, MatRef};

use crate::error::{Error, Result};
use crate::Scalar;

pub type SpMat<T> = SparseColMat<usize, T>;

/// Builds a CSC matrix from (row, col, value) triplets; duplicates are summed.
pub fn from_triplets<T: Scalar>(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> SpMat<T> {
    let t: Vec<Triplet<usize, usize, T>> = triplets
        .iter()
        .map(|&(r, c, v)| Triplet::new(r, c, v))
        .collect();
    SparseColMat::try_new_from_triplets(nrows, ncols, &t).expect("triplet indices in range")
}

pub fn zeros<T: Scalar>(nrows: usize, ncols: usize) -> SpMat<T> {
    from_triplets(nrows, ncols, &[])
}

pub fn identity<T: Scalar>(n: usize) -> SpMat<T> {
    let t: Vec<(usize, usize, T)> = (0..n).map(|i| (i, i, T::one())).collect();
    from_triplets(n, n, &t)
}

/// Iterates the stored entries of `a` as (row, col, value).
pub fn entries<T: Scalar>(a: &SpMat<T>) -> impl Iterator<Item = (usize, usize, T)> + '_ {
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let vals = a.val();
    (0..a.ncols()).flat_map(move |j| (col_ptr[j]..col_ptr[j + 1]).map(move |k| (row_idx[k], j, vals[k])))
}

pub fn to_dense<T: Scalar>(a: &SpMat<T>) -> Mat<T> {
    let mut d = Mat::<T>::zeros(a.nrows(), a.ncols());
    for (i, j, v) in entries(a) {
        d[(i, j)] = d[(i, j)] + v;
    }
    d
}

pub fn transpose<T: Scalar>(a: &SpMat<T>) -> SpMat<T> {
    let t: Vec<(usize, usize, T)> = entries(a).map(|(i, j, v)| (j, i, v)).collect();
    from_triplets(a.ncols(), a.nrows(), &t)
}

pub fn scale<T: Scalar>(a: &SpMat<T>, s: T) -> SpMat<T> {
    let vals: Vec<T> = a.val().iter().map(|&v| v * s).collect();
    SparseColMat::new(a.symbolic().to_owned().expect("symbolic copy"), vals)
}

/// `true` when every stored value is exactly zero.
pub fn is_zero<T: Scalar>(a: &SpMat<T>) -> bool {
    a.val().iter().all(|v| *v == T::zero())
}

pub fn max_abs<T: Scalar>(a: &SpMat<T>) -> T {
    a.val().iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

/// Converts the entries of an `f64` matrix into another scalar type.
pub fn cast<T: Scalar>(a: &SpMat<f64>) -> SpMat<T> {
    let vals: Vec<T> = a.val().iter().map(|&v| T::lit(v)).collect();
    SparseColMat::new(a.symbolic().to_owned().expect("symbolic copy"), vals)
}

/// Sum of matrices that share one sparsity pattern.
pub fn sum_same_pattern<T: Scalar>(parts: &[&SpMat<T>]) -> SpMat<T> {
    assert!(!parts.is_empty());
    let first = parts[0];
    let mut vals = first.val().to_vec();
    for p in &parts[1..] {
        assert_eq!(p.val().len(), vals.len(), "pattern mismatch");
        for (a, b) in vals.iter_mut().zip(p.val()) {
            *a = *a + *b;
        }
    }
    SparseColMat::new(first.symbolic().to_owned().expect("symbolic copy"), vals)
}

/// General sum via triplets (patterns may differ).
pub fn add<T: Scalar>(a: &SpMat<T>, b: &SpMat<T>) -> SpMat<T> {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let t: Vec<(usize, usize, T)> = entries(a).chain(entries(b)).collect();
    from_triplets(a.nrows(), a.ncols(), &t)
}

/// `y = A x` for a dense block of columns.
pub fn mul_dense<T: Scalar>(a: &SpMat<T>, x: MatRef<'_, T>) -> Mat<T> {
    a * x
}

/// Accumulates `y += alpha * A x` column-wise without temporaries.
pub fn mul_add_dense<T: Scalar>(mut y: MatMut<'_, T>, a: &SpMat<T>, x: MatRef<'_, T>, alpha: T) {
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let vals = a.val();
    for c in 0..x.ncols() {
        for j in 0..a.ncols() {
            let xj = x[(j, c)];
            if xj == T::zero() {
                continue;
            }
            let s = alpha * xj;
            for k in col_ptr[j]..col_ptr[j + 1] {
                let r = row_idx[k];
                y[(r, c)] = y[(r, c)] + vals[k] * s;
            }
        }
    }
}

/// `Y += alpha A X` with `X` and `Y` held transposed (`xt = X^T`, `yt = Y^T`).
///
/// Rows of `X` and `Y` are then contiguous, so each stored entry of `A`
/// becomes one dense axpy of length `xt.nrows()`.
pub fn mul_add_transposed<T: Scalar>(yt: &mut Mat<T>, a: &SpMat<T>, xt: &Mat<T>, alpha: T) {
    debug_assert_eq!(yt.nrows(), xt.nrows());
    debug_assert_eq!((yt.ncols(), xt.ncols()), (a.nrows(), a.ncols()));
    let col_ptr = a.symbolic().col_ptr();
    let row_idx = a.symbolic().row_idx();
    let vals = a.val();
    for j in 0..a.ncols() {
        let x = xt.col_as_slice(j);
        for k in col_ptr[j]..col_ptr[j + 1] {
            let s = alpha * vals[k];
            for (y, &xv) in yt.col_as_slice_mut(row_idx[k]).iter_mut().zip(x) {
                *y = *y + s * xv;
            }
        }
    }
}

pub fn mul_vec(a: &SpMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (i, j, v) in entries(a) {
        y[i] += v * x[j];
    }
    y
}

/// Precomputed CSC pattern with a fast path to refill values.
#[derive(Clone)]
pub struct Pattern {
    symbolic: SymbolicSparseColMat<usize>,
}

impl std::fmt::Debug for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Pattern({}x{}, nnz={})", self.nrows(), self.ncols(), self.nnz())
    }
}

impl Pattern {
    /// Builds the pattern of the union of the given (row, col) positions.
    pub fn new(nrows: usize, ncols: usize, positions: &[(usize, usize)]) -> Self {
        let t: Vec<Triplet<usize, usize, f64>> = positions.iter().map(|&(r, c)| Triplet::new(r, c, 0.0)).collect();
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(nrows, ncols, &t).expect("pattern in range");
        Self {
            symbolic: m.symbolic().to_owned().expect("symbolic copy"),
        }
    }

    pub fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    pub fn nrows(&self) -> usize {
        self.symbolic.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.symbolic.ncols()
    }

    /// Storage slot of `(row, col)`, if present.
    pub fn slot(&self, row: usize, col: usize) -> Option<usize> {
        let cp = self.symbolic.col_ptr();
        let ri = &self.symbolic.row_idx()[cp[col]..cp[col + 1]];
        ri.binary_search(&row).ok().map(|k| k + cp[col])
    }

    pub fn matrix<T: Scalar>(&self, values: Vec<T>) -> SpMat<T> {
        assert_eq!(values.len(), self.nnz());
        SparseColMat::new(self.symbolic.clone(), values)
    }
}

/// `A diag(d) A^T` for a sparse `A`.
pub fn weighted_gram(a: &SpMat<f64>, d: &[f64]) -> SpMat<f64> {
    assert_eq!(a.ncols(), d.len(), "weighted_gram: weight length");
    let (cp, ri, vals) = (a.symbolic().col_ptr(), a.symbolic().row_idx(), a.val());
    let mut t = Vec::new();
    for j in 0..a.ncols() {
        let rng = cp[j]..cp[j + 1];
        for p in rng.clone() {
            for q in rng.clone() {
                t.push((ri[p], ri[q], d[j] * vals[p] * vals[q]));
            }
        }
    }
    from_triplets(a.nrows(), a.nrows(), &t)
}

/// Sparse LU factorization of a square `f64` matrix.
pub struct SparseLu {
    lu: Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn new(a: &SpMat<f64>, block: &'static str) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::Factorization {
                block,
                reason: format!("matrix is {}x{}", a.nrows(), a.ncols()),
            });
        }
        let lu = a.sp_lu().map_err(|e| Error::Factorization {
            block,
            reason: format!("{e:?}"),
        })?;
        let this = Self { lu, n: a.nrows() };
        // faer reports structural singularity only; probe for numerical breakdown.
        let probe = this.solve(Mat::<f64>::from_fn(this.n, 1, |i, _| 1.0 + (i % 7) as f64 * 0.1).as_ref());
        if probe.col(0).iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization {
                block,
                reason: "numerically singular".into(),
            });
        }
        Ok(this)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        self.lu.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let m = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| rhs[i]);
        let x = self.lu.solve(m.as_ref());
        x.col(0).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let a = from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0)]);
        let d = to_dense(&a);
        assert_eq!(d[(0, 0)], 3.0);
        assert_eq!(d[(1, 0)], 1.0);
    }

    #[test]
    fn pattern_slots_and_refill() {
        let p = Pattern::new(3, 3, &[(0, 0), (2, 0), (1, 1), (2, 2), (0, 2)]);
        assert_eq!(p.nnz(), 5);
        let mut vals = vec![0.0; p.nnz()];
        vals[p.slot(2, 0).unwrap()] = 4.0;
        assert!(p.slot(1, 0).is_none());
        let m = p.matrix(vals);
        assert_eq!(to_dense(&m)[(2, 0)], 4.0);
    }

    #[test]
    fn mul_add_matches_product() {
        let a = from_triplets(3, 2, &[(0, 0, 1.0), (2, 1, -2.0), (1, 0, 0.5)]);
        let x = Mat::<f64>::from_fn(2, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let mut y = Mat::<f64>::zeros(3, 2);
        mul_add_dense(y.as_mut(), &a, x.as_ref(), 2.0);
        let z = mul_dense(&a, x.as_ref());
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(y[(i, j)], 2.0 * z[(i, j)]);
            }
        }
    }

    #[test]
    fn lu_rejects_singular() {
        let a = from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]);
        assert!(SparseLu::new(&a, "test").is_err());
    }
}
