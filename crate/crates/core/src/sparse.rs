//! Symmetric sparse matrices and their LDLᵀ factorization.
//!
//! Matrices are stored in full (both triangles) CSC form; the factorization
//! uses a reverse Cuthill–McKee ordering and exposes solves, the
//! log-determinant and Gaussian sampling with covariance `A^{-1}`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use sprs::{CsMat, PermOwned, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};

/// Accumulates symmetric entries; off-diagonal pushes are mirrored.
#[derive(Debug)]
pub struct SymmetricBuilder {
    dim: usize,
    tri: TriMat<f64>,
}

impl SymmetricBuilder {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tri: TriMat::new((dim, dim)),
        }
    }

    /// Adds `v` at `(i, j)` and, when `i != j`, at `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.tri.add_triplet(i, j, v);
        if i != j {
            self.tri.add_triplet(j, i, v);
        }
    }

    /// Adds a dense symmetric block at the given global indices. Only the
    /// upper triangle is read, so the result is exactly symmetric.
    pub fn add_block(&mut self, idx: &[usize], block: &DMatrix<f64>) {
        for (a, &i) in idx.iter().enumerate() {
            self.add(i, i, block[(a, a)]);
            for (b, &j) in idx.iter().enumerate().skip(a + 1) {
                let v = block[(a, b)];
                // repeated index (a loop edge): both off-diagonal entries land here
                if i == j {
                    self.add(i, i, 2.0 * v);
                } else {
                    self.add(i, j, v);
                }
            }
        }
    }

    pub fn build(self) -> SparseSymmetric {
        SparseSymmetric {
            dim: self.dim,
            mat: self.tri.to_csc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymmetric {
    dim: usize,
    mat: CsMat<f64>,
}

impl SparseSymmetric {
    /// Wraps a square CSC/CSR matrix, checking symmetry to a relative tolerance
    /// and then symmetrising exactly.
    pub fn from_csmat(mat: CsMat<f64>) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::Dimension(format!(
                "matrix is {}x{}, expected square",
                mat.rows(),
                mat.cols()
            )));
        }
        let mat = mat.to_csc();
        let scale = mat.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (v, (i, j)) in mat.iter() {
            let w = mat.get(j, i).copied().unwrap_or(0.0);
            if (v - w).abs() > 1e-12 * scale.max(1.0) {
                return Err(Error::Dimension(format!(
                    "matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
        // exact symmetry: the fill-reducing ordering asserts it bitwise
        let sym = (&mat + &mat.transpose_view().to_csc()).map(|v| 0.5 * v);
        Ok(Self {
            dim: sym.rows(),
            mat: sym,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let mut tri = TriMat::new((m.nrows(), m.ncols()));
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, j)] != 0.0 {
                    tri.add_triplet(i, j, m[(i, j)]);
                }
            }
        }
        Self::from_csmat(tri.to_csc())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn matrix(&self) -> &CsMat<f64> {
        &self.mat
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat.get(i, j).copied().unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (v, (i, j)) in self.mat.iter() {
            m[(i, j)] += *v;
        }
        m
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            mat: self.mat.map(|v| v * c),
        }
    }

    /// `self + other`, both of the same dimension.
    pub fn add(&self, other: &SparseSymmetric) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.dim, self.dim, other.dim, other.dim
            )));
        }
        Ok(Self {
            dim: self.dim,
            mat: &self.mat + &other.mat,
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        for (v, (i, j)) in self.mat.iter() {
            y[i] += v * x[j];
        }
        y
    }

    /// Principal submatrix on the given (sorted or unsorted) index list.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.dim];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut tri = TriMat::new((idx.len(), idx.len()));
        for (v, (i, j)) in self.mat.iter() {
            if pos[i] != usize::MAX && pos[j] != usize::MAX {
                tri.add_triplet(pos[i], pos[j], *v);
            }
        }
        Self {
            dim: idx.len(),
            mat: tri.to_csc(),
        }
    }

    /// Dense block `rows x cols` extracted from the matrix.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut pos = vec![usize::MAX; self.dim];
        for (k, &j) in cols.iter().enumerate() {
            pos[j] = k;
        }
        let mut rpos = vec![usize::MAX; self.dim];
        for (k, &i) in rows.iter().enumerate() {
            rpos[i] = k;
        }
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (v, (i, j)) in self.mat.iter() {
            if rpos[i] != usize::MAX && pos[j] != usize::MAX {
                m[(rpos[i], pos[j])] += *v;
            }
        }
        m
    }

    pub fn factor(&self) -> Result<Factor> {
        Factor::new(self)
    }

    /// Matrix Market coordinate export (lower triangle, 1-based).
    pub fn to_matrix_market(&self) -> String {
        let mut entries: Vec<(usize, usize, f64)> = self
            .mat
            .iter()
            .filter(|(_, (i, j))| i >= j)
            .map(|(v, (i, j))| (i, j, *v))
            .collect();
        entries.sort_by_key(|&(i, j, _)| (j, i));
        let mut out = String::from("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(out, "{} {} {}", self.dim, self.dim, entries.len());
        for (i, j, v) in entries {
            let _ = writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v);
        }
        out
    }
}

/// LDLᵀ factorization of a positive definite [`SparseSymmetric`].
///
/// Systems of dimension below two are factorized densely (the sparse
/// backend needs at least two unknowns).
pub struct Factor {
    inner: FactorInner,
    dim: usize,
}

#[allow(clippy::large_enum_variant)]
enum FactorInner {
    Sparse {
        ldl: LdlNumeric<f64, usize>,
        perm: PermOwned,
    },
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl std::fmt::Debug for Factor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factor").field("dim", &self.dim).finish()
    }
}

impl Factor {
    pub fn new(a: &SparseSymmetric) -> Result<Self> {
        let dim = a.dim;
        if dim < 2 {
            return Ok(Self {
                inner: FactorInner::Dense(dense_cholesky(&a.to_dense())?),
                dim,
            });
        }
        let perm = Ldl::new()
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .perm(a.mat.view());
        let ldl = LdlNumeric::new_perm(
            a.mat.view(),
            perm.clone(),
            sprs::SymmetryCheck::DontCheckSymmetry,
        )
        .map_err(|e| match e {
            sprs::errors::LinalgError::SingularMatrix(info) => Error::NotPositiveDefinite {
                index: info.index,
                pivot: 0.0,
            },
            other => Error::Dimension(other.to_string()),
        })?;
        if let Some((index, &pivot)) = ldl
            .d()
            .iter()
            .enumerate()
            .find(|(_, d)| !(d.is_finite() && **d > 0.0))
        {
            return Err(Error::NotPositiveDefinite { index, pivot });
        }
        Ok(Self {
            inner: FactorInner::Sparse { ldl, perm },
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn log_det(&self) -> f64 {
        match &self.inner {
            FactorInner::Sparse { ldl, .. } => ldl.d().iter().map(|d| d.ln()).sum(),
            FactorInner::Dense(c) => chol_log_det(c),
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "rhs length");
        match &self.inner {
            FactorInner::Sparse { ldl, .. } => ldl.solve(b.to_vec()),
            FactorInner::Dense(c) => c.solve(&DVector::from_column_slice(b)).as_slice().to_vec(),
        }
    }

    pub fn solve_dvec(&self, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(self.solve(b.as_slice()))
    }

    /// Solves column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(b.nrows(), b.ncols());
        for j in 0..b.ncols() {
            let col: Vec<f64> = b.column(j).iter().copied().collect();
            x.set_column(j, &DVector::from_vec(self.solve(&col)));
        }
        x
    }

    /// Dense inverse; intended for small systems and tests.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim, self.dim))
    }

    /// Maps standard normals `z` to a draw with covariance `A^{-1}`.
    pub fn transform_normals(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.dim, "noise length");
        match &self.inner {
            FactorInner::Sparse { ldl, perm } => {
                let mut w: Vec<f64> = z
                    .iter()
                    .zip(ldl.d())
                    .map(|(zi, d)| zi / d.sqrt())
                    .collect();
                sprs_ldl::ldl_ltsolve(&ldl.l(), &mut w);
                &perm.inv() * w
            }
            FactorInner::Dense(c) => {
                let mut w = DVector::from_column_slice(z);
                c.l_dirty()
                    .lower_triangle()
                    .transpose()
                    .solve_upper_triangular_mut(&mut w);
                w.as_slice().to_vec()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim).map(|_| rng.sample(StandardNormal)).collect();
        self.transform_normals(&z)
    }
}

/// Dense Cholesky log-determinant, erroring when not positive definite.
pub(crate) fn dense_cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    nalgebra::Cholesky::new(m.clone()).ok_or_else(|| {
        let index = (0..m.nrows()).find(|&i| m[(i, i)] <= 0.0).unwrap_or(0);
        Error::NotPositiveDefinite {
            index,
            pivot: m[(index, index)],
        }
    })
}

pub(crate) fn chol_log_det(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}
