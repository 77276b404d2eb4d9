//! Gaussians under hard linear equality constraints `A u = b`.
//!
//! Constraint rows are grouped into blocks with disjoint column supports
//! (one block per vertex for Kirchhoff conditions). Each block gets its own
//! orthogonal change of basis, so `T` is orthogonal, as sparse as the
//! blocks, and `A Tᵀ = [Â, 0]` with `Â` block diagonal. In the new basis the
//! constrained coordinates are fixed to `b* = Â⁻¹ b` and everything else is
//! an unconstrained sparse Gaussian computation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngExt};
use rand_distr::StandardNormal;
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::sparse::{chol_log_det, dense_cholesky, Factor, SparseSymmetric, SymmetricBuilder};

/// A sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
struct ConstraintGroup {
    rows: Vec<usize>,
    /// `A_g V1ᵀ`, square and invertible.
    a_hat: DMatrix<f64>,
}

/// Blockwise orthogonal change of basis for a constraint matrix.
#[derive(Debug, Clone)]
pub struct ChangeOfBasis {
    m: usize,
    k: usize,
    /// Rows are the new coordinates; the first `k` are constrained.
    t: CsMat<f64>,
    groups: Vec<ConstraintGroup>,
}

impl ChangeOfBasis {
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn n_constrained(&self) -> usize {
        self.k
    }

    /// `T` in CSR form.
    pub fn t(&self) -> &CsMat<f64> {
        &self.t
    }

    /// Values of the constrained coordinates, `b* = Â⁻¹ b`.
    pub fn constrained_values(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.k);
        for g in &self.groups {
            let bg = DVector::from_iterator(g.rows.len(), g.rows.iter().map(|&r| b[r]));
            let x = g
                .a_hat
                .clone()
                .lu()
                .solve(&bg)
                .ok_or(Error::RankDeficient {
                    rows: g.rows.len(),
                    rank: 0,
                })?;
            out.extend(x.iter());
        }
        Ok(out)
    }

    /// `T u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        csr_mul_vec(&self.t, u)
    }

    /// `Tᵀ v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (val, (i, j)) in self.t.iter() {
            out[j] += val * v[i];
        }
        out
    }
}

fn csr_mul_vec(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.rows()];
    for (v, (i, j)) in m.iter() {
        y[i] += v * x[j];
    }
    y
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Builds the change of basis for the `k x m` constraint matrix given by rows.
pub fn change_of_basis(m: usize, rows: &[SparseRow]) -> Result<ChangeOfBasis> {
    for row in rows {
        if let Some(&(c, _)) = row.iter().find(|(c, _)| *c >= m) {
            return Err(Error::Dimension(format!(
                "constraint column {c} out of range for dimension {m}"
            )));
        }
    }
    // group rows sharing any column
    let mut parent: Vec<usize> = (0..rows.len()).collect();
    let mut owner = vec![usize::MAX; m];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            if v == 0.0 {
                continue;
            }
            if owner[c] == usize::MAX {
                owner[c] = r;
            } else {
                let (a, b) = (find(&mut parent, owner[c]), find(&mut parent, r));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut group_of_root: Vec<usize> = vec![usize::MAX; rows.len()];
    let mut group_rows: Vec<Vec<usize>> = Vec::new();
    for r in 0..rows.len() {
        let root = find(&mut parent, r);
        if group_of_root[root] == usize::MAX {
            group_of_root[root] = group_rows.len();
            group_rows.push(Vec::new());
        }
        group_rows[group_of_root[root]].push(r);
    }

    let mut tri = TriMat::new((m, m));
    let mut used = vec![false; m];
    let mut complement_rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut groups = Vec::with_capacity(group_rows.len());
    let mut next = 0;
    for grows in group_rows {
        let mut cols: Vec<usize> = grows
            .iter()
            .flat_map(|&r| rows[r].iter().filter(|(_, v)| *v != 0.0).map(|&(c, _)| c))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        let kg = grows.len();
        let s = cols.len();
        let mut ag: DMatrix<f64> = DMatrix::zeros(kg, s);
        for (a, &r) in grows.iter().enumerate() {
            for &(c, v) in &rows[r] {
                if let Ok(pos) = cols.binary_search(&c) {
                    ag[(a, pos)] += v;
                }
            }
        }
        if kg > s {
            return Err(Error::RankDeficient { rows: kg, rank: s });
        }
        let qr = ag.transpose().qr();
        let r = qr.r();
        let scale = ag.amax().max(f64::MIN_POSITIVE);
        let rank = (0..kg).filter(|&i| r[(i, i)].abs() > RANK_TOL * scale).count();
        if rank < kg {
            return Err(Error::RankDeficient { rows: kg, rank });
        }
        let q = qr.q(); // s x kg, orthonormal columns
        let a_hat = &ag * &q;
        for a in 0..kg {
            for (p, &c) in cols.iter().enumerate() {
                if q[(p, a)] != 0.0 {
                    tri.add_triplet(next, c, q[(p, a)]);
                }
            }
            next += 1;
        }
        // orthonormal complement of the row space within the block
        if s > kg {
            let proj = DMatrix::identity(s, s) - &q * q.transpose();
            let eig = SymmetricEigen::new(proj);
            let mut found = 0;
            for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam > 0.5 {
                    let v = eig.eigenvectors.column(idx);
                    complement_rows.push(
                        cols.iter()
                            .enumerate()
                            .filter(|(p, _)| v[*p] != 0.0)
                            .map(|(p, &c)| (c, v[p]))
                            .collect(),
                    );
                    found += 1;
                }
            }
            if found != s - kg {
                return Err(Error::RankDeficient { rows: kg, rank });
            }
        }
        for &c in &cols {
            used[c] = true;
        }
        groups.push(ConstraintGroup { rows: grows, a_hat });
    }
    let k = next;
    for row in complement_rows {
        for (c, v) in row {
            tri.add_triplet(next, c, v);
        }
        next += 1;
    }
    for (c, &u) in used.iter().enumerate() {
        if !u {
            tri.add_triplet(next, c, 1.0);
            next += 1;
        }
    }
    debug_assert_eq!(next, m);
    Ok(ChangeOfBasis {
        m,
        k,
        t: tri.to_csr(),
        groups,
    })
}

/// Linear constraints `A u = b` together with their change of basis.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    rows: Vec<SparseRow>,
    b: Vec<f64>,
    basis: ChangeOfBasis,
    b_star: Vec<f64>,
}

impl ConstraintSystem {
    pub fn new(m: usize, rows: Vec<SparseRow>, b: Vec<f64>) -> Result<Self> {
        if rows.len() != b.len() {
            return Err(Error::Dimension(format!(
                "{} constraint rows but {} right-hand sides",
                rows.len(),
                b.len()
            )));
        }
        let basis = change_of_basis(m, &rows)?;
        let b_star = basis.constrained_values(&b)?;
        Ok(Self {
            rows,
            b,
            basis,
            b_star,
        })
    }

    /// No constraints on `m` coordinates.
    pub fn none(m: usize) -> Self {
        Self::new(m, Vec::new(), Vec::new()).expect("empty constraint set is valid")
    }

    pub fn dim(&self) -> usize {
        self.basis.m
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn basis(&self) -> &ChangeOfBasis {
        &self.basis
    }

    pub fn b_star(&self) -> &[f64] {
        &self.b_star
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.dim());
        for (i, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                a[(i, c)] += v;
            }
        }
        a
    }

    /// `max |A u - b|`.
    pub fn residual(&self, u: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| (row.iter().map(|&(c, v)| v * u[c]).sum::<f64>() - bi).abs())
            .fold(0.0, f64::max)
    }
}

/// Block-diagonal positive definite covariance with cached Cholesky factors.
#[derive(Debug, Clone)]
pub struct BlockDiagonal {
    blocks: Vec<DMatrix<f64>>,
    chol: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    offsets: Vec<usize>,
}

impl BlockDiagonal {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        offsets.push(0);
        let mut chol = Vec::with_capacity(blocks.len());
        for b in &blocks {
            if b.nrows() != b.ncols() {
                return Err(Error::Dimension("noise block is not square".into()));
            }
            chol.push(dense_cholesky(b)?);
            offsets.push(offsets.last().unwrap() + b.nrows());
        }
        Ok(Self {
            blocks,
            chol,
            offsets,
        })
    }

    /// `sigma^2 I` as `n` scalar blocks.
    pub fn iid(n: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![DMatrix::from_element(1, 1, sigma * sigma); n])
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn log_det(&self) -> f64 {
        self.chol.iter().map(chol_log_det).sum()
    }

    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(y.len());
        for (i, c) in self.chol.iter().enumerate() {
            let seg = DVector::from_column_slice(&y[self.offsets[i]..self.offsets[i + 1]]);
            out.extend(c.solve(&seg).iter());
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            let o = self.offsets[i];
            m.view_mut((o, o), (b.nrows(), b.nrows())).copy_from(b);
        }
        m
    }

    /// `Bᵀ Σ⁻¹ B` restricted to columns `>= col_start`, shifted to start at 0.
    fn weighted_gram(&self, b: &CsMat<f64>, col_start: usize, dim: usize) -> SparseSymmetric {
        let mut builder = SymmetricBuilder::new(dim);
        for (i, c) in self.chol.iter().enumerate() {
            let (r0, r1) = (self.offsets[i], self.offsets[i + 1]);
            let mut cols: Vec<usize> = (r0..r1)
                .flat_map(|r| b.outer_view(r).into_iter().flat_map(|v| v.indices().to_vec()))
                .filter(|&c| c >= col_start)
                .collect();
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                continue;
            }
            let mut bi = DMatrix::zeros(r1 - r0, cols.len());
            for r in r0..r1 {
                if let Some(row) = b.outer_view(r) {
                    for (j, &v) in row.iter() {
                        if let Ok(p) = cols.binary_search(&j) {
                            bi[(r - r0, p)] += v;
                        }
                    }
                }
            }
            let w = c.solve(&bi);
            let g = bi.transpose() * w;
            let idx: Vec<usize> = cols.iter().map(|c| c - col_start).collect();
            builder.add_block(&idx, &g);
        }
        builder.build()
    }
}

/// Prior `N(mean, precision⁻¹)` on `u`, observations `y = B u + e` with
/// `e ~ N(0, noise)`, and hard constraints `A u = b`.
#[derive(Debug, Clone)]
pub struct ConstrainedModel {
    pub mean: Vec<f64>,
    pub precision: SparseSymmetric,
    /// `n x m`, CSR.
    pub obs: CsMat<f64>,
    pub noise: BlockDiagonal,
    pub constraints: ConstraintSystem,
}

struct Rotated {
    k: usize,
    q_uu: SparseSymmetric,
    /// `Q*_{UC} (b* - mu*_C)`
    qu_c_shift: Vec<f64>,
    mu_u: Vec<f64>,
    b_star_obs: CsMat<f64>,
}

impl ConstrainedModel {
    pub fn new(
        mean: Vec<f64>,
        precision: SparseSymmetric,
        obs: CsMat<f64>,
        noise: BlockDiagonal,
        constraints: ConstraintSystem,
    ) -> Result<Self> {
        let m = precision.dim();
        if mean.len() != m || obs.cols() != m || constraints.dim() != m {
            return Err(Error::Dimension(format!(
                "prior dimension {m}, mean {}, observation columns {}, constraint columns {}",
                mean.len(),
                obs.cols(),
                constraints.dim()
            )));
        }
        if obs.rows() != noise.dim() {
            return Err(Error::Dimension(format!(
                "{} observation rows but noise of dimension {}",
                obs.rows(),
                noise.dim()
            )));
        }
        Ok(Self {
            mean,
            precision,
            obs: obs.to_csr(),
            noise,
            constraints,
        })
    }

    pub fn dim(&self) -> usize {
        self.precision.dim()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.rows()
    }

    fn rotate(&self) -> Result<Rotated> {
        let basis = self.constraints.basis();
        let k = basis.k;
        let m = self.dim();
        let t = basis.t();
        let tt: CsMat<f64> = t.transpose_view().to_csr();
        let q = self.precision.matrix().to_csr();
        let q_star: CsMat<f64> = &(t * &q) * &tt;
        let mu_star = basis.apply(&self.mean);
        let shift: Vec<f64> = self
            .constraints
            .b_star()
            .iter()
            .zip(&mu_star[..k])
            .map(|(b, mu)| b - mu)
            .collect();
        let mut qu_c_shift = vec![0.0; m - k];
        let mut tri = TriMat::new((m - k, m - k));
        for (v, (i, j)) in q_star.iter() {
            if i >= k {
                if j >= k {
                    tri.add_triplet(i - k, j - k, *v);
                } else {
                    qu_c_shift[i - k] += v * shift[j];
                }
            }
        }
        let q_uu = SparseSymmetric::from_csmat(tri.to_csc()).or_else(|_| {
            // restore exact symmetry lost in the triple product
            let d = {
                let mut tri = TriMat::new((m - k, m - k));
                for (v, (i, j)) in q_star.iter() {
                    if i >= k && j >= k {
                        tri.add_triplet(i - k, j - k, 0.5 * v);
                        tri.add_triplet(j - k, i - k, 0.5 * v);
                    }
                }
                tri.to_csc()
            };
            SparseSymmetric::from_csmat(d)
        })?;
        let b_star_obs: CsMat<f64> = &self.obs * &tt;
        Ok(Rotated {
            k,
            q_uu,
            qu_c_shift,
            mu_u: mu_star[k..].to_vec(),
            b_star_obs,
        })
    }
}

/// Everything the likelihood and the posterior share.
struct Conditioned {
    k: usize,
    q_uu_factor: Factor,
    q_hat: SparseSymmetric,
    q_hat_factor: Factor,
    mu_tilde: Vec<f64>,
    mu_hat: Vec<f64>,
    y_resid: Vec<f64>,
    q_uu: SparseSymmetric,
}

fn condition(model: &ConstrainedModel, y: &[f64]) -> Result<Conditioned> {
    if y.len() != model.n_obs() {
        return Err(Error::Dimension(format!(
            "{} observations for {} observation rows",
            y.len(),
            model.n_obs()
        )));
    }
    let rot = model.rotate()?;
    let k = rot.k;
    let b_star = model.constraints.b_star();
    let q_uu_factor = rot.q_uu.factor()?;
    let corr = q_uu_factor.solve(&rot.qu_c_shift);
    let mu_tilde: Vec<f64> = rot.mu_u.iter().zip(&corr).map(|(a, c)| a - c).collect();

    // y' = y - B*_C b*
    let mut y_resid = y.to_vec();
    for (v, (i, j)) in rot.b_star_obs.iter() {
        if j < k {
            y_resid[i] -= v * b_star[j];
        }
    }
    let mu = model.dim() - k;
    let gram = model.noise.weighted_gram(&rot.b_star_obs, k, mu);
    let q_hat = rot.q_uu.add(&gram)?;
    let q_hat_factor = q_hat.factor()?;
    let w = model.noise.solve(&y_resid);
    let mut rhs = rot.q_uu.mul_vec(&mu_tilde);
    for (v, (i, j)) in rot.b_star_obs.iter() {
        if j >= k {
            rhs[j - k] += v * w[i];
        }
    }
    let mu_hat = q_hat_factor.solve(&rhs);
    Ok(Conditioned {
        k,
        q_uu_factor,
        q_hat,
        q_hat_factor,
        mu_tilde,
        mu_hat,
        y_resid,
        q_uu: rot.q_uu,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-density of `y` given `A u = b`.
///
/// The normalizing constant is `-(n/2) log(2 pi)`, which makes the result a
/// proper density in `y`.
pub fn constrained_loglik(model: &ConstrainedModel, y: &[f64]) -> Result<f64> {
    let c = condition(model, y)?;
    let n = y.len() as f64;
    let w = model.noise.solve(&c.y_resid);
    let quad = dot(&c.y_resid, &w) + dot(&c.mu_tilde, &c.q_uu.mul_vec(&c.mu_tilde))
        - dot(&c.mu_hat, &c.q_hat.mul_vec(&c.mu_hat));
    Ok(0.5 * c.q_uu_factor.log_det()
        - 0.5 * c.q_hat_factor.log_det()
        - 0.5 * model.noise.log_det()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * quad)
}

/// Distribution of `u` given `A u = b` and `Y = y`.
pub struct ConstrainedPosterior {
    basis: ChangeOfBasis,
    b_star: Vec<f64>,
    mu_hat: Vec<f64>,
    q_hat: SparseSymmetric,
    factor: Factor,
    mean: Vec<f64>,
}

impl std::fmt::Debug for ConstrainedPosterior {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstrainedPosterior")
            .field("dim", &self.mean.len())
            .field("constrained", &self.b_star.len())
            .finish()
    }
}

pub fn constrained_posterior(model: &ConstrainedModel, y: &[f64]) -> Result<ConstrainedPosterior> {
    let c = condition(model, y)?;
    let basis = model.constraints.basis().clone();
    let b_star = model.constraints.b_star().to_vec();
    let mut full = b_star.clone();
    full.extend(&c.mu_hat);
    let mean = basis.apply_transpose(&full);
    debug_assert_eq!(c.k, b_star.len());
    Ok(ConstrainedPosterior {
        basis,
        b_star,
        mu_hat: c.mu_hat,
        q_hat: c.q_hat,
        factor: c.q_hat_factor,
        mean,
    })
}

impl ConstrainedPosterior {
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Precision of the unconstrained coordinates `T_U u`.
    pub fn precision_u(&self) -> &SparseSymmetric {
        &self.q_hat
    }

    fn project_u(&self, w: &[(usize, f64)]) -> Vec<f64> {
        // T_U w for a sparse vector w
        let k = self.b_star.len();
        let mut dense = vec![0.0; self.basis.m];
        for &(c, v) in w {
            dense[c] += v;
        }
        self.basis.apply(&dense)[k..].to_vec()
    }

    /// `Cov(wᵀ u, vᵀ u)` for sparse weight vectors.
    pub fn covariance(&self, w: &[(usize, f64)], v: &[(usize, f64)]) -> f64 {
        let tw = self.project_u(w);
        let tv = self.project_u(v);
        dot(&tw, &self.factor.solve(&tv))
    }

    pub fn variance(&self, w: &[(usize, f64)]) -> f64 {
        self.covariance(w, w)
    }

    /// Dense posterior covariance; for small systems and tests.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        let m = self.basis.m;
        let k = self.b_star.len();
        let t = self.basis.t();
        let mut tu = DMatrix::zeros(m - k, m);
        for (v, (i, j)) in t.iter() {
            if i >= k {
                tu[(i - k, j)] = *v;
            }
        }
        let x = self.factor.solve_mat(&tu);
        tu.transpose() * x
    }

    pub fn transform_normals(&self, z: &[f64]) -> Vec<f64> {
        let dev = self.factor.transform_normals(z);
        let mut full = self.b_star.clone();
        full.extend(self.mu_hat.iter().zip(&dev).map(|(a, b)| a + b));
        self.basis.apply_transpose(&full)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.factor.dim())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        self.transform_normals(&z)
    }

    pub fn n_free(&self) -> usize {
        self.factor.dim()
    }
}

/// Joint covariance and precision after replacing the marginal of the last
/// block (`X_B`) by `N(0, H)` while keeping `X_A | X_B` unchanged.
#[derive(Debug, Clone)]
pub struct AdjustedJoint {
    pub covariance: DMatrix<f64>,
    /// Precision for regular `H`; for singular `H` the generalized precision
    /// built from `H⁺` and the projection `P = H⁺ H`.
    pub precision: DMatrix<f64>,
}

/// Adjusts the `B`-marginal of a zero-mean Gaussian with joint covariance
/// `sigma`, where the first `n_a` coordinates form block `A`.
pub fn adjust_marginal(sigma: &DMatrix<f64>, n_a: usize, h: &DMatrix<f64>) -> Result<AdjustedJoint> {
    let n = sigma.nrows();
    if sigma.ncols() != n || n_a > n {
        return Err(Error::Dimension("joint covariance must be square".into()));
    }
    let n_b = n - n_a;
    if h.nrows() != n_b || h.ncols() != n_b {
        return Err(Error::Dimension(format!(
            "H is {}x{}, expected {n_b}x{n_b}",
            h.nrows(),
            h.ncols()
        )));
    }
    let s_aa = sigma.view((0, 0), (n_a, n_a)).into_owned();
    let s_ab = sigma.view((0, n_a), (n_a, n_b)).into_owned();
    let s_bb = sigma.view((n_a, n_a), (n_b, n_b)).into_owned();
    let s_bb_chol = dense_cholesky(&s_bb)?;
    let s_bb_inv = s_bb_chol.inverse();
    let k = &s_ab * &s_bb_inv; // Σ_AB Σ_BB⁻¹
    let mut cov = DMatrix::zeros(n, n);
    cov.view_mut((0, 0), (n_a, n_a))
        .copy_from(&(&s_aa - &k * s_ab.transpose() + &k * h * k.transpose()));
    cov.view_mut((0, n_a), (n_a, n_b)).copy_from(&(&k * h));
    cov.view_mut((n_a, 0), (n_b, n_a))
        .copy_from(&(h * k.transpose()));
    cov.view_mut((n_a, n_a), (n_b, n_b)).copy_from(h);

    let q = dense_cholesky(sigma)?.inverse();
    let q_aa = q.view((0, 0), (n_a, n_a)).into_owned();
    let q_ab = q.view((0, n_a), (n_a, n_b)).into_owned();
    let q_bb = q.view((n_a, n_a), (n_b, n_b)).into_owned();

    // rank-revealing eigendecomposition of H
    let eig = SymmetricEigen::new(h.clone());
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut h_pinv = DMatrix::zeros(n_b, n_b);
    let mut proj = DMatrix::zeros(n_b, n_b);
    let mut rank = 0;
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -RANK_TOL * scale {
            return Err(Error::InvalidParameter(
                "H must be non-negative definite".into(),
            ));
        }
        if lam > RANK_TOL * scale {
            let v = eig.eigenvectors.column(i);
            h_pinv += (v * v.transpose()) / lam;
            proj += v * v.transpose();
            rank += 1;
        }
    }
    let mut prec = DMatrix::zeros(n, n);
    prec.view_mut((0, 0), (n_a, n_a)).copy_from(&q_aa);
    if rank == n_b {
        prec.view_mut((0, n_a), (n_a, n_b)).copy_from(&q_ab);
        prec.view_mut((n_a, 0), (n_b, n_a))
            .copy_from(&q_ab.transpose());
        prec.view_mut((n_a, n_a), (n_b, n_b))
            .copy_from(&(&q_bb + &h_pinv - &s_bb_inv));
    } else {
        prec.view_mut((0, n_a), (n_a, n_b)).copy_from(&(&q_ab * &proj));
        prec.view_mut((n_a, 0), (n_b, n_a))
            .copy_from(&(&proj * q_ab.transpose()));
        prec.view_mut((n_a, n_a), (n_b, n_b))
            .copy_from(&(&h_pinv + &proj * (&q_bb - &s_bb_inv) * &proj));
    }
    Ok(AdjustedJoint {
        covariance: cov,
        precision: prec,
    })
}
