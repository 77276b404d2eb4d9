//! Dense brute-force oracles for linearly constrained Gaussian models.

use std::ops::AddAssign;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprs::TriMat;
use wmgraph::constrained::{
    constrained_loglik, BlockDiagonal, ConstrainedModel, ConstraintSystem, SparseRow,
};
use wmgraph::sparse::SparseSymmetric;

pub struct Instance {
    pub mean: DVector<f64>,
    pub q: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub rows: Vec<SparseRow>,
    pub b: DVector<f64>,
    pub obs: DMatrix<f64>,
    pub noise_blocks: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn instance(seed: u64, m: usize, k: usize, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = spd(&mut rng, m);
    let mean = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
    // sparse rows touching 1..=3 coordinates each, redrawn until full rank
    let (rows, a) = loop {
        let mut rows = Vec::new();
        for _ in 0..k {
            let mut row: SparseRow = Vec::new();
            let nnz = rng.random_range(1..=3usize.min(m));
            while row.len() < nnz {
                let c = rng.random_range(0..m);
                if row.iter().all(|&(j, _)| j != c) {
                    row.push((c, rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 }));
                }
            }
            rows.push(row);
        }
        let mut a = DMatrix::zeros(k, m);
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                a[(i, j)] = v;
            }
        }
        if k == 0 || a.clone().svd(false, false).singular_values.min() > 1e-3 {
            break (rows, a);
        }
    };
    let b = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    let obs = DMatrix::from_fn(n, m, |_, _| if rng.random::<f64>() < 0.5 { rng.random_range(-1.0..1.0) } else { 0.0 });
    let mut noise_blocks = Vec::new();
    let mut left = n;
    while left > 0 {
        let s = rng.random_range(1..=left.min(3));
        noise_blocks.push(spd(&mut rng, s) * 0.3);
        left -= s;
    }
    let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    Instance { mean, q, a, rows, b, obs, noise_blocks, y }
}

pub fn csr(m: &DMatrix<f64>) -> sprs::CsMat<f64> {
    let mut t = TriMat::new((m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                t.add_triplet(i, j, m[(i, j)]);
            }
        }
    }
    t.to_csr()
}

pub fn block_dense(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), (b.nrows(), b.nrows())).copy_from(b);
        o += b.nrows();
    }
    out
}

pub fn model(inst: &Instance, rows: Vec<SparseRow>, b: Vec<f64>) -> ConstrainedModel {
    let m = inst.q.nrows();
    ConstrainedModel::new(
        inst.mean.iter().copied().collect(),
        SparseSymmetric::from_dense(&inst.q).unwrap(),
        csr(&inst.obs),
        BlockDiagonal::new(inst.noise_blocks.clone()).unwrap(),
        ConstraintSystem::new(m, rows, b).unwrap(),
    )
    .unwrap()
}

pub fn gauss_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let ch = cov.clone().cholesky().unwrap();
    let r = x - mean;
    let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (logdet + x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + r.dot(&ch.solve(&r)))
}

/// Mean and covariance of `u | A u = b` by dense conditioning.
pub fn condition(inst: &Instance) -> (DVector<f64>, DMatrix<f64>) {
    let sigma = inst.q.clone().cholesky().unwrap().inverse();
    let sa = &sigma * inst.a.transpose();
    let s = &inst.a * &sa;
    let s_inv = s.cholesky().unwrap().inverse();
    let mean = &inst.mean + &sa * &s_inv * (&inst.b - &inst.a * &inst.mean);
    let cov = &sigma - &sa * s_inv * sa.transpose();
    (mean, (&cov + cov.transpose()) * 0.5)
}

/// log p(y | A u + e = b) with `e ~ N(0, eps^2 I)`, in covariance form.
pub fn soft_loglik_dense(inst: &Instance, eps: f64) -> f64 {
    let sigma = inst.q.clone().cholesky().unwrap().inverse();
    let n = inst.y.len();
    let k = inst.b.len();
    let mut g = DMatrix::zeros(n + k, inst.q.nrows());
    g.view_mut((0, 0), (n, g.ncols())).copy_from(&inst.obs);
    g.view_mut((n, 0), (k, g.ncols())).copy_from(&inst.a);
    let mut cov = &g * &sigma * g.transpose();
    let noise = block_dense(&inst.noise_blocks);
    cov.view_mut((0, 0), (n, n)).add_assign(&noise);
    for i in 0..k {
        cov[(n + i, n + i)] += eps * eps;
    }
    let mean = &g * &inst.mean;
    let mut x = DVector::zeros(n + k);
    x.rows_mut(0, n).copy_from(&inst.y);
    x.rows_mut(n, k).copy_from(&inst.b);
    let b_cov = cov.view((n, n), (k, k)).into_owned();
    gauss_logpdf(&x, &mean, &cov) - gauss_logpdf(&inst.b, &mean.rows(n, k).into_owned(), &b_cov)
}

/// The same soft likelihood through the unconstrained sparse precision path.
pub fn soft_loglik_sparse(inst: &Instance, eps: f64) -> f64 {
    let m = inst.q.nrows();
    let n = inst.y.len();
    let k = inst.b.len();
    let unconstrained = |obs: &DMatrix<f64>, blocks: Vec<DMatrix<f64>>| {
        ConstrainedModel::new(
            inst.mean.iter().copied().collect(),
            SparseSymmetric::from_dense(&inst.q).unwrap(),
            csr(obs),
            BlockDiagonal::new(blocks).unwrap(),
            ConstraintSystem::none(m),
        )
        .unwrap()
    };
    let mut stacked = DMatrix::zeros(n + k, m);
    stacked.view_mut((0, 0), (n, m)).copy_from(&inst.obs);
    stacked.view_mut((n, 0), (k, m)).copy_from(&inst.a);
    let mut blocks = inst.noise_blocks.clone();
    blocks.push(DMatrix::identity(k, k) * eps * eps);
    let mut yb: Vec<f64> = inst.y.iter().copied().collect();
    yb.extend(inst.b.iter());
    let b: Vec<f64> = inst.b.iter().copied().collect();
    constrained_loglik(&unconstrained(&stacked, blocks), &yb).unwrap()
        - constrained_loglik(&unconstrained(&inst.a, vec![DMatrix::identity(k, k) * eps * eps]), &b).unwrap()
}
