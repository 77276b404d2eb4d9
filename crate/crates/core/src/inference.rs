//! Likelihoods, maximum-likelihood fitting and kriging.

use std::io::Read;
use std::path::Path;
use std::sync::Mutex;

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use nalgebra::DMatrix;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sprs::TriMat;

use crate::constrained::{constrained_loglik, constrained_posterior, BlockDiagonal, ConstrainedModel, ConstraintSystem, SparseRow};
use crate::error::{Error, Result};
use crate::graph::{split_loops_and_subdivide, MetricGraph, PointOnEdge};
use crate::kernels::ModelParams;
use crate::precision::{alpha2_constraint_rows, alpha2_index, assemble_alpha1, assemble_alpha2_system, extended_precision, ExtendedGraph};
use crate::simulation::{bridge_moments, simulate_field, stream_rng};
use crate::sparse::SparseSymmetric;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observations `y_i` at sites on the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sites: Vec<PointOnEdge>,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct ObsRecord {
    edge_id: i64,
    offset: f64,
    value: f64,
}

impl Dataset {
    pub fn new(g: &MetricGraph, sites: Vec<PointOnEdge>, values: Vec<f64>) -> Result<Self> {
        if sites.len() != values.len() {
            return Err(Error::Dimension(format!(
                "{} sites but {} values",
                sites.len(),
                values.len()
            )));
        }
        for s in &sites {
            g.validate_point(s)?;
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("observation {v} is not finite")));
        }
        Ok(Self { sites, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Reads `edge_id,offset,value` rows; `edge_id` refers to edge labels.
    pub fn from_csv_reader<R: Read>(g: &MetricGraph, r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut sites = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.deserialize() {
            let rec: ObsRecord = rec?;
            let e = g.edge_by_label(rec.edge_id).ok_or_else(|| {
                Error::InvalidGraph(format!("observation on unknown edge {}", rec.edge_id))
            })?;
            sites.push(PointOnEdge::new(e, rec.offset));
            values.push(rec.value);
        }
        Self::new(g, sites, values)
    }

    pub fn from_csv_path(g: &MetricGraph, path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_reader(g, std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, g: &MetricGraph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge_id", "offset", "value"])?;
        for (s, v) in self.sites.iter().zip(&self.values) {
            w.write_record([
                g.edge(s.edge).label.to_string(),
                format!("{:.16e}", s.offset),
                format!("{v:.16e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Groups observations by extended-graph vertex and checks exact duplicates.
fn unique_exact(vertices: &[usize], values: &[f64]) -> Result<Vec<(usize, f64)>> {
    let mut pairs: Vec<(usize, f64)> = vertices.iter().copied().zip(values.iter().copied()).collect();
    pairs.sort_by_key(|p| p.0);
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
    for (v, y) in pairs {
        match out.last() {
            Some(&(w, z)) if w == v => {
                if (z - y).abs() > 1e-12 * z.abs().max(y.abs()).max(1.0) {
                    return Err(Error::ConflictingObservations(z, y));
                }
            }
            _ => out.push((v, y)),
        }
    }
    Ok(out)
}

/// `alpha = 1` log-likelihood with the sites inserted as graph vertices.
///
/// For `sigma = 0` the observations are exact and the marginal precision of
/// the sites is used through its Schur complement.
pub fn loglik_alpha1_extended(g: &MetricGraph, params: &ModelParams, data: &Dataset) -> Result<f64> {
    let (q, ext) = extended_precision(g, params, &data.sites)?;
    let fq = q.factor()?;
    let y = &data.values;
    let n = y.len() as f64;
    if params.sigma > 0.0 {
        let s2 = params.sigma * params.sigma;
        let mut tri = TriMat::new((q.dim(), q.dim()));
        let mut bty = vec![0.0; q.dim()];
        for (&v, &yi) in ext.site_vertices.iter().zip(y) {
            tri.add_triplet(v, v, 1.0 / s2);
            bty[v] += yi / s2;
        }
        let qp = q.add(&SparseSymmetric::from_csmat(tri.to_csc())?)?;
        let fp = qp.factor()?;
        let mu = fp.solve(&bty);
        return Ok(0.5 * fq.log_det() - 0.5 * fp.log_det() - n * params.sigma.ln()
            - 0.5 * n * LN_2PI
            - dot(y, y) / (2.0 * s2)
            + 0.5 * dot(&mu, &bty));
    }
    let obs = unique_exact(&ext.site_vertices, y)?;
    let mut pos = vec![usize::MAX; q.dim()];
    for (k, &(v, _)) in obs.iter().enumerate() {
        pos[v] = k;
    }
    let rest: Vec<usize> = (0..q.dim()).filter(|&i| pos[i] == usize::MAX).collect();
    let ys: Vec<f64> = obs.iter().map(|p| p.1).collect();
    let mut full = vec![0.0; q.dim()];
    for &(v, yv) in &obs {
        full[v] = yv;
    }
    let qy = q.mul_vec(&full);
    // yᵀ Q_ss y and Q_vs y
    let quad_ss: f64 = obs.iter().map(|&(v, yv)| yv * qy[v]).sum();
    let qvs_y: Vec<f64> = rest.iter().map(|&i| qy[i]).collect();
    let (logdet_vv, corr) = if rest.is_empty() {
        (0.0, 0.0)
    } else {
        let fv = q.submatrix(&rest).factor()?;
        let x = fv.solve(&qvs_y);
        (fv.log_det(), dot(&qvs_y, &x))
    };
    let ns = ys.len() as f64;
    Ok(0.5 * (fq.log_det() - logdet_vv) - 0.5 * ns * LN_2PI - 0.5 * (quad_ss - corr))
}

/// Observation matrix and block noise from conditioning each edge's
/// observations on its end vector.
struct EdgeObservations {
    b: sprs::CsMat<f64>,
    noise: BlockDiagonal,
    y: Vec<f64>,
}

fn edge_observations(
    g: &MetricGraph,
    params: &ModelParams,
    sites: &[PointOnEdge],
    values: &[f64],
    m: usize,
    column: impl Fn(usize, usize) -> usize,
) -> Result<EdgeObservations> {
    let d = params.block_dim();
    let mut by_edge: Vec<Vec<usize>> = vec![Vec::new(); g.n_edges()];
    for (i, s) in sites.iter().enumerate() {
        by_edge[s.edge].push(i);
    }
    let s2 = params.sigma * params.sigma;
    // (edge, observation indices, bridge weights, observation covariance)
    type EdgeObs = (usize, Vec<usize>, DMatrix<f64>, DMatrix<f64>);
    let parts: Vec<Result<Option<EdgeObs>>> = by_edge
        .par_iter()
        .enumerate()
        .map(|(e, idx)| {
            if idx.is_empty() {
                return Ok(None);
            }
            let offs: Vec<f64> = idx.iter().map(|&i| sites[i].offset).collect();
            let (b, mut sigma) = bridge_moments(params, g.edge(e).length, &offs, false)?;
            for i in 0..sigma.nrows() {
                sigma[(i, i)] += s2;
            }
            Ok(Some((e, idx.clone(), b, sigma)))
        })
        .collect();
    let mut tri = TriMat::new((sites.len(), m));
    let mut blocks = Vec::new();
    let mut y = Vec::with_capacity(sites.len());
    let mut row = 0;
    for part in parts {
        let Some((e, idx, b, sigma)) = part? else { continue };
        for (a, &i) in idx.iter().enumerate() {
            for j in 0..2 * d {
                if b[(a, j)] != 0.0 {
                    tri.add_triplet(row, column(e, j), b[(a, j)]);
                }
            }
            y.push(values[i]);
            row += 1;
        }
        blocks.push(sigma);
    }
    Ok(EdgeObservations {
        b: tri.to_csr(),
        noise: BlockDiagonal::new(blocks)?,
        y,
    })
}

fn require_noise(params: &ModelParams, what: &str) -> Result<()> {
    if params.sigma <= 0.0 {
        return Err(Error::Unsupported(format!(
            "{what} needs measurement noise sigma > 0"
        )));
    }
    Ok(())
}

/// `alpha = 1` log-likelihood with observations integrated edge by edge
/// given the vertex values.
pub fn loglik_alpha1_integrated(g: &MetricGraph, params: &ModelParams, data: &Dataset) -> Result<f64> {
    if params.alpha != 1 {
        return Err(Error::UnsupportedAlpha(params.alpha));
    }
    require_noise(params, "the integrated likelihood")?;
    let (split, map) = split_loops_and_subdivide(g, &[])?;
    let q = assemble_alpha1(&split, params)?;
    let sites: Vec<PointOnEdge> = data.sites.iter().map(|s| map.forward(s)).collect();
    let obs = edge_observations(&split, params, &sites, &data.values, q.dim(), |e, j| {
        let edge = split.edge(e);
        if j == 0 {
            edge.lower
        } else {
            edge.upper
        }
    })?;
    let m = q.dim();
    let model = ConstrainedModel::new(vec![0.0; m], q, obs.b, obs.noise, ConstraintSystem::none(m))?;
    constrained_loglik(&model, &obs.y)
}

/// `alpha = 2` log-likelihood under the Kirchhoff constraints.
pub fn loglik_alpha2(g: &MetricGraph, params: &ModelParams, data: &Dataset) -> Result<f64> {
    if params.alpha != 2 {
        return Err(Error::UnsupportedAlpha(params.alpha));
    }
    require_noise(params, "the alpha = 2 likelihood")?;
    let (split, map) = split_loops_and_subdivide(g, &[])?;
    let (q, cons) = assemble_alpha2_system(&split, params)?;
    let sites: Vec<PointOnEdge> = data.sites.iter().map(|s| map.forward(s)).collect();
    let m = q.dim();
    let obs = edge_observations(&split, params, &sites, &data.values, m, |e, j| 4 * e + j)?;
    let model = ConstrainedModel::new(vec![0.0; m], q, obs.b, obs.noise, cons)?;
    constrained_loglik(&model, &obs.y)
}

/// Exact log-likelihood for the given parameters (extended form for `alpha = 1`).
pub fn loglik(g: &MetricGraph, params: &ModelParams, data: &Dataset) -> Result<f64> {
    params.require_exact()?;
    match params.alpha {
        1 => loglik_alpha1_extended(g, params, data),
        _ => loglik_alpha2(g, params, data),
    }
}

/// Which parameters stay at their initial values during fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedParams {
    pub kappa: bool,
    pub tau: bool,
    pub sigma: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: u32,
    pub kappa: f64,
    pub tau: f64,
    pub sigma: f64,
    pub loglik: f64,
    pub start_loglik: f64,
    pub converged: bool,
    pub iterations: u64,
    pub trace: Vec<TraceEntry>,
}

impl FitResult {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            kappa: self.kappa,
            tau: self.tau,
            sigma: self.sigma,
        }
    }
}

struct Objective<'a> {
    g: &'a MetricGraph,
    data: &'a Dataset,
    init: ModelParams,
    fixed: FixedParams,
    trace: &'a Mutex<Vec<TraceEntry>>,
}

impl Objective<'_> {
    fn params_at(&self, theta: &[f64]) -> ModelParams {
        let mut p = self.init;
        let mut it = theta.iter();
        if !self.fixed.kappa {
            p.kappa = it.next().unwrap().exp();
        }
        if !self.fixed.tau {
            p.tau = it.next().unwrap().exp();
        }
        if !self.fixed.sigma {
            p.sigma = it.next().unwrap().exp();
        }
        p
    }

    fn eval(&self, p: &ModelParams) -> f64 {
        let ll = loglik(self.g, p, self.data).unwrap_or(f64::NEG_INFINITY);
        let mut t = self.trace.lock().expect("trace lock");
        let evaluation = t.len();
        t.push(TraceEntry {
            evaluation,
            kappa: p.kappa,
            tau: p.tau,
            sigma: p.sigma,
            loglik: ll,
        });
        ll
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, theta: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let ll = self.eval(&self.params_at(theta));
        // keep the simplex ordering well defined where the likelihood fails
        Ok(if ll.is_finite() { -ll } else { 1e300 })
    }
}

/// Maximum likelihood over `log kappa`, `log tau`, `log sigma` with a
/// Nelder–Mead simplex (cost tolerance 1e-8, at most 500 iterations).
pub fn fit_mle(g: &MetricGraph, data: &Dataset, init: ModelParams, fixed: FixedParams) -> Result<FitResult> {
    init.require_exact()?;
    if data.is_empty() {
        return Err(Error::InvalidParameter("cannot fit without observations".into()));
    }
    if !fixed.sigma && init.sigma <= 0.0 {
        return Err(Error::InvalidParameter(
            "a free sigma needs a positive starting value".into(),
        ));
    }
    let trace = Mutex::new(Vec::new());
    let obj = Objective {
        g,
        data,
        init,
        fixed,
        trace: &trace,
    };
    let start_loglik = obj.eval(&init);
    if !start_loglik.is_finite() {
        // surface the underlying error
        loglik(g, &init, data)?;
    }
    let mut theta0 = Vec::new();
    if !fixed.kappa {
        theta0.push(init.kappa.ln());
    }
    if !fixed.tau {
        theta0.push(init.tau.ln());
    }
    if !fixed.sigma {
        theta0.push(init.sigma.ln());
    }
    if theta0.is_empty() {
        let trace = trace.into_inner().expect("trace lock");
        return Ok(FitResult {
            alpha: init.alpha,
            kappa: init.kappa,
            tau: init.tau,
            sigma: init.sigma,
            loglik: start_loglik,
            start_loglik,
            converged: true,
            iterations: 0,
            trace,
        });
    }
    let mut simplex = vec![theta0.clone()];
    for i in 0..theta0.len() {
        let mut v = theta0.clone();
        v[i] += 0.5;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-8)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(obj, solver)
        .configure(|s| s.max_iters(500))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let state = res.state();
    let converged = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    );
    let iterations = state.get_iter();
    drop(res);
    let trace = trace.into_inner().expect("trace lock");
    let best = trace
        .iter()
        .filter(|t| t.loglik.is_finite())
        .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
        .cloned()
        .expect("start point is finite");
    Ok(FitResult {
        alpha: init.alpha,
        kappa: best.kappa,
        tau: best.tau,
        sigma: best.sigma,
        loglik: best.loglik,
        start_loglik,
        converged,
        iterations,
        trace,
    })
}

/// Conditional means and variances of the field at `targets` given the data.
pub fn krig_predict(
    g: &MetricGraph,
    params: &ModelParams,
    data: &Dataset,
    targets: &[PointOnEdge],
) -> Result<(Vec<f64>, Vec<f64>)> {
    params.require_exact()?;
    for t in targets {
        g.validate_point(t)?;
    }
    let mut all = data.sites.clone();
    all.extend_from_slice(targets);
    let n = data.len();
    match params.alpha {
        1 => {
            let (q, ext) = extended_precision(g, params, &all)?;
            let obs_v = &ext.site_vertices[..n];
            let tgt_v = &ext.site_vertices[n..];
            krig_alpha1(&q, params, obs_v, &data.values, tgt_v)
        }
        _ => krig_alpha2(g, params, &all, n, &data.values),
    }
}

fn krig_alpha1(
    q: &SparseSymmetric,
    params: &ModelParams,
    obs_v: &[usize],
    y: &[f64],
    tgt_v: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let dim = q.dim();
    if params.sigma > 0.0 {
        let s2 = params.sigma * params.sigma;
        let mut tri = TriMat::new((dim, dim));
        let mut bty = vec![0.0; dim];
        for (&v, &yi) in obs_v.iter().zip(y) {
            tri.add_triplet(v, v, 1.0 / s2);
            bty[v] += yi / s2;
        }
        let qp = q.add(&SparseSymmetric::from_csmat(tri.to_csc())?)?;
        let f = qp.factor()?;
        let mu = f.solve(&bty);
        let vars = tgt_v
            .par_iter()
            .map(|&v| {
                let mut e = vec![0.0; dim];
                e[v] = 1.0;
                f.solve(&e)[v]
            })
            .collect();
        return Ok((tgt_v.iter().map(|&v| mu[v]).collect(), vars));
    }
    let obs = unique_exact(obs_v, y)?;
    let mut observed = vec![None; dim];
    for &(v, yv) in &obs {
        observed[v] = Some(yv);
    }
    let rest: Vec<usize> = (0..dim).filter(|&i| observed[i].is_none()).collect();
    let mut pos = vec![usize::MAX; dim];
    for (k, &i) in rest.iter().enumerate() {
        pos[i] = k;
    }
    let mut full = vec![0.0; dim];
    for &(v, yv) in &obs {
        full[v] = yv;
    }
    let qy = q.mul_vec(&full);
    let (mean_rest, f) = if rest.is_empty() {
        (Vec::new(), None)
    } else {
        let f = q.submatrix(&rest).factor()?;
        let rhs: Vec<f64> = rest.iter().map(|&i| -qy[i]).collect();
        (f.solve(&rhs), Some(f))
    };
    let mut means = Vec::with_capacity(tgt_v.len());
    let mut vars = Vec::with_capacity(tgt_v.len());
    for &v in tgt_v {
        if let Some(yv) = observed[v] {
            means.push(yv);
            vars.push(0.0);
        } else {
            let f = f.as_ref().expect("unobserved vertex implies a free block");
            let mut e = vec![0.0; rest.len()];
            e[pos[v]] = 1.0;
            means.push(mean_rest[pos[v]]);
            vars.push(f.solve(&e)[pos[v]]);
        }
    }
    Ok((means, vars))
}

/// `alpha = 2` kriging on the graph subdivided at every data and target site.
/// Exact observations enter as extra constraints.
fn krig_alpha2(
    g: &MetricGraph,
    params: &ModelParams,
    all: &[PointOnEdge],
    n_obs: usize,
    y: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ext = ExtendedGraph::new(g, all)?;
    let (q, _) = assemble_alpha2_system(&ext.graph, params)?;
    let m = q.dim();
    let value_index = |v: usize| {
        let (e, end) = ext.graph.incident(v)[0];
        alpha2_index(e, end, 0)
    };
    let mut rows: Vec<SparseRow> = alpha2_constraint_rows(&ext.graph)?;
    let mut rhs = vec![0.0; rows.len()];
    let obs_v = &ext.site_vertices[..n_obs];
    let (b, noise, y_used, exact) = if params.sigma > 0.0 {
        let mut tri = TriMat::new((n_obs, m));
        for (i, &v) in obs_v.iter().enumerate() {
            tri.add_triplet(i, value_index(v), 1.0);
        }
        (tri.to_csr(), BlockDiagonal::iid(n_obs, params.sigma)?, y.to_vec(), Vec::new())
    } else {
        let obs = unique_exact(obs_v, y)?;
        for &(v, yv) in &obs {
            rows.push(vec![(value_index(v), 1.0)]);
            rhs.push(yv);
        }
        (TriMat::new((0, m)).to_csr(), BlockDiagonal::new(Vec::new())?, Vec::new(), obs)
    };
    let cons = ConstraintSystem::new(m, rows, rhs)?;
    let model = ConstrainedModel::new(vec![0.0; m], q, b, noise, cons)?;
    let post = constrained_posterior(&model, &y_used)?;
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for &v in &ext.site_vertices[n_obs..] {
        if let Ok(k) = exact.binary_search_by_key(&v, |p| p.0) {
            means.push(exact[k].1);
            vars.push(0.0);
            continue;
        }
        let idx = value_index(v);
        means.push(post.mean()[idx]);
        vars.push(post.variance(&[(idx, 1.0)]).max(0.0));
    }
    Ok((means, vars))
}

#[allow(clippy::large_enum_variant)]
enum SitePrior {
    Markov(crate::sparse::Factor, Vec<usize>),
    Constrained(crate::constrained::ConstrainedPosterior, Vec<usize>),
}

impl SitePrior {
    fn new(g: &MetricGraph, params: &ModelParams, sites: &[PointOnEdge], adjusted: bool) -> Result<Self> {
        params.require_exact()?;
        let ext = ExtendedGraph::new(g, sites)?;
        match (params.alpha, adjusted) {
            (1, false) => Ok(Self::Markov(assemble_alpha1(&ext.graph, params)?.factor()?, ext.site_vertices)),
            (1, true) => Ok(Self::Markov(
                crate::precision::assemble_alpha1_adjusted(&ext.graph, params)?.factor()?,
                ext.site_vertices,
            )),
            (_, false) => {
                let post = crate::simulation::alpha2_prior(&ext.graph, params)?;
                let idx = ext
                    .site_vertices
                    .iter()
                    .map(|&v| {
                        let (e, end) = ext.graph.incident(v)[0];
                        alpha2_index(e, end, 0)
                    })
                    .collect();
                Ok(Self::Constrained(post, idx))
            }
            (_, true) => Err(Error::Unsupported(
                "boundary adjustment is only available for alpha = 1".into(),
            )),
        }
    }

    /// Covariance between every site and site `k`.
    fn column(&self, k: usize) -> Vec<f64> {
        match self {
            Self::Markov(f, idx) => {
                let mut e = vec![0.0; f.dim()];
                e[idx[k]] = 1.0;
                let col = f.solve(&e);
                idx.iter().map(|&i| col[i]).collect()
            }
            Self::Constrained(post, idx) => idx
                .par_iter()
                .map(|&i| post.covariance(&[(idx[k], 1.0)], &[(i, 1.0)]))
                .collect(),
        }
    }

    fn variance(&self, k: usize) -> f64 {
        match self {
            Self::Markov(f, idx) => {
                let mut e = vec![0.0; f.dim()];
                e[idx[k]] = 1.0;
                f.solve(&e)[idx[k]]
            }
            Self::Constrained(post, idx) => post.variance(&[(idx[k], 1.0)]),
        }
    }
}

/// Prior covariance `ρ(source, t)` for every target `t`.
pub fn field_covariance(
    g: &MetricGraph,
    params: &ModelParams,
    source: &PointOnEdge,
    targets: &[PointOnEdge],
) -> Result<Vec<f64>> {
    let mut sites = vec![*source];
    sites.extend_from_slice(targets);
    let prior = SitePrior::new(g, params, &sites, false)?;
    Ok(prior.column(0)[1..].to_vec())
}

/// Prior marginal variances at `targets`, optionally with the boundary
/// adjustment at degree-1 vertices (`alpha = 1` only).
pub fn field_variances(
    g: &MetricGraph,
    params: &ModelParams,
    targets: &[PointOnEdge],
    adjusted: bool,
) -> Result<Vec<f64>> {
    let prior = SitePrior::new(g, params, targets, adjusted)?;
    Ok((0..targets.len()).into_par_iter().map(|k| prior.variance(k)).collect())
}

/// Points every `step` along each edge, both endpoints included.
pub fn edge_grid(g: &MetricGraph, step: f64) -> Result<Vec<PointOnEdge>> {
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidParameter(format!("grid step {step} must be positive")));
    }
    let mut out = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        let n = (edge.length / step).ceil().max(1.0) as usize;
        out.extend((0..=n).map(|k| PointOnEdge::new(e, edge.length * k as f64 / n as f64)));
    }
    Ok(out)
}

/// Uniform random sites on the graph (edge chosen proportionally to length).
pub fn random_sites(g: &MetricGraph, n: usize, seed: u64) -> Vec<PointOnEdge> {
    let mut rng = stream_rng(seed, u64::MAX);
    let total = g.total_length();
    (0..n)
        .map(|_| {
            let mut x = rng.random::<f64>() * total;
            for (e, edge) in g.edges().iter().enumerate() {
                if x <= edge.length || e + 1 == g.n_edges() {
                    return PointOnEdge::new(e, x.min(edge.length));
                }
                x -= edge.length;
            }
            unreachable!("graph has edges")
        })
        .collect()
}

/// Simulated data: an exact field draw plus independent `N(0, sigma^2)` noise.
pub fn simulate_dataset(g: &MetricGraph, params: &ModelParams, n: usize, seed: u64) -> Result<Dataset> {
    let sites = random_sites(g, n, seed);
    let field = simulate_field(g, params, &sites, seed)?;
    let mut rng = stream_rng(seed, u64::MAX - 1);
    let values = field
        .values
        .iter()
        .map(|v| v + params.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Dataset::new(g, sites, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRun {
    pub seed: u64,
    pub tau_hat: f64,
    pub relative_error: f64,
    pub converged: bool,
}

/// Fits `tau` with `kappa` held at `kappa_fixed` (and `sigma` at its true
/// value) on data simulated from `truth`, once per seed.
pub fn tau_consistency(
    g: &MetricGraph,
    truth: &ModelParams,
    kappa_fixed: f64,
    n_obs: usize,
    seeds: &[u64],
) -> Result<Vec<ConsistencyRun>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let data = simulate_dataset(g, truth, n_obs, seed)?;
            let init = ModelParams {
                kappa: kappa_fixed,
                ..*truth
            };
            let fit = fit_mle(
                g,
                &data,
                init,
                FixedParams {
                    kappa: true,
                    tau: false,
                    sigma: true,
                },
            )?;
            Ok(ConsistencyRun {
                seed,
                tau_hat: fit.tau,
                relative_error: (fit.tau - truth.tau).abs() / truth.tau,
                converged: fit.converged,
            })
        })
        .collect()
}

/// Value index of every original vertex in the `alpha = 2` vector of `g`.
pub fn alpha2_vertex_indices(g: &MetricGraph) -> Vec<Option<usize>> {
    (0..g.n_vertices())
        .map(|v| g.incident(v).first().map(|&(e, end)| alpha2_index(e, end, 0)))
        .collect()
}
