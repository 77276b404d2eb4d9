//! Exact simulation: vertex (or edge-end) values from the sparse precision,
//! then edge interiors by conditioning the stationary process on the edge
//! ends.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::constrained::{constrained_posterior, BlockDiagonal, ConstrainedModel, ConstrainedPosterior};
use crate::error::{Error, Result};
use crate::graph::{split_loops_and_subdivide, End, MetricGraph, PointOnEdge};
use crate::kernels::{stationary_cross, ModelParams};
use crate::precision::{alpha2_index, assemble_alpha1, assemble_alpha2_system};
use crate::sparse::{dense_cholesky, SparseSymmetric};

/// Field values at a list of sites.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sites: Vec<PointOnEdge>,
    pub values: Vec<f64>,
    /// Derivatives along the edge direction (`alpha = 2` only).
    pub derivatives: Option<Vec<f64>>,
    pub seed: u64,
}

impl FieldSample {
    /// CSV with header `site_edge,site_offset,value[,derivative]`.
    pub fn write_csv<W: Write>(&self, g: &MetricGraph, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.derivatives.is_some() {
            w.write_record(["site_edge", "site_offset", "value", "derivative"])?;
        } else {
            w.write_record(["site_edge", "site_offset", "value"])?;
        }
        for (i, s) in self.sites.iter().enumerate() {
            let mut rec = vec![
                g.edge(s.edge).label.to_string(),
                fmt17(s.offset),
                fmt17(self.values[i]),
            ];
            if let Some(d) = &self.derivatives {
                rec.push(fmt17(d[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Seeded generator for stream `stream` (stream 0 is the vertex stage,
/// stream `e + 1` the interior of edge `e`).
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draw from `N(0, Q⁻¹)`.
pub fn sample_vertices(q: &SparseSymmetric, seed: u64) -> Result<Vec<f64>> {
    let f = q.factor()?;
    Ok(f.sample(&mut stream_rng(seed, 0)))
}

/// Draw from a constrained posterior (or prior, when it has no data).
pub fn sample_constrained(post: &ConstrainedPosterior, seed: u64) -> Vec<f64> {
    post.sample(&mut stream_rng(seed, 0))
}

/// Conditional law of the stationary process at `sites` given the end
/// vectors at `0` and `length`: mean `B [ends]`, covariance `Σ`.
///
/// Rows of the output hold the value (and derivative when `with_derivative`)
/// per site; `ends` is ordered like the `alpha = 2` edge vector.
pub fn bridge_moments(
    params: &ModelParams,
    length: f64,
    sites: &[f64],
    with_derivative: bool,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    params.require_exact()?;
    let d = params.block_dim();
    let ds = if with_derivative { d } else { 1 };
    if with_derivative && d < 2 {
        return Err(Error::InvalidParameter(
            "derivatives need alpha = 2".into(),
        ));
    }
    let ends = [0.0, length];
    let r_tt = stationary_cross(params, &ends, d, &ends, d)?;
    let r_st = stationary_cross(params, sites, ds, &ends, d)?;
    let r_ss = stationary_cross(params, sites, ds, sites, ds)?;
    let chol = dense_cholesky(&r_tt)?;
    let b = chol.solve(&r_st.transpose()).transpose();
    let mut sigma = &r_ss - &b * r_st.transpose();
    sigma = 0.5 * (&sigma + sigma.transpose());
    Ok((b, sigma))
}

/// Draw the process at `sites` given the end vector of one edge.
///
/// Sites within `1e-12 * length` of an end return the end value.
pub fn sample_bridge<R: Rng + ?Sized>(
    params: &ModelParams,
    length: f64,
    ends: &[f64],
    sites: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let d = params.block_dim();
    if ends.len() != 2 * d {
        return Err(Error::Dimension(format!(
            "expected {} end values, got {}",
            2 * d,
            ends.len()
        )));
    }
    let tol = crate::graph::ENDPOINT_TOL * length;
    let mut out = vec![0.0; sites.len()];
    let mut interior = Vec::new();
    let mut interior_pos = Vec::new();
    for (i, &s) in sites.iter().enumerate() {
        if !(s.is_finite() && s >= -tol && s <= length + tol) {
            return Err(Error::InvalidParameter(format!(
                "bridge site {s} outside [0, {length}]"
            )));
        }
        if s <= tol {
            out[i] = ends[0];
        } else if s >= length - tol {
            out[i] = ends[d];
        } else {
            interior.push(s);
            interior_pos.push(i);
        }
    }
    if interior.is_empty() {
        return Ok(out);
    }
    let (b, sigma) = bridge_moments(params, length, &interior, false)?;
    let mean = &b * DVector::from_column_slice(ends);
    let l = jittered_cholesky(&sigma)?;
    let z = DVector::from_iterator(interior.len(), (0..interior.len()).map(|_| rng.sample(StandardNormal)));
    let draw = mean + l * z;
    for (k, &i) in interior_pos.iter().enumerate() {
        out[i] = draw[k];
    }
    Ok(out)
}

/// Prior over the `alpha = 2` edge-end vectors of a loop-free graph.
pub fn alpha2_prior(g: &MetricGraph, params: &ModelParams) -> Result<ConstrainedPosterior> {
    let (q, cons) = assemble_alpha2_system(g, params)?;
    let m = q.dim();
    let model = ConstrainedModel::new(
        vec![0.0; m],
        q,
        sprs::TriMat::new((0, m)).to_csr(),
        BlockDiagonal::new(Vec::new())?,
        cons,
    )?;
    constrained_posterior(&model, &[])
}

/// Exact draw of the field (and for `alpha = 2` its derivative) at `sites`.
pub fn simulate_field(
    g: &MetricGraph,
    params: &ModelParams,
    sites: &[PointOnEdge],
    seed: u64,
) -> Result<FieldSample> {
    params.require_exact()?;
    for s in sites {
        g.validate_point(s)?;
    }
    let (split, map) = split_loops_and_subdivide(g, &[])?;
    let d = params.block_dim();
    // end vectors per edge of the split graph
    let ends: Vec<Vec<f64>> = if params.alpha == 1 {
        let u = sample_vertices(&assemble_alpha1(&split, params)?, seed)?;
        split
            .edges()
            .iter()
            .map(|e| vec![u[e.lower], u[e.upper]])
            .collect()
    } else {
        let prior = alpha2_prior(&split, params)?;
        let u = sample_constrained(&prior, seed);
        (0..split.n_edges())
            .map(|e| {
                vec![
                    u[alpha2_index(e, End::Lower, 0)],
                    u[alpha2_index(e, End::Lower, 1)],
                    u[alpha2_index(e, End::Upper, 0)],
                    u[alpha2_index(e, End::Upper, 1)],
                ]
            })
            .collect()
    };
    let mapped: Vec<PointOnEdge> = sites.iter().map(|s| map.forward(s)).collect();
    let mut by_edge: Vec<Vec<usize>> = vec![Vec::new(); split.n_edges()];
    for (i, p) in mapped.iter().enumerate() {
        by_edge[p.edge].push(i);
    }
    let with_deriv = params.alpha == 2;
    let per_edge: Vec<Result<Vec<(usize, f64, f64)>>> = by_edge
        .par_iter()
        .enumerate()
        .map(|(e, idx)| {
            if idx.is_empty() {
                return Ok(Vec::new());
            }
            let len = split.edge(e).length;
            let tol = crate::graph::ENDPOINT_TOL * len;
            let offs: Vec<f64> = idx.iter().map(|&i| mapped[i].offset).collect();
            let mut rng = stream_rng(seed, e as u64 + 1);
            let mut res = vec![(0usize, 0.0, 0.0); idx.len()];
            let mut interior = Vec::new();
            let mut interior_k = Vec::new();
            for (k, (&i, &t)) in idx.iter().zip(&offs).enumerate() {
                if t <= tol {
                    res[k] = (i, ends[e][0], if with_deriv { ends[e][1] } else { 0.0 });
                } else if t >= len - tol {
                    res[k] = (i, ends[e][d], if with_deriv { ends[e][d + 1] } else { 0.0 });
                } else {
                    interior.push(t);
                    interior_k.push(k);
                }
            }
            if !interior.is_empty() {
                let (b, sigma) = bridge_moments(params, len, &interior, with_deriv)?;
                let mean = &b * DVector::from_column_slice(&ends[e]);
                let l = jittered_cholesky(&sigma)?;
                let z = DVector::from_iterator(
                    sigma.nrows(),
                    (0..sigma.nrows()).map(|_| rng.sample(StandardNormal)),
                );
                let draw = mean + l * z;
                let ds = if with_deriv { 2 } else { 1 };
                for (j, &k) in interior_k.iter().enumerate() {
                    let dv = if with_deriv { draw[j * ds + 1] } else { 0.0 };
                    res[k] = (idx[k], draw[j * ds], dv);
                }
            }
            Ok(res)
        })
        .collect();
    let mut values = vec![0.0; sites.len()];
    let mut derivs = vec![0.0; sites.len()];
    for r in per_edge {
        for (i, v, dv) in r? {
            values[i] = v;
            derivs[i] = dv;
        }
    }
    Ok(FieldSample {
        sites: sites.to_vec(),
        values,
        derivatives: with_deriv.then_some(derivs),
        seed,
    })
}

/// Cholesky factor of a covariance that may be singular to roundoff
/// (e.g. two nearly coincident sites).
fn jittered_cholesky(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = sigma.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let m = sigma + DMatrix::identity(sigma.nrows(), sigma.nrows()) * jitter;
        if let Some(c) = nalgebra::Cholesky::new(m) {
            return Ok(c.l());
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
    }
    Err(Error::NotPositiveDefinite {
        index: 0,
        pivot: sigma[(0, 0)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::matern_cov;
    use approx::assert_relative_eq;

    #[test]
    fn bridge_midpoint_variance() {
        let params = ModelParams::new(1, 1.0, 1.0, 0.0).unwrap();
        let (_, sigma) = bridge_moments(&params, 2.0, &[1.0], false).unwrap();
        let r = |h: f64| matern_cov(&params, h, 0, 0).unwrap();
        let rr = DMatrix::from_row_slice(2, 2, &[r(0.0), r(2.0), r(2.0), r(0.0)]);
        let v = nalgebra::Vector2::new(r(1.0), r(1.0));
        let want = r(0.0) - (v.transpose() * rr.try_inverse().unwrap() * v)[(0, 0)];
        assert_relative_eq!(sigma[(0, 0)], want, epsilon = 1e-14);
    }

    #[test]
    fn bridge_at_endpoints_returns_end_values() {
        let params = ModelParams::new(2, 1.0, 1.0, 0.0).unwrap();
        let mut rng = stream_rng(1, 0);
        let out = sample_bridge(&params, 1.0, &[0.3, 1.0, -0.2, 0.5], &[0.0, 1.0], &mut rng).unwrap();
        assert_eq!(out, vec![0.3, -0.2]);
    }

    #[test]
    fn seeded_determinism() {
        let g = MetricGraph::star(&[1.0, 2.0, 0.5]).unwrap();
        let sites = vec![PointOnEdge::new(0, 0.3), PointOnEdge::new(1, 1.0), PointOnEdge::new(2, 0.5)];
        for alpha in [1, 2] {
            let params = ModelParams::new(alpha, 2.0, 1.0, 0.0).unwrap();
            let a = simulate_field(&g, &params, &sites, 7).unwrap();
            let b = simulate_field(&g, &params, &sites, 7).unwrap();
            let c = simulate_field(&g, &params, &sites, 8).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.values, c.values);
        }
    }

    #[test]
    fn csv_header() {
        let g = MetricGraph::interval(1.0).unwrap();
        let params = ModelParams::new(1, 1.0, 1.0, 0.0).unwrap();
        let s = simulate_field(&g, &params, &[PointOnEdge::new(0, 0.5)], 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("site_edge,site_offset,value\n0,"));
    }
}
