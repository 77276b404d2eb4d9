//! Graph-Laplacian precision `kappa_hat^2 I + D - W` and its distance to the
//! exact `alpha = 1` vertex precision on finely subdivided graphs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{split_loops_and_subdivide, MetricGraph, PointOnEdge};
use crate::kernels::ModelParams;
use crate::precision::assemble_alpha1;
use crate::sparse::{Factor, SparseSymmetric, SymmetricBuilder};

/// Adjacency counts, degrees and the tuning constants of the Laplacian model.
#[derive(Debug, Clone)]
pub struct GraphLaplacianModel {
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub degrees: Vec<f64>,
    pub kappa_hat: f64,
    pub c_hat: f64,
}

impl GraphLaplacianModel {
    /// `c_hat` and `kappa_hat` chosen so that `c_hat * Q_hat` reproduces the
    /// exact precision (up to `2 kappa tau^2`) at degree-2 vertices when all
    /// edges have length `h`.
    pub fn matched(g: &MetricGraph, kappa: f64, h: f64) -> Result<Self> {
        if !(kappa > 0.0 && h > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa {kappa} and h {h} must be positive")));
        }
        let x = kappa * h;
        let c_hat = 1.0 / (2.0 * x.sinh());
        // 2 cosh(x) - 2 without cancellation
        let kappa_hat = 2.0 * (0.5 * x).sinh();
        let mut m = Self::new(g, kappa_hat);
        m.c_hat = c_hat;
        Ok(m)
    }

    pub fn new(g: &MetricGraph, kappa_hat: f64) -> Self {
        let n = g.n_vertices();
        let mut adjacency = vec![Vec::new(); n];
        let mut degrees = vec![0.0; n];
        for e in g.edges() {
            // a loop adds nothing to D - W
            if e.is_loop() {
                continue;
            }
            adjacency[e.lower].push((e.upper, 1.0));
            adjacency[e.upper].push((e.lower, 1.0));
            degrees[e.lower] += 1.0;
            degrees[e.upper] += 1.0;
        }
        Self {
            adjacency,
            degrees,
            kappa_hat,
            c_hat: 1.0,
        }
    }

    pub fn precision(&self) -> Result<SparseSymmetric> {
        let n = self.degrees.len();
        let mut b = SymmetricBuilder::new(n);
        let k2 = self.kappa_hat * self.kappa_hat;
        for i in 0..n {
            b.add(i, i, k2 + self.degrees[i]);
            for &(j, w) in &self.adjacency[i] {
                if j > i {
                    b.add(i, j, -w);
                }
            }
        }
        Ok(b.build())
    }

    /// Diagonal mismatch `c_hat * Q_hat_ii - Q_ii / (2 kappa tau^2)` at a
    /// vertex of degree `d` when every edge has length `h`.
    pub fn diagonal_mismatch(kappa: f64, h: f64, d: f64) -> f64 {
        let c_hat = 1.0 / (2.0 * (kappa * h).sinh());
        1.0 - 0.5 * d - c_hat * (d - 2.0) * (-kappa * h).exp_m1()
    }
}

/// `kappa_hat^2 I + D - W` on the vertices of `g`.
pub fn laplacian_precision(g: &MetricGraph, kappa_hat: f64) -> Result<SparseSymmetric> {
    GraphLaplacianModel::new(g, kappa_hat).precision()
}

/// Subdivision of every edge into `round(length / h)` equal pieces; original
/// vertices keep their ids.
pub fn subdivide_uniform(g: &MetricGraph, h: f64) -> Result<MetricGraph> {
    let shortest = g.edges().iter().map(|e| e.length).fold(f64::INFINITY, f64::min);
    if h.is_nan() || h <= 0.0 || h > shortest * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "step {h} must be positive and at most the shortest edge {shortest}"
        )));
    }
    let mut sites = Vec::new();
    for (e, edge) in g.edges().iter().enumerate() {
        let n = (edge.length / h).round().max(1.0) as usize;
        let he = edge.length / n as f64;
        sites.extend((1..n).map(|k| PointOnEdge::new(e, k as f64 * he)));
    }
    Ok(split_loops_and_subdivide(g, &sites)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianComparison {
    pub h: f64,
    pub kappa_hat: f64,
    pub c_hat: f64,
    /// max |Σ - Σ̂| over pairs of original vertices.
    pub max_abs_diff: f64,
    /// max |c_hat 2κτ² Q̂ - Q| over rows of degree-2 vertices.
    pub degree2_row_error: f64,
    /// Rank-one prediction, when a unique target vertex exists.
    pub sherman_morrison: Option<ShermanMorrison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShermanMorrison {
    pub vertex: usize,
    pub delta: f64,
    /// max |prediction| over original vertices.
    pub predicted_max: f64,
    /// max |observed - predicted| over original vertices.
    pub residual: f64,
}

fn columns(f: &Factor, n: usize, cols: &[usize]) -> Vec<Vec<f64>> {
    cols.iter()
        .map(|&c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            f.solve(&e)
        })
        .collect()
}

/// Compares `Σ = Q^{-1}` with `Σ̂ = (c_hat 2κτ² Q_hat)^{-1}` on the graph
/// subdivided with step `h`.
///
/// At the unique degree-3 vertex `i` (or the unique vertex of degree other
/// than 2) the difference is predicted by the rank-one term
/// `δ / (1 + δ Σ'_ii) Σ'_i Σ'_iᵀ`, where `Σ'` is the exact covariance with the
/// diagonal corrections `δ_j` applied at all other vertices of degree != 2.
/// When `i` is the only such vertex, `Σ' = Σ`.
pub fn scaled_comparison(g: &MetricGraph, params: &ModelParams, h: f64) -> Result<LaplacianComparison> {
    if params.alpha != 1 {
        return Err(Error::UnsupportedAlpha(params.alpha));
    }
    params.validate()?;
    let sub = subdivide_uniform(g, h)?;
    let n = sub.n_vertices();
    let n0 = g.n_vertices();
    let q = assemble_alpha1(&sub, params)?;
    let lap = GraphLaplacianModel::matched(&sub, params.kappa, h)?;
    let scale = 2.0 * params.kappa * params.tau * params.tau;
    let qhat = lap.precision()?.scaled(lap.c_hat * scale);

    let qd = q.to_dense();
    let qhd = qhat.to_dense();
    let mut degree2_row_error: f64 = 0.0;
    for i in (0..n).filter(|&i| sub.degree(i) == 2) {
        for j in 0..n {
            degree2_row_error = degree2_row_error.max((qd[(i, j)] - qhd[(i, j)]).abs());
        }
    }

    let orig: Vec<usize> = (0..n0).collect();
    let sig = columns(&q.factor()?, n, &orig);
    let sig_hat = columns(&qhat.factor()?, n, &orig);
    let mut max_abs_diff: f64 = 0.0;
    for a in 0..n0 {
        for b in 0..n0 {
            max_abs_diff = max_abs_diff.max((sig[a][b] - sig_hat[a][b]).abs());
        }
    }

    let odd: Vec<usize> = (0..n).filter(|&i| sub.degree(i) != 2).collect();
    let deg3: Vec<usize> = odd.iter().copied().filter(|&i| sub.degree(i) == 3).collect();
    let target = match (&deg3[..], &odd[..]) {
        ([i], _) | (_, [i]) => Some(*i),
        _ => None,
    };
    let sherman_morrison = match target {
        Some(i) => {
            let delta_at = |v: usize| scale * GraphLaplacianModel::diagonal_mismatch(params.kappa, h, sub.degree(v) as f64);
            // Q' = Q + δ_j e_j e_jᵀ at every other vertex of degree != 2
            let mut b = SymmetricBuilder::new(n);
            for &j in odd.iter().filter(|&&j| j != i) {
                b.add(j, j, delta_at(j));
            }
            let qp = q.add(&b.build())?;
            let fp = qp.factor()?;
            let col_i = columns(&fp, n, &[i]).pop().expect("one column");
            let sig_p = columns(&fp, n, &orig);
            let delta = delta_at(i);
            let coef = delta / (1.0 + delta * col_i[i]);
            let mut predicted_max: f64 = 0.0;
            let mut residual: f64 = 0.0;
            for a in 0..n0 {
                for b in 0..n0 {
                    let pred = coef * col_i[a] * col_i[b];
                    predicted_max = predicted_max.max(pred.abs());
                    residual = residual.max((sig_p[a][b] - sig_hat[a][b] - pred).abs());
                }
            }
            Some(ShermanMorrison {
                vertex: i,
                delta,
                predicted_max,
                residual,
            })
        }
        None => None,
    };

    Ok(LaplacianComparison {
        h,
        kappa_hat: lap.kappa_hat,
        c_hat: lap.c_hat,
        max_abs_diff,
        degree2_row_error,
        sherman_morrison,
    })
}

/// Writes `h,max_abs_diff,sherman_morrison_pred` rows (empty prediction when
/// there is no unique degree-3 vertex).
pub fn write_comparison_csv<W: std::io::Write>(rows: &[LaplacianComparison], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "max_abs_diff", "sherman_morrison_pred"])?;
    for r in rows {
        w.write_record([
            format!("{:.16e}", r.h),
            format!("{:.16e}", r.max_abs_diff),
            r.sherman_morrison
                .as_ref()
                .map(|s| format!("{:.16e}", s.predicted_max))
                .unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
