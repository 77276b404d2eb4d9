//! Global precision matrices on a metric graph.
//!
//! `alpha = 1`: a sparse precision over the vertices, with an exact loop term.
//! `alpha = 2`: a block-diagonal precision over the stacked edge-end vectors
//! `[u(e_lower), u'(e_lower), u(e_upper), u'(e_upper)]` (edges in id order)
//! plus the Kirchhoff vertex conditions as linear constraints.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::constrained::{ConstraintSystem, SparseRow};
use crate::error::{Error, Result};
use crate::graph::{split_loops_and_subdivide, End, GraphSurgeryMap, Location, MetricGraph, PointOnEdge, VertexId};
use crate::kernels::{edge_precision, ModelParams};
use crate::sparse::{SparseSymmetric, SymmetricBuilder};

fn require_alpha(params: &ModelParams, alpha: u32) -> Result<()> {
    params.require_exact()?;
    if params.alpha != alpha {
        return Err(Error::UnsupportedAlpha(params.alpha));
    }
    Ok(())
}

/// Vertex precision for `alpha = 1`. Loops and parallel edges are allowed.
pub fn assemble_alpha1(g: &MetricGraph, params: &ModelParams) -> Result<SparseSymmetric> {
    require_alpha(params, 1)?;
    let blocks: Vec<Result<DMatrix<f64>>> = g
        .edges()
        .par_iter()
        .map(|e| {
            if e.is_loop() {
                let kl = params.kappa * e.length;
                if kl < 1e-8 {
                    return Err(Error::NearSingularEdge(kl));
                }
                // both ends of the edge precision collapse onto one vertex
                let v = 2.0 * params.kappa * params.tau * params.tau * (0.5 * kl).tanh();
                Ok(DMatrix::from_element(1, 1, v))
            } else {
                edge_precision(params, e.length)
            }
        })
        .collect();
    let mut b = SymmetricBuilder::new(g.n_vertices());
    for v in 0..g.n_vertices() {
        // keep the diagonal in the pattern even for isolated vertices
        b.add(v, v, 0.0);
    }
    for (e, block) in g.edges().iter().zip(blocks) {
        let block = block?;
        if e.is_loop() {
            b.add(e.lower, e.lower, block[(0, 0)]);
        } else {
            b.add_block(&[e.lower, e.upper], &block);
        }
    }
    Ok(b.build())
}

/// `alpha = 1` precision with `kappa tau^2` added at every degree-1 vertex,
/// which makes the marginal variance there equal to the stationary one.
pub fn assemble_alpha1_adjusted(g: &MetricGraph, params: &ModelParams) -> Result<SparseSymmetric> {
    let q = assemble_alpha1(g, params)?;
    let mut b = SymmetricBuilder::new(g.n_vertices());
    for v in 0..g.n_vertices() {
        if g.degree(v) == 1 {
            b.add(v, v, params.kappa * params.tau * params.tau);
        }
    }
    q.add(&b.build())
}

/// Position of `u^(deriv)` at the given end of `edge` in the `alpha = 2` vector.
pub fn alpha2_index(edge: usize, end: End, deriv: usize) -> usize {
    4 * edge
        + match end {
            End::Lower => 0,
            End::Upper => 2,
        }
        + deriv
}

/// Kirchhoff rows for `alpha = 2`: per vertex, chained continuity differences
/// of the values and one row summing the outward derivatives (`+u'` at a
/// lower end, `-u'` at an upper end).
pub fn alpha2_constraint_rows(g: &MetricGraph) -> Result<Vec<SparseRow>> {
    let mut rows = Vec::new();
    for v in 0..g.n_vertices() {
        let inc = g.incident(v);
        for &(e, _) in inc {
            if g.edge(e).is_loop() {
                return Err(Error::LoopEdge { edge: e });
            }
        }
        for w in inc.windows(2) {
            rows.push(vec![
                (alpha2_index(w[0].0, w[0].1, 0), 1.0),
                (alpha2_index(w[1].0, w[1].1, 0), -1.0),
            ]);
        }
        if !inc.is_empty() {
            rows.push(
                inc.iter()
                    .map(|&(e, end)| {
                        let sign = if end == End::Lower { 1.0 } else { -1.0 };
                        (alpha2_index(e, end, 1), sign)
                    })
                    .collect(),
            );
        }
    }
    Ok(rows)
}

/// Block-diagonal edge precision and the Kirchhoff constraints for `alpha = 2`.
pub fn assemble_alpha2_system(
    g: &MetricGraph,
    params: &ModelParams,
) -> Result<(SparseSymmetric, ConstraintSystem)> {
    require_alpha(params, 2)?;
    let rows = alpha2_constraint_rows(g)?;
    let blocks: Vec<Result<DMatrix<f64>>> = g
        .edges()
        .par_iter()
        .map(|e| edge_precision(params, e.length))
        .collect();
    let m = 4 * g.n_edges();
    let mut b = SymmetricBuilder::new(m);
    for (e, block) in blocks.into_iter().enumerate() {
        let idx: Vec<usize> = (4 * e..4 * e + 4).collect();
        b.add_block(&idx, &block?);
    }
    let k = rows.len();
    let cons = ConstraintSystem::new(m, rows, vec![0.0; k])?;
    Ok((b.build(), cons))
}

/// A graph with a set of sites inserted as vertices.
#[derive(Debug, Clone)]
pub struct ExtendedGraph {
    pub graph: MetricGraph,
    pub map: GraphSurgeryMap,
    /// Vertex of the extended graph for each requested site (duplicates share one).
    pub site_vertices: Vec<VertexId>,
}

impl ExtendedGraph {
    pub fn new(g: &MetricGraph, sites: &[PointOnEdge]) -> Result<Self> {
        let (graph, map) = split_loops_and_subdivide(g, sites)?;
        let site_vertices = sites
            .iter()
            .map(|s| match graph.locate(&map.forward(s))? {
                Location::Vertex(v) => Ok(v),
                Location::Interior(_) => Err(Error::InvalidGraph(
                    "site was not turned into a vertex".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            graph,
            map,
            site_vertices,
        })
    }
}

/// `alpha = 1` precision of the graph extended by the given sites.
pub fn extended_precision(
    g: &MetricGraph,
    params: &ModelParams,
    sites: &[PointOnEdge],
) -> Result<(SparseSymmetric, ExtendedGraph)> {
    require_alpha(params, 1)?;
    let ext = ExtendedGraph::new(g, sites)?;
    let q = assemble_alpha1(&ext.graph, params)?;
    Ok((q, ext))
}

/// Dense precision of the marginal on `keep`: `Q_ss - Q_sv Q_vv⁻¹ Q_vs`.
pub fn marginal_precision(q: &SparseSymmetric, keep: &[usize]) -> Result<DMatrix<f64>> {
    let mut is_kept = vec![false; q.dim()];
    for &i in keep {
        is_kept[i] = true;
    }
    let rest: Vec<usize> = (0..q.dim()).filter(|&i| !is_kept[i]).collect();
    let q_ss = q.dense_block(keep, keep);
    if rest.is_empty() {
        return Ok(q_ss);
    }
    let q_vs = q.dense_block(&rest, keep);
    let f = q.submatrix(&rest).factor()?;
    Ok(q_ss - q_vs.transpose() * f.solve_mat(&q_vs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p1(kappa: f64, tau: f64) -> ModelParams {
        ModelParams::new(1, kappa, tau, 0.0).unwrap()
    }

    #[test]
    fn single_edge_matches_edge_precision() {
        let g = MetricGraph::interval(1.0).unwrap();
        let q = assemble_alpha1(&g, &p1(1.0, 1.0)).unwrap().to_dense();
        assert_relative_eq!(q[(0, 0)], 1.313035285499331, epsilon = 1e-12);
        assert_relative_eq!(q[(0, 1)], -0.8509181282393216, epsilon = 1e-12);
        assert_relative_eq!(q[(1, 1)], q[(0, 0)], epsilon = 1e-15);
    }

    #[test]
    fn star_center_sums_incident_terms() {
        let g = MetricGraph::star(&[1.0, 1.0, 1.0]).unwrap();
        let q = assemble_alpha1(&g, &p1(1.0, 1.0)).unwrap();
        assert_relative_eq!(q.get(0, 0), 3.0 * 1.313035285499331, epsilon = 1e-12);
        assert_eq!(q.get(1, 2), 0.0);
    }

    #[test]
    fn loop_term_is_tanh() {
        let g = MetricGraph::circle(2.0).unwrap();
        let q = assemble_alpha1(&g, &p1(1.0, 1.0)).unwrap();
        assert_relative_eq!(q.get(0, 0), 2.0 * 1.0f64.tanh(), epsilon = 1e-14);
        // variance then equals the circle variance coth(1)/2
        assert_relative_eq!(1.0 / q.get(0, 0), 0.5 / 1.0f64.tanh(), epsilon = 1e-14);
    }

    #[test]
    fn adjusted_interval_is_stationary() {
        let params = p1(1.7, 0.6);
        let g = MetricGraph::interval(1.3).unwrap();
        let q = assemble_alpha1_adjusted(&g, &params).unwrap();
        let cov = q.factor().unwrap().inverse();
        let stat = params.stationary_variance();
        assert_relative_eq!(cov[(0, 0)], stat, epsilon = 1e-12);
        assert_relative_eq!(cov[(1, 1)], stat, epsilon = 1e-12);
    }

    #[test]
    fn alpha2_requires_split_loops() {
        let g = MetricGraph::circle(1.0).unwrap();
        let params = ModelParams::new(2, 1.0, 1.0, 0.0).unwrap();
        assert!(matches!(
            assemble_alpha2_system(&g, &params),
            Err(Error::LoopEdge { edge: 0 })
        ));
        assert!(matches!(
            assemble_alpha1(&g, &params),
            Err(Error::UnsupportedAlpha(2))
        ));
    }

    #[test]
    fn alpha2_constraint_counts() {
        // two vertices joined by three parallel edges
        let g = MetricGraph::new(2, &[(0, 1, 1.0), (0, 1, 2.0), (0, 1, 0.5)]).unwrap();
        let params = ModelParams::new(2, 1.0, 1.0, 0.0).unwrap();
        let (q, cons) = assemble_alpha2_system(&g, &params).unwrap();
        assert_eq!(q.dim(), 12);
        assert_eq!(cons.n_constraints(), 6);
        let a = cons.a_dense();
        // derivative row at vertex 0 picks u' at the lower ends with + sign
        let krow = a.row(2);
        assert_eq!(krow[1], 1.0);
        assert_eq!(krow[5], 1.0);
        assert_eq!(krow[9], 1.0);
        let krow = a.row(5);
        assert_eq!(krow[3], -1.0);
        assert_eq!(krow[7], -1.0);
        assert_eq!(krow[11], -1.0);
    }

    #[test]
    fn marginal_precision_inverts_to_covariance_block() {
        let g = MetricGraph::star(&[1.0, 0.5, 2.0]).unwrap();
        let q = assemble_alpha1(&g, &p1(2.0, 1.0)).unwrap();
        let cov = q.factor().unwrap().inverse();
        let m = marginal_precision(&q, &[1, 3]).unwrap();
        let sub = DMatrix::from_row_slice(
            2,
            2,
            &[cov[(1, 1)], cov[(1, 3)], cov[(3, 1)], cov[(3, 3)]],
        );
        assert!((m.try_inverse().unwrap() - sub).amax() < 1e-12);
    }

    #[test]
    fn alpha2_interval_matches_neumann_closed_form() {
        use crate::constrained::{constrained_posterior, BlockDiagonal, ConstrainedModel};
        use crate::kernels::closed_form_interval;
        let params = ModelParams::new(2, 1.3, 0.8, 0.0).unwrap();
        let l = 1.7;
        let g = MetricGraph::interval(l).unwrap();
        let (q, cons) = assemble_alpha2_system(&g, &params).unwrap();
        // both ends carry a Neumann row
        assert_eq!(cons.n_constraints(), 2);
        let model = ConstrainedModel::new(
            vec![0.0; 4],
            q,
            sprs::TriMat::new((0, 4)).to_csr(),
            BlockDiagonal::new(vec![]).unwrap(),
            cons,
        )
        .unwrap();
        let cov = constrained_posterior(&model, &[]).unwrap().covariance_dense();
        let want = |s, t| closed_form_interval(&params, l, s, t).unwrap();
        assert_relative_eq!(cov[(0, 0)], want(0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(cov[(0, 2)], want(0.0, l), epsilon = 1e-12);
        assert_relative_eq!(cov[(2, 2)], want(l, l), epsilon = 1e-12);
        assert!(cov[(1, 1)].abs() < 1e-14);
    }
}
