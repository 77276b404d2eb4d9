//! Compact metric graphs, points on edges, network distance and the graph
//! surgeries used by the precision constructions (loop splitting,
//! subdivision at arbitrary sites, merging of degree-2 vertices).
//!
//! Vertex and edge ids are dense indices assigned at construction. The
//! labels read from JSON are kept on each vertex/edge so that observation
//! files can refer to edges by their external id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = usize;
pub type EdgeId = usize;

/// Relative tolerance under which an offset is identified with an edge end.
pub const ENDPOINT_TOL: f64 = 1e-12;

/// End of an edge. Edge coordinates increase from `Lower` to `Upper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum End {
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub label: i64,
    pub x: Option<f64>,
    pub y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub label: i64,
    pub lower: VertexId,
    pub upper: VertexId,
    pub length: f64,
    pub polyline: Option<Vec<[f64; 2]>>,
}

impl Edge {
    pub fn is_loop(&self) -> bool {
        self.lower == self.upper
    }

    pub fn vertex_at(&self, end: End) -> VertexId {
        match end {
            End::Lower => self.lower,
            End::Upper => self.upper,
        }
    }
}

/// A location `(e, t)` on the graph, with `0 <= t <= length(e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointOnEdge {
    pub edge: EdgeId,
    pub offset: f64,
}

impl PointOnEdge {
    pub fn new(edge: EdgeId, offset: f64) -> Self {
        Self { edge, offset }
    }
}

/// A point resolved against a graph: either a vertex or an edge interior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Location {
    Vertex(VertexId),
    Interior(PointOnEdge),
}

/// Finite undirected metric graph. Parallel edges and loops are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricGraph {
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    incidence: Vec<Vec<(EdgeId, End)>>,
}

impl MetricGraph {
    /// Builds a graph on `n_vertices` vertices from `(lower, upper, length)` triples.
    pub fn new(n_vertices: usize, edges: &[(VertexId, VertexId, f64)]) -> Result<Self> {
        let vertices = (0..n_vertices)
            .map(|i| Vertex {
                label: i as i64,
                x: None,
                y: None,
            })
            .collect();
        let edges = edges
            .iter()
            .enumerate()
            .map(|(i, &(lower, upper, length))| Edge {
                label: i as i64,
                lower,
                upper,
                length,
                polyline: None,
            })
            .collect();
        Self::from_parts(vertices, edges)
    }

    pub fn from_parts(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Result<Self> {
        let n = vertices.len();
        let mut incidence = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            if e.lower >= n || e.upper >= n {
                return Err(Error::InvalidGraph(format!(
                    "edge {} references a missing vertex",
                    e.label
                )));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge {} has non-positive or non-finite length {}",
                    e.label, e.length
                )));
            }
            incidence[e.lower].push((id, End::Lower));
            incidence[e.upper].push((id, End::Upper));
        }
        Ok(Self {
            vertices,
            edges,
            incidence,
        })
    }

    /// The interval `[0, length]` as a single edge between two vertices.
    pub fn interval(length: f64) -> Result<Self> {
        Self::new(2, &[(0, 1, length)])
    }

    /// A circle of the given perimeter: one vertex carrying a loop edge.
    pub fn circle(perimeter: f64) -> Result<Self> {
        Self::new(1, &[(0, 0, perimeter)])
    }

    /// A star with centre vertex 0 and one leaf per arm.
    pub fn star(arm_lengths: &[f64]) -> Result<Self> {
        let edges: Vec<_> = arm_lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| (0, i + 1, l))
            .collect();
        Self::new(arm_lengths.len() + 1, &edges)
    }

    /// A path `0 - 1 - ... - n` with the given edge lengths.
    pub fn path(lengths: &[f64]) -> Result<Self> {
        let edges: Vec<_> = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| (i, i + 1, l))
            .collect();
        Self::new(lengths.len() + 1, &edges)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id]
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[id]
    }

    /// Incident `(edge, end)` pairs. A loop appears twice, once per end.
    pub fn incident(&self, v: VertexId) -> &[(EdgeId, End)] {
        &self.incidence[v]
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.incidence[v].len()
    }

    pub fn total_length(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum()
    }

    pub fn has_loops(&self) -> bool {
        self.edges.iter().any(Edge::is_loop)
    }

    pub fn edge_by_label(&self, label: i64) -> Option<EdgeId> {
        self.edges.iter().position(|e| e.label == label)
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return true;
        }
        let mut seen = vec![false; self.n_vertices()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &(e, end) in &self.incidence[v] {
                let w = self.edges[e].vertex_at(other(end));
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn validate_point(&self, p: &PointOnEdge) -> Result<()> {
        let bad = Error::InvalidPoint {
            edge: p.edge,
            offset: p.offset,
        };
        let Some(e) = self.edges.get(p.edge) else {
            return Err(bad);
        };
        let slack = ENDPOINT_TOL * e.length;
        if !p.offset.is_finite() || p.offset < -slack || p.offset > e.length + slack {
            return Err(bad);
        }
        Ok(())
    }

    /// Resolves a point to a vertex when its offset sits on an edge end.
    pub fn locate(&self, p: &PointOnEdge) -> Result<Location> {
        self.validate_point(p)?;
        let e = &self.edges[p.edge];
        let slack = ENDPOINT_TOL * e.length;
        Ok(if p.offset <= slack {
            Location::Vertex(e.lower)
        } else if p.offset >= e.length - slack {
            Location::Vertex(e.upper)
        } else {
            Location::Interior(*p)
        })
    }

    /// True when two points denote the same location on the graph.
    pub fn same_location(&self, a: &PointOnEdge, b: &PointOnEdge) -> Result<bool> {
        Ok(match (self.locate(a)?, self.locate(b)?) {
            (Location::Vertex(u), Location::Vertex(v)) => u == v,
            (Location::Interior(p), Location::Interior(q)) => {
                p.edge == q.edge
                    && (p.offset - q.offset).abs() <= ENDPOINT_TOL * self.edges[p.edge].length
            }
            _ => false,
        })
    }

    /// The point at a vertex, expressed on its first incident edge.
    pub fn vertex_point(&self, v: VertexId) -> Option<PointOnEdge> {
        self.incidence[v].first().map(|&(e, end)| match end {
            End::Lower => PointOnEdge::new(e, 0.0),
            End::Upper => PointOnEdge::new(e, self.edges[e].length),
        })
    }

    /// Shortest-path distances from a set of weighted vertex sources.
    fn vertex_distances(&self, sources: &[(VertexId, f64)]) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.n_vertices()];
        let mut heap = BinaryHeap::new();
        for &(v, d) in sources {
            if d < dist[v] {
                dist[v] = d;
                heap.push(HeapItem { dist: d, vertex: v });
            }
        }
        while let Some(HeapItem { dist: d, vertex: v }) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(e, end) in &self.incidence[v] {
                let edge = &self.edges[e];
                let w = edge.vertex_at(other(end));
                let nd = d + edge.length;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(HeapItem {
                        dist: nd,
                        vertex: w,
                    });
                }
            }
        }
        dist
    }

    /// Shortest-path distance between two points of the graph.
    pub fn geodesic_distance(&self, a: &PointOnEdge, b: &PointOnEdge) -> Result<f64> {
        self.validate_point(a)?;
        self.validate_point(b)?;
        let ea = &self.edges[a.edge];
        let eb = &self.edges[b.edge];
        let ta = a.offset.clamp(0.0, ea.length);
        let tb = b.offset.clamp(0.0, eb.length);
        let dist = self.vertex_distances(&[(ea.lower, ta), (ea.upper, ea.length - ta)]);
        let mut best = (dist[eb.lower] + tb).min(dist[eb.upper] + eb.length - tb);
        if a.edge == b.edge {
            best = best.min((ta - tb).abs());
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(Error::Unreachable)
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: GraphJson = serde_json::from_str(s)?;
        let mut index = HashMap::new();
        let mut vertices = Vec::with_capacity(raw.vertices.len());
        for v in &raw.vertices {
            if index.insert(v.id, vertices.len()).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate vertex id {}", v.id)));
            }
            vertices.push(Vertex {
                label: v.id,
                x: v.x,
                y: v.y,
            });
        }
        let mut labels = HashMap::new();
        let mut edges = Vec::with_capacity(raw.edges.len());
        for e in raw.edges {
            if labels.insert(e.id, ()).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge id {}", e.id)));
            }
            let lookup = |id: i64| {
                index.get(&id).copied().ok_or_else(|| {
                    Error::InvalidGraph(format!("edge {} references unknown vertex {id}", e.id))
                })
            };
            edges.push(Edge {
                label: e.id,
                lower: lookup(e.u)?,
                upper: lookup(e.v)?,
                length: e.length,
                polyline: e.polyline,
            });
        }
        let g = Self::from_parts(vertices, edges)?;
        if !g.is_connected() {
            return Err(Error::InvalidGraph("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> Result<String> {
        let raw = GraphJson {
            vertices: self
                .vertices
                .iter()
                .map(|v| VertexJson {
                    id: v.label,
                    x: v.x,
                    y: v.y,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    id: e.label,
                    u: self.vertices[e.lower].label,
                    v: self.vertices[e.upper].label,
                    length: e.length,
                    polyline: e.polyline.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&raw)?)
    }
}

fn other(end: End) -> End {
    match end {
        End::Lower => End::Upper,
        End::Upper => End::Lower,
    }
}

#[derive(PartialEq)]
struct HeapItem {
    dist: f64,
    vertex: VertexId,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    vertices: Vec<VertexJson>,
    edges: Vec<EdgeJson>,
}

#[derive(Serialize, Deserialize)]
struct VertexJson {
    id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct EdgeJson {
    id: i64,
    u: i64,
    v: i64,
    length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polyline: Option<Vec<[f64; 2]>>,
}

/// A piece of an old edge laid onto a new edge.
///
/// Old offsets `old_from..=old_to` map to new offsets starting at `new_from`,
/// running backwards along the old edge when `reversed` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub old_edge: EdgeId,
    pub old_from: f64,
    pub old_to: f64,
    pub new_edge: EdgeId,
    pub new_from: f64,
    pub reversed: bool,
}

impl Segment {
    fn forward(&self, t: f64) -> f64 {
        if self.reversed {
            self.new_from + (self.old_to - t)
        } else {
            self.new_from + (t - self.old_from)
        }
    }

    fn inverse(&self, t: f64) -> f64 {
        if self.reversed {
            self.old_to - (t - self.new_from)
        } else {
            self.old_from + (t - self.new_from)
        }
    }

    fn new_to(&self) -> f64 {
        self.new_from + (self.old_to - self.old_from)
    }
}

/// Correspondence between a graph and the result of a surgery on it.
#[derive(Debug, Clone)]
pub struct GraphSurgeryMap {
    by_old_edge: Vec<Vec<Segment>>,
    by_new_edge: Vec<Vec<Segment>>,
    vertex_forward: Vec<Location>,
    vertex_inverse: Vec<Option<VertexId>>,
}

impl GraphSurgeryMap {
    fn from_segments(
        segments: Vec<Segment>,
        n_old_edges: usize,
        n_new_edges: usize,
        vertex_forward: Vec<Location>,
        vertex_inverse: Vec<Option<VertexId>>,
    ) -> Self {
        let mut by_old_edge = vec![Vec::new(); n_old_edges];
        let mut by_new_edge = vec![Vec::new(); n_new_edges];
        for s in segments {
            by_old_edge[s.old_edge].push(s.clone());
            by_new_edge[s.new_edge].push(s);
        }
        for list in &mut by_old_edge {
            list.sort_by(|a, b| a.old_from.total_cmp(&b.old_from));
        }
        for list in &mut by_new_edge {
            list.sort_by(|a, b| a.new_from.total_cmp(&b.new_from));
        }
        Self {
            by_old_edge,
            by_new_edge,
            vertex_forward,
            vertex_inverse,
        }
    }

    /// Image of a point of the original graph.
    pub fn forward(&self, p: &PointOnEdge) -> PointOnEdge {
        let segs = &self.by_old_edge[p.edge];
        let seg = segs
            .iter()
            .find(|s| p.offset <= s.old_to)
            .unwrap_or_else(|| segs.last().expect("every edge has a segment"));
        PointOnEdge::new(seg.new_edge, seg.forward(p.offset.clamp(seg.old_from, seg.old_to)))
    }

    /// Pre-image of a point of the transformed graph.
    pub fn inverse(&self, p: &PointOnEdge) -> PointOnEdge {
        let segs = &self.by_new_edge[p.edge];
        let seg = segs
            .iter()
            .find(|s| p.offset <= s.new_to())
            .unwrap_or_else(|| segs.last().expect("every edge has a segment"));
        PointOnEdge::new(seg.old_edge, seg.inverse(p.offset.clamp(seg.new_from, seg.new_to())))
    }

    /// Where an original vertex ended up: a vertex, or an interior point if merged away.
    pub fn forward_vertex(&self, v: VertexId) -> Location {
        self.vertex_forward[v]
    }

    /// The original vertex behind a new vertex, if it is not a newly inserted one.
    pub fn inverse_vertex(&self, v: VertexId) -> Option<VertexId> {
        self.vertex_inverse[v]
    }

    pub fn segments_of_old_edge(&self, e: EdgeId) -> &[Segment] {
        &self.by_old_edge[e]
    }
}

/// Inserts every site as a vertex and splits loops that carry no site at
/// their midpoint, so that the result has no loop edges.
///
/// Original vertices keep their ids; inserted vertices follow in edge order.
pub fn split_loops_and_subdivide(
    g: &MetricGraph,
    sites: &[PointOnEdge],
) -> Result<(MetricGraph, GraphSurgeryMap)> {
    let mut cuts: Vec<Vec<f64>> = vec![Vec::new(); g.n_edges()];
    for s in sites {
        if let Location::Interior(p) = g.locate(s)? {
            cuts[p.edge].push(p.offset);
        }
    }
    for (e, list) in cuts.iter_mut().enumerate() {
        let len = g.edge(e).length;
        list.sort_by(f64::total_cmp);
        list.dedup_by(|a, b| (*a - *b).abs() <= ENDPOINT_TOL * len);
        if list.is_empty() && g.edge(e).is_loop() {
            list.push(0.5 * len);
        }
    }

    let mut vertices = g.vertices().to_vec();
    let mut vertex_inverse: Vec<Option<VertexId>> = (0..g.n_vertices()).map(Some).collect();
    let mut edges = Vec::new();
    let mut segments = Vec::new();
    let mut next_label = g.edges().iter().map(|e| e.label).max().unwrap_or(-1) + 1;
    let mut next_vertex_label = g.vertices().iter().map(|v| v.label).max().unwrap_or(-1) + 1;
    for (e, edge) in g.edges().iter().enumerate() {
        if cuts[e].is_empty() {
            segments.push(Segment {
                old_edge: e,
                old_from: 0.0,
                old_to: edge.length,
                new_edge: edges.len(),
                new_from: 0.0,
                reversed: false,
            });
            edges.push(edge.clone());
            continue;
        }
        let mut breaks = vec![0.0];
        breaks.extend_from_slice(&cuts[e]);
        breaks.push(edge.length);
        let mut ends = vec![edge.lower];
        for _ in &cuts[e] {
            ends.push(vertices.len());
            vertices.push(Vertex {
                label: next_vertex_label,
                x: None,
                y: None,
            });
            vertex_inverse.push(None);
            next_vertex_label += 1;
        }
        ends.push(edge.upper);
        for i in 0..breaks.len() - 1 {
            segments.push(Segment {
                old_edge: e,
                old_from: breaks[i],
                old_to: breaks[i + 1],
                new_edge: edges.len(),
                new_from: 0.0,
                reversed: false,
            });
            let label = if i == 0 {
                edge.label
            } else {
                next_label += 1;
                next_label - 1
            };
            edges.push(Edge {
                label,
                lower: ends[i],
                upper: ends[i + 1],
                length: breaks[i + 1] - breaks[i],
                polyline: None,
            });
        }
    }
    let n_new_edges = edges.len();
    let out = MetricGraph::from_parts(vertices, edges)?;
    let vertex_forward = (0..g.n_vertices()).map(Location::Vertex).collect();
    let map = GraphSurgeryMap::from_segments(
        segments,
        g.n_edges(),
        n_new_edges,
        vertex_forward,
        vertex_inverse,
    );
    Ok((out, map))
}

#[derive(Clone)]
struct Chain {
    start: VertexId,
    end: VertexId,
    pieces: Vec<(EdgeId, bool)>,
    alive: bool,
}

impl Chain {
    fn reverse(&mut self) {
        std::mem::swap(&mut self.start, &mut self.end);
        self.pieces.reverse();
        for p in &mut self.pieces {
            p.1 = !p.1;
        }
    }
}

/// Removes degree-2 vertices by joining their two edges.
///
/// A cycle of degree-2 vertices collapses to a single loop that keeps one
/// anchor vertex. Vertices are visited in decreasing id order, so vertices
/// appended by a previous subdivision are removed before original ones.
pub fn merge_degree2(g: &MetricGraph) -> Result<(MetricGraph, GraphSurgeryMap)> {
    let mut chains: Vec<Chain> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| Chain {
            start: edge.lower,
            end: edge.upper,
            pieces: vec![(e, false)],
            alive: true,
        })
        .collect();
    // chain ends at each vertex: (chain id, is_start)
    let mut at: Vec<Vec<(usize, bool)>> = vec![Vec::new(); g.n_vertices()];
    for (c, chain) in chains.iter().enumerate() {
        at[chain.start].push((c, true));
        at[chain.end].push((c, false));
    }
    let mut removed = vec![false; g.n_vertices()];
    for v in (0..g.n_vertices()).rev() {
        if at[v].len() != 2 || at[v][0].0 == at[v][1].0 {
            continue;
        }
        let (c1, c1_start) = at[v][0];
        let (c2, c2_start) = at[v][1];
        if c1_start {
            chains[c1].reverse();
        }
        if !c2_start {
            chains[c2].reverse();
        }
        let tail = std::mem::take(&mut chains[c2].pieces);
        let new_end = chains[c2].end;
        chains[c2].alive = false;
        chains[c1].pieces.extend(tail);
        chains[c1].end = new_end;
        removed[v] = true;
        at[v].clear();
        // the far end of c1 may have flipped orientation; rebuild both ends
        let start = chains[c1].start;
        for list in [start, new_end] {
            at[list].retain(|&(c, _)| c != c1 && c != c2);
        }
        at[start].push((c1, true));
        at[new_end].push((c1, false));
    }

    let mut new_id = vec![usize::MAX; g.n_vertices()];
    let mut vertices = Vec::new();
    let mut vertex_inverse = Vec::new();
    for v in 0..g.n_vertices() {
        if !removed[v] {
            new_id[v] = vertices.len();
            vertices.push(g.vertex(v).clone());
            vertex_inverse.push(Some(v));
        }
    }
    let mut alive: Vec<&Chain> = chains.iter().filter(|c| c.alive).collect();
    alive.sort_by_key(|c| c.pieces.iter().map(|p| p.0).min());
    let mut edges = Vec::new();
    let mut segments = Vec::new();
    for chain in alive {
        let new_edge = edges.len();
        let mut offset = 0.0;
        for &(e, reversed) in &chain.pieces {
            let len = g.edge(e).length;
            segments.push(Segment {
                old_edge: e,
                old_from: 0.0,
                old_to: len,
                new_edge,
                new_from: offset,
                reversed,
            });
            offset += len;
        }
        let first = g.edge(chain.pieces[0].0);
        edges.push(Edge {
            label: first.label,
            lower: new_id[chain.start],
            upper: new_id[chain.end],
            length: offset,
            polyline: if chain.pieces.len() == 1 && !chain.pieces[0].1 {
                first.polyline.clone()
            } else {
                None
            },
        });
    }
    let n_new_edges = edges.len();
    let out = MetricGraph::from_parts(vertices, edges)?;
    let mut map = GraphSurgeryMap::from_segments(
        segments,
        g.n_edges(),
        n_new_edges,
        Vec::new(),
        vertex_inverse,
    );
    map.vertex_forward = (0..g.n_vertices())
        .map(|v| {
            if removed[v] {
                let p = g.vertex_point(v).expect("removed vertices have degree 2");
                Location::Interior(map.forward(&p))
            } else {
                Location::Vertex(new_id[v])
            }
        })
        .collect();
    Ok((out, map))
}
