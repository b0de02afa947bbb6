//! Discrete navigation environment: viewpoints, undirected weighted edges,
//! symbolic panoramas and geodesic queries.
//!
//! A [`NavGraph`] is immutable once loaded. Node ids are opaque strings;
//! internally nodes are addressed by dense indices and adjacency lists are
//! kept sorted by neighbor id so every traversal is deterministic.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Region label used by scan annotations for unrecognized areas.
pub const ERROR_REGION: &str = "Error";

const LENGTH_REL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("graph validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown viewpoint id {0:?}")]
    UnknownNode(String),
    #[error("{0:?} and {1:?} are not connected by an edge")]
    NotAnEdge(String, String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (other.x - self.x, other.y - self.y, other.z - self.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Planar bearing towards `other` in degrees: 0 = +y, clockwise positive,
    /// normalized to `[0, 360)`.
    pub fn bearing_to(&self, other: &Position) -> f64 {
        normalize_bearing((other.x - self.x).atan2(other.y - self.y).to_degrees())
    }
}

pub(crate) fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

/// Signed turn from `from` to `to` bearing in `(-180, 180]`; right turns are positive.
pub fn signed_turn(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub id: String,
    pub position: Position,
    pub region: String,
    pub landmarks: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<Vec<f64>>,
}

impl Viewpoint {
    pub fn has_error_region(&self) -> bool {
        self.region == ERROR_REGION
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: String,
    pub b: String,
    pub length: f64,
}

/// One directional view in a panorama. Views produced by [`NavGraph::observe`]
/// are always navigable, so `leads_to` is set on each of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub heading_deg: f64,
    pub elevation_delta: f64,
    pub visible_landmarks: BTreeSet<String>,
    pub visible_region: String,
    pub leads_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub at: String,
    pub region: String,
    pub landmarks: BTreeSet<String>,
    pub views: Vec<View>,
}

impl Panorama {
    /// Navigable sub-list of the panorama.
    pub fn navigable(&self) -> impl Iterator<Item = &View> {
        self.views.iter().filter(|v| v.leads_to.is_some())
    }

    /// Stable content digest, used in episode history and transcript keys.
    pub fn digest(&self) -> String {
        crate::transport::content_hash(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic {
    pub distance: f64,
    pub path: Vec<String>,
}

impl Geodesic {
    pub fn is_reachable(&self) -> bool {
        self.distance.is_finite()
    }
}

/// Shortest distances from one source to every node, indexed by node id.
#[derive(Debug, Clone)]
pub struct DistanceMap<'g> {
    graph: &'g NavGraph,
    dist: Vec<f64>,
    prev: Vec<Option<usize>>,
    source: usize,
}

impl<'g> DistanceMap<'g> {
    pub fn source(&self) -> &str {
        &self.graph.nodes[self.source].id
    }

    pub fn distance(&self, id: &str) -> Result<f64, GraphError> {
        Ok(self.dist[self.graph.index(id)?])
    }

    /// Path from `id` back to the source, i.e. `[id, ..., source]`.
    pub fn path_to_source(&self, id: &str) -> Result<Vec<String>, GraphError> {
        let mut i = self.graph.index(id)?;
        if !self.dist[i].is_finite() {
            return Ok(Vec::new());
        }
        let mut out = vec![self.graph.nodes[i].id.clone()];
        while let Some(p) = self.prev[i] {
            out.push(self.graph.nodes[p].id.clone());
            i = p;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Accept edge lengths that differ from the Euclidean distance between endpoints.
    pub allow_length_override: bool,
}

#[derive(Debug, Deserialize)]
struct RawGraph {
    nodes: Vec<RawNode>,
    #[serde(default)]
    edges: Vec<RawEdge>,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    id: String,
    x: f64,
    y: f64,
    z: f64,
    region: String,
    #[serde(default)]
    landmarks: Vec<String>,
    #[serde(default)]
    descriptor: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
struct RawEdge {
    a: String,
    b: String,
    #[serde(default)]
    length: Option<f64>,
}

#[derive(Debug, Serialize)]
struct GraphFile<'a> {
    nodes: Vec<GraphFileNode<'a>>,
    edges: Vec<GraphFileEdge<'a>>,
}

#[derive(Debug, Serialize)]
struct GraphFileNode<'a> {
    id: &'a str,
    x: f64,
    y: f64,
    z: f64,
    region: &'a str,
    landmarks: &'a BTreeSet<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    descriptor: Option<&'a Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct GraphFileEdge<'a> {
    a: &'a str,
    b: &'a str,
    length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Connectivity graph of viewpoints.
#[derive(Debug, Clone)]
pub struct NavGraph {
    nodes: Vec<Viewpoint>,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    edges: Vec<Edge>,
}

impl NavGraph {
    /// Build a graph from viewpoints and `(a, b, optional length)` edges,
    /// validating every invariant and reporting all violations together.
    pub fn from_parts(
        nodes: Vec<Viewpoint>,
        edges: Vec<(String, String, Option<f64>)>,
        opts: LoadOptions,
    ) -> Result<Self, GraphError> {
        let mut violations = Vec::new();
        let mut index = HashMap::with_capacity(nodes.len());
        let mut descriptor_len = None;
        for (i, vp) in nodes.iter().enumerate() {
            if index.insert(vp.id.clone(), i).is_some() {
                violations.push(format!("duplicate node id {:?}", vp.id));
            }
            if vp.landmarks.iter().any(|l| l.trim().is_empty()) {
                violations.push(format!("node {:?} has an empty landmark tag", vp.id));
            }
            let p = vp.position;
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                violations.push(format!("node {:?} has a non-finite position", vp.id));
            }
            if let Some(d) = &vp.descriptor {
                match descriptor_len {
                    None => descriptor_len = Some(d.len()),
                    Some(n) if n != d.len() => violations.push(format!(
                        "node {:?} descriptor length {} differs from {}",
                        vp.id,
                        d.len(),
                        n
                    )),
                    _ => {}
                }
            }
        }

        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut seen_pairs = BTreeSet::new();
        let mut out_edges = Vec::with_capacity(edges.len());
        for (a, b, length) in edges {
            let (ia, ib) = match (index.get(&a), index.get(&b)) {
                (Some(&ia), Some(&ib)) => (ia, ib),
                (ia, ib) => {
                    if ia.is_none() {
                        violations.push(format!("edge {a:?}-{b:?} references unknown node {a:?}"));
                    }
                    if ib.is_none() {
                        violations.push(format!("edge {a:?}-{b:?} references unknown node {b:?}"));
                    }
                    continue;
                }
            };
            if ia == ib {
                violations.push(format!("self-loop edge on {a:?}"));
                continue;
            }
            let key = (ia.min(ib), ia.max(ib));
            if !seen_pairs.insert(key) {
                violations.push(format!("duplicate edge {a:?}-{b:?}"));
                continue;
            }
            let euclid = nodes[ia].position.distance(&nodes[ib].position);
            let len = match length {
                Some(l) => {
                    if !opts.allow_length_override
                        && (l - euclid).abs() > LENGTH_REL_TOLERANCE * euclid.max(f64::MIN_POSITIVE)
                    {
                        violations.push(format!(
                            "edge {a:?}-{b:?} length {l} differs from euclidean distance {euclid}"
                        ));
                    }
                    l
                }
                None => euclid,
            };
            if !(len > 0.0 && len.is_finite()) {
                violations.push(format!("edge {a:?}-{b:?} has non-positive length {len}"));
                continue;
            }
            adjacency[ia].push((ib, len));
            adjacency[ib].push((ia, len));
            out_edges.push(Edge { a, b, length: len });
        }
        if !violations.is_empty() {
            return Err(GraphError::Validation(violations));
        }
        for adj in &mut adjacency {
            adj.sort_by(|x, y| nodes[x.0].id.cmp(&nodes[y.0].id));
        }
        let flagged = nodes.iter().filter(|n| n.has_error_region()).count();
        if flagged > 0 {
            tracing::warn!(count = flagged, "graph contains viewpoints with an \"Error\" region");
        }
        Ok(Self {
            nodes,
            index,
            adjacency,
            edges: out_edges,
        })
    }

    /// Load a graph file (JSON with `nodes` and `edges`).
    pub fn load<R: Read>(source: R, opts: LoadOptions) -> Result<Self, GraphError> {
        let raw: RawGraph = serde_json::from_reader(source).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let nodes = raw
            .nodes
            .into_iter()
            .map(|n| Viewpoint {
                id: n.id,
                position: Position::new(n.x, n.y, n.z),
                region: n.region,
                landmarks: n.landmarks.into_iter().collect(),
                descriptor: n.descriptor,
            })
            .collect();
        let edges = raw.edges.into_iter().map(|e| (e.a, e.b, e.length)).collect();
        Self::from_parts(nodes, edges, opts)
    }

    pub fn load_path(path: impl AsRef<std::path::Path>, opts: LoadOptions) -> Result<Self, GraphError> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file), opts)
    }

    /// Serialize back into the graph file format, lengths included.
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| GraphFileNode {
                    id: &n.id,
                    x: n.position.x,
                    y: n.position.y,
                    z: n.position.z,
                    region: &n.region,
                    landmarks: &n.landmarks,
                    descriptor: n.descriptor.as_ref(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| GraphFileEdge {
                    a: &e.a,
                    b: &e.b,
                    length: e.length,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization is infallible")
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Viewpoint] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn viewpoint(&self, id: &str) -> Result<&Viewpoint, GraphError> {
        Ok(&self.nodes[self.index(id)?])
    }

    pub(crate) fn index(&self, id: &str) -> Result<usize, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }

    /// Ids of viewpoints whose region is the scan's `"Error"` label.
    pub fn flagged_regions(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.has_error_region())
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Every landmark tag that appears anywhere in the graph.
    pub fn landmark_inventory(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .flat_map(|n| n.landmarks.iter().map(String::as_str))
            .collect()
    }

    /// Every region label that appears in the graph, `"Error"` excluded.
    pub fn region_inventory(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|n| !n.has_error_region())
            .map(|n| n.region.as_str())
            .collect()
    }

    /// Neighbor ids sorted ascending.
    pub fn neighbors(&self, id: &str) -> Result<Vec<&str>, GraphError> {
        let i = self.index(id)?;
        Ok(self.adjacency[i]
            .iter()
            .map(|&(j, _)| self.nodes[j].id.as_str())
            .collect())
    }

    pub fn edge_length(&self, a: &str, b: &str) -> Result<f64, GraphError> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        self.adjacency[ia]
            .iter()
            .find(|&&(j, _)| j == ib)
            .map(|&(_, l)| l)
            .ok_or_else(|| GraphError::NotAnEdge(a.to_string(), b.to_string()))
    }

    pub fn is_edge(&self, a: &str, b: &str) -> bool {
        self.edge_length(a, b).is_ok()
    }

    /// Dijkstra from `source` over the whole graph.
    pub fn distances_from(&self, source: &str) -> Result<DistanceMap<'_>, GraphError> {
        let s = self.index(source)?;
        let n = self.nodes.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[s] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: s });
        while let Some(HeapEntry { dist: d, node: u }) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = Some(u);
                    heap.push(HeapEntry { dist: nd, node: v });
                }
            }
        }
        Ok(DistanceMap {
            graph: self,
            dist,
            prev,
            source: s,
        })
    }

    /// Shortest path from `a` to `b`. Unreachable pairs yield an infinite
    /// distance and an empty path.
    pub fn geodesic(&self, a: &str, b: &str) -> Result<Geodesic, GraphError> {
        self.index(a)?;
        // Rooting the search at `b` lets the predecessor chain read a -> b.
        let map = self.distances_from(b)?;
        let distance = map.distance(a)?;
        let path = map.path_to_source(a)?;
        Ok(Geodesic { distance, path })
    }

    /// Symbolic panorama at `id`: one navigable view per neighbor, sorted by heading.
    pub fn observe(&self, id: &str) -> Result<Panorama, GraphError> {
        let i = self.index(id)?;
        let here = &self.nodes[i];
        let mut views: Vec<View> = self.adjacency[i]
            .iter()
            .map(|&(j, _)| {
                let there = &self.nodes[j];
                View {
                    heading_deg: here.position.bearing_to(&there.position),
                    elevation_delta: there.position.z - here.position.z,
                    visible_landmarks: there.landmarks.clone(),
                    visible_region: there.region.clone(),
                    leads_to: Some(there.id.clone()),
                }
            })
            .collect();
        views.sort_by(|a, b| {
            a.heading_deg
                .total_cmp(&b.heading_deg)
                .then_with(|| a.leads_to.cmp(&b.leads_to))
        });
        Ok(Panorama {
            at: here.id.clone(),
            region: here.region.clone(),
            landmarks: here.landmarks.clone(),
            views,
        })
    }

    pub fn bearing(&self, from: &str, to: &str) -> Result<f64, GraphError> {
        let (a, b) = (self.viewpoint(from)?, self.viewpoint(to)?);
        Ok(a.position.bearing_to(&b.position))
    }

    /// Absolute planar angle in `[0, 180]` between the bearing `prev -> via`
    /// and the bearing `via -> next`.
    pub fn heading_change(&self, prev: &str, via: &str, next: &str) -> Result<f64, GraphError> {
        Ok(self.signed_heading_change(prev, via, next)?.abs())
    }

    /// Like [`heading_change`](Self::heading_change) but signed: right turns positive.
    pub fn signed_heading_change(&self, prev: &str, via: &str, next: &str) -> Result<f64, GraphError> {
        for (a, b) in [(prev, via), (via, next)] {
            if !self.is_edge(a, b) {
                self.index(a)?;
                self.index(b)?;
                return Err(GraphError::NotAnEdge(a.to_string(), b.to_string()));
            }
        }
        let incoming = self.bearing(prev, via)?;
        let outgoing = self.bearing(via, next)?;
        Ok(signed_turn(incoming, outgoing))
    }
}
