//! Snapshot graphs and the temporally augmented graph.
//!
//! The augmented graph has `2N` vertices: `0..N` carry projected current
//! features, `N..2N` carry per-node temporal summaries. Its edges are the
//! snapshot edges (intra), one shifted copy `(u+N, v)` of every snapshot edge
//! (cross-neighbor), and one `(u+N, u)` per node (cross-self).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One snapshot with a fixed global node count.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    pub index: usize,
    pub edge_features: Option<Matrix>,
    pub edge_timestamps: Option<Vec<f64>>,
    pub edge_weights: Option<Vec<f64>>,
}

impl SnapshotGraph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if let Some(&(u, v)) = edges
            .iter()
            .find(|&&(u, v)| u >= num_nodes || v >= num_nodes)
        {
            return Err(Error::Domain(format!(
                "edge ({u}, {v}) out of range for {num_nodes} nodes"
            )));
        }
        Ok(SnapshotGraph {
            num_nodes,
            edges,
            index: 0,
            edge_features: None,
            edge_timestamps: None,
            edge_weights: None,
        })
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.edges.len() {
            return Err(Error::shape(
                "edge_features",
                features.shape(),
                (self.edges.len(), features.cols()),
            ));
        }
        self.edge_features = Some(features);
        Ok(self)
    }

    pub fn with_timestamps(mut self, ts: Vec<f64>) -> Result<Self> {
        if ts.len() != self.edges.len() {
            return Err(Error::shape(
                "edge_timestamps",
                (ts.len(), 1),
                (self.edges.len(), 1),
            ));
        }
        self.edge_timestamps = Some(ts);
        Ok(self)
    }

    pub fn with_weights(mut self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.edges.len() {
            return Err(Error::shape(
                "edge_weights",
                (w.len(), 1),
                (self.edges.len(), 1),
            ));
        }
        self.edge_weights = Some(w);
        Ok(self)
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Simple undirected version: every unordered pair once in each
    /// direction, self-loops once, sorted. Per-edge attributes are dropped.
    pub fn symmetrized(&self) -> SnapshotGraph {
        let mut set = BTreeSet::new();
        for &(u, v) in &self.edges {
            set.insert((u, v));
            set.insert((v, u));
        }
        SnapshotGraph {
            num_nodes: self.num_nodes,
            edges: set.into_iter().collect(),
            index: self.index,
            edge_features: None,
            edge_timestamps: None,
            edge_weights: None,
        }
    }

    /// Renames node `u` to `perm[u]`; edge order and attributes are kept.
    pub fn relabel(&self, perm: &[usize]) -> SnapshotGraph {
        assert_eq!(perm.len(), self.num_nodes, "permutation length");
        SnapshotGraph {
            num_nodes: self.num_nodes,
            edges: self
                .edges
                .iter()
                .map(|&(u, v)| (perm[u], perm[v]))
                .collect(),
            index: self.index,
            edge_features: self.edge_features.clone(),
            edge_timestamps: self.edge_timestamps.clone(),
            edge_weights: self.edge_weights.clone(),
        }
    }

    /// Every edge with weight 1, for message passing on the plain snapshot.
    pub fn unit_edges(&self) -> GatedEdges {
        GatedEdges {
            num_nodes: self.num_nodes,
            src: self.edges.iter().map(|e| e.0).collect(),
            dst: self.edges.iter().map(|e| e.1).collect(),
            gate: vec![1.0; self.edges.len()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeType {
    Intra,
    CrossNeighbor,
    CrossSelf,
}

/// Scalar multipliers on each augmented edge class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeGates {
    pub intra: f64,
    pub cross: f64,
    pub self_loop: f64,
}

impl Default for EdgeTypeGates {
    fn default() -> Self {
        EdgeTypeGates::new(1.0, 1.0, 1.0)
    }
}

impl EdgeTypeGates {
    pub const fn new(intra: f64, cross: f64, self_loop: f64) -> Self {
        EdgeTypeGates {
            intra,
            cross,
            self_loop,
        }
    }

    pub fn gate(&self, kind: EdgeType) -> f64 {
        match kind {
            EdgeType::Intra => self.intra,
            EdgeType::CrossNeighbor => self.cross,
            EdgeType::CrossSelf => self.self_loop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.intra, self.cross, self.self_loop]
            .iter()
            .all(|g| g.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Config(format!("non-finite gate in {self:?}")))
        }
    }
}

/// The `2N`-vertex augmented graph with typed edges.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedGraph {
    base_nodes: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    kind: Vec<EdgeType>,
}

impl AugmentedGraph {
    /// Builds the augmented graph: intra block, then cross-neighbor block in
    /// input edge order, then cross-self block in node order.
    pub fn from_snapshot(g: &SnapshotGraph) -> AugmentedGraph {
        let n = g.num_nodes();
        let e = g.num_edges();
        let total = 2 * e + n;
        let mut src = Vec::with_capacity(total);
        let mut dst = Vec::with_capacity(total);
        let mut kind = Vec::with_capacity(total);
        for &(u, v) in g.edges() {
            src.push(u);
            dst.push(v);
            kind.push(EdgeType::Intra);
        }
        for &(u, v) in g.edges() {
            src.push(u + n);
            dst.push(v);
            kind.push(EdgeType::CrossNeighbor);
        }
        for u in 0..n {
            src.push(u + n);
            dst.push(u);
            kind.push(EdgeType::CrossSelf);
        }
        AugmentedGraph {
            base_nodes: n,
            src,
            dst,
            kind,
        }
    }

    /// Hand-built augmented graph over `2 * base_nodes` vertices.
    pub fn from_typed_edges(
        base_nodes: usize,
        edges: &[(usize, usize, EdgeType)],
    ) -> Result<AugmentedGraph> {
        let n2 = 2 * base_nodes;
        if let Some(&(u, v, _)) = edges.iter().find(|e| e.0 >= n2 || e.1 >= n2) {
            return Err(Error::Domain(format!(
                "edge ({u}, {v}) out of range for {n2} nodes"
            )));
        }
        Ok(AugmentedGraph {
            base_nodes,
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            kind: edges.iter().map(|e| e.2).collect(),
        })
    }

    #[inline]
    pub fn base_nodes(&self) -> usize {
        self.base_nodes
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        2 * self.base_nodes
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, EdgeType)> + '_ {
        self.src
            .iter()
            .zip(&self.dst)
            .zip(&self.kind)
            .map(|((&s, &d), &k)| (s, d, k))
    }

    /// Per-vertex sum of the gates of incoming edges.
    pub fn in_degree(&self, gates: &EdgeTypeGates) -> Vec<f64> {
        let mut deg = vec![0.0; self.num_nodes()];
        for (_, d, k) in self.edges() {
            deg[d] += gates.gate(k);
        }
        deg
    }

    /// Number of augmented edges arriving at base vertex `u`.
    pub fn incoming_message_count(&self, u: usize) -> Result<usize> {
        if u >= self.base_nodes {
            return Err(Error::Domain(format!(
                "vertex {u} is not a base vertex (N = {})",
                self.base_nodes
            )));
        }
        Ok(self.dst.iter().filter(|&&d| d == u).count())
    }

    /// Edge list with each edge weighted by its type gate.
    pub fn gated_edges(&self, gates: &EdgeTypeGates) -> GatedEdges {
        GatedEdges {
            num_nodes: self.num_nodes(),
            src: self.src.clone(),
            dst: self.dst.clone(),
            gate: self.kind.iter().map(|&k| gates.gate(k)).collect(),
        }
    }
}

/// Free-function form of [`AugmentedGraph::from_snapshot`].
pub fn augment(g: &SnapshotGraph) -> AugmentedGraph {
    AugmentedGraph::from_snapshot(g)
}

/// Directed edges with a scalar gate each; the input to every backbone.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedEdges {
    pub num_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub gate: Vec<f64>,
}

impl GatedEdges {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn in_degree(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.num_nodes];
        for (&d, &g) in self.dst.iter().zip(&self.gate) {
            deg[d] += g;
        }
        deg
    }
}
