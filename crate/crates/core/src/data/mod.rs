//! Snapshot sequences and the ways to obtain them: delimited edge lists,
//! JODIE-layout event streams, the synthetic recurring-edge generator, and a
//! binary cache.

mod cache;
mod edgelist;
mod events;
mod synthetic;

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;
use crate::tensor::Matrix;

pub use cache::{
    read_sequence, read_sequence_file, write_sequence, write_sequence_file, SEQUENCE_MAGIC,
};
pub use edgelist::{ingest_edgelist, parse_edgelist, SnapshotRule, DAY_SECONDS, WEEK_SECONDS};
pub use events::{discretize_events, ingest_events, parse_events, Event, EventStream};
pub use synthetic::{generate_synthetic, SyntheticSequence, SyntheticSpec};

/// Node labels observed in one snapshot: `(node, y)` sorted by node.
pub type SnapshotLabels = Vec<(usize, bool)>;

/// Original identifiers for relabeled nodes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeMap {
    originals: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of `original`, assigning the next free one on first sight.
    pub fn intern(&mut self, original: &str) -> usize {
        if let Some(&i) = self.index.get(original) {
            return i;
        }
        let i = self.originals.len();
        self.originals.push(original.to_string());
        self.index.insert(original.to_string(), i);
        i
    }

    pub fn get(&self, original: &str) -> Option<usize> {
        self.index.get(original).copied()
    }

    pub fn original(&self, id: usize) -> Option<&str> {
        self.originals.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn originals(&self) -> &[String] {
        &self.originals
    }

    pub fn from_originals(originals: Vec<String>) -> Result<Self> {
        let mut map = NodeMap::new();
        for o in &originals {
            if map.index.contains_key(o) {
                return Err(Error::Format(format!("duplicate node identifier {o:?}")));
            }
            map.intern(o);
        }
        Ok(map)
    }
}

/// Ordered snapshots over a fixed node set.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSequence {
    pub num_nodes: usize,
    pub snapshots: Vec<SnapshotGraph>,
    /// Empty, or one entry per snapshot.
    pub labels: Vec<SnapshotLabels>,
    /// `[N x d_f]`
    pub static_features: Option<Matrix>,
    pub delta_hours: Option<f64>,
    pub source_hash: Option<String>,
    pub node_map: Option<NodeMap>,
}

impl SnapshotSequence {
    pub fn new(num_nodes: usize, snapshots: Vec<SnapshotGraph>) -> Result<Self> {
        for (t, g) in snapshots.iter().enumerate() {
            if g.num_nodes() != num_nodes {
                return Err(Error::Config(format!(
                    "snapshot {t} has {} nodes, sequence has {num_nodes}",
                    g.num_nodes()
                )));
            }
        }
        Ok(SnapshotSequence {
            num_nodes,
            snapshots,
            labels: Vec::new(),
            static_features: None,
            delta_hours: None,
            source_hash: None,
            node_map: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<SnapshotLabels>) -> Result<Self> {
        if labels.len() != self.snapshots.len() {
            return Err(Error::Config(format!(
                "{} label sets for {} snapshots",
                labels.len(),
                self.snapshots.len()
            )));
        }
        if let Some(&(v, _)) = labels.iter().flatten().find(|(v, _)| *v >= self.num_nodes) {
            return Err(Error::Domain(format!(
                "labeled node {v} outside {} nodes",
                self.num_nodes
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_static_features(mut self, features: Matrix) -> Result<Self> {
        if features.rows() != self.num_nodes {
            return Err(Error::shape(
                "static_features",
                features.shape(),
                (self.num_nodes, features.cols()),
            ));
        }
        self.static_features = Some(features);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn total_edges(&self) -> usize {
        self.snapshots.iter().map(SnapshotGraph::num_edges).sum()
    }

    pub fn has_labels(&self) -> bool {
        !self.labels.is_empty()
    }

    /// Width of the edge features, 0 when no snapshot carries any.
    pub fn edge_dim(&self) -> usize {
        self.snapshots
            .iter()
            .find_map(|g| g.edge_features.as_ref().map(Matrix::cols))
            .unwrap_or(0)
    }

    pub fn static_dim(&self) -> usize {
        self.static_features.as_ref().map_or(0, Matrix::cols)
    }

    /// Fraction of positive labels over all labeled (node, snapshot) pairs.
    pub fn positive_rate(&self) -> Option<f64> {
        let total: usize = self.labels.iter().map(Vec::len).sum();
        if total == 0 {
            return None;
        }
        let pos = self.labels.iter().flatten().filter(|l| l.1).count();
        Some(pos as f64 / total as f64)
    }
}

/// Hex SHA-256 of everything `r` yields.
pub fn content_hash<R: Read>(mut r: R) -> Result<String> {
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

pub(crate) fn file_hash(path: &Path) -> Result<String> {
    content_hash(std::fs::File::open(path)?)
}

/// Comma unless the first non-empty line has a tab and no comma.
pub(crate) fn detect_delimiter(text: &str) -> u8 {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    if first.contains('\t') && !first.contains(',') {
        b'\t'
    } else {
        b','
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_map_round_trips() {
        let mut m = NodeMap::new();
        let ids: Vec<usize> = ["b", "a", "b", "c"].iter().map(|s| m.intern(s)).collect();
        assert_eq!(ids, vec![0, 1, 0, 2]);
        for i in 0..m.len() {
            assert_eq!(m.get(m.original(i).unwrap()), Some(i));
        }
        assert_eq!(NodeMap::from_originals(m.originals().to_vec()).unwrap(), m);
        assert!(NodeMap::from_originals(vec!["x".into(), "x".into()]).is_err());
    }

    #[test]
    fn delimiter_detection() {
        assert_eq!(detect_delimiter("\n1\t2\t3\n"), b'\t');
        assert_eq!(detect_delimiter("1,2,3"), b',');
        assert_eq!(detect_delimiter("a,b\tc"), b',');
    }

    #[test]
    fn labels_must_cover_every_snapshot() {
        let g = SnapshotGraph::new(3, vec![(0, 1)]).unwrap();
        let s = SnapshotSequence::new(3, vec![g.clone(), g]).unwrap();
        assert!(s.clone().with_labels(vec![vec![]]).is_err());
        assert!(s
            .clone()
            .with_labels(vec![vec![(5, true)], vec![]])
            .is_err());
        let s = s
            .with_labels(vec![vec![(0, true), (1, false)], vec![(2, false)]])
            .unwrap();
        assert!((s.positive_rate().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }
}
