use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SnapshotSequence;
use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;

/// Recurring-edge generator settings.
///
/// Sources are the lower half of the node ids, taken round-robin; each base
/// edge points to a tail in the upper half. Base set `p` is active on
/// snapshots `t` with `t mod period == p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub period: usize,
    pub edges_per_snapshot: usize,
    /// Probability that an active base edge appears.
    pub recurrence: f64,
    /// Uniform noise edges per snapshot as a fraction of `edges_per_snapshot`.
    pub noise_rate: f64,
    pub num_snapshots: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_nodes: 50,
            period: 2,
            edges_per_snapshot: 25,
            recurrence: 1.0,
            noise_rate: 0.0,
            num_snapshots: 200,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn sources(&self) -> usize {
        self.num_nodes / 2
    }

    /// Distinct (source, tail) pairs available to one base set.
    pub fn capacity(&self) -> usize {
        self.sources() * (self.num_nodes - self.sources())
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(Error::Domain(format!(
                "need at least 2 nodes, got {}",
                self.num_nodes
            )));
        }
        if self.period == 0 {
            return Err(Error::Domain("period must be at least 1".into()));
        }
        if self.edges_per_snapshot > self.capacity() {
            return Err(Error::Domain(format!(
                "{} edges per snapshot exceed the {} available source-tail pairs",
                self.edges_per_snapshot,
                self.capacity()
            )));
        }
        if !(0.0..=1.0).contains(&self.recurrence) {
            return Err(Error::Domain(format!(
                "recurrence {} not in [0, 1]",
                self.recurrence
            )));
        }
        if !(self.noise_rate.is_finite() && self.noise_rate >= 0.0) {
            return Err(Error::Domain(format!(
                "noise rate {} must be >= 0",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// Generated sequence with its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub sequence: SnapshotSequence,
    /// One base edge set per phase.
    pub base_sets: Vec<Vec<(usize, usize)>>,
    /// `recurred[t][i]`: whether base edge `i` of phase `t mod period` appeared.
    pub recurred: Vec<Vec<bool>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.sources();
    let upper: Vec<usize> = (h..spec.num_nodes).collect();
    // Each source keeps only the prefix of its shuffle that the base set reads.
    let used = spec.edges_per_snapshot.div_ceil(h);
    let mut buf = upper.clone();
    let base_sets: Vec<Vec<(usize, usize)>> = (0..spec.period)
        .map(|_| {
            let tails: Vec<Vec<usize>> = (0..h)
                .map(|_| {
                    buf.copy_from_slice(&upper);
                    buf.shuffle(&mut rng);
                    buf[..used].to_vec()
                })
                .collect();
            (0..spec.edges_per_snapshot)
                .map(|i| (i % h, tails[i % h][i / h]))
                .collect()
        })
        .collect();
    let noise = (spec.noise_rate * spec.edges_per_snapshot as f64).round() as usize;
    let mut snapshots = Vec::with_capacity(spec.num_snapshots);
    let mut recurred = Vec::with_capacity(spec.num_snapshots);
    for t in 0..spec.num_snapshots {
        let base = &base_sets[t % spec.period];
        let mask: Vec<bool> = base.iter().map(|_| rng.gen_bool(spec.recurrence)).collect();
        let mut edges: Vec<_> = base
            .iter()
            .zip(&mask)
            .filter(|p| *p.1)
            .map(|p| *p.0)
            .collect();
        for _ in 0..noise {
            let u = rng.gen_range(0..spec.num_nodes);
            let mut v = rng.gen_range(0..spec.num_nodes - 1);
            if v >= u {
                v += 1;
            }
            edges.push((u, v));
        }
        snapshots.push(SnapshotGraph::new(spec.num_nodes, edges)?.with_index(t));
        recurred.push(mask);
    }
    Ok(SyntheticSequence {
        sequence: SnapshotSequence::new(spec.num_nodes, snapshots)?,
        base_sets,
        recurred,
    })
}
