use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckReport;
use crate::error::Result;
use crate::graph::{AugmentedGraph, EdgeType, SnapshotGraph};
use crate::nn::{BackboneKind, LayerState, SistLayer};
use crate::params::ParamStore;
use crate::tensor::{Matrix, Tape, TapeMatrix};

/// Threshold on the temporal-message gap between two histories.
pub const DIVERGENCE_THRESHOLD: f64 = 1e-6;

/// Undirected neighborhoods enumerated directly from the edge list.
fn neighborhoods(g: &SnapshotGraph) -> Vec<BTreeSet<usize>> {
    let mut nb = vec![BTreeSet::new(); g.num_nodes()];
    for &(u, v) in g.edges() {
        nb[u].insert(v);
        nb[v].insert(u);
    }
    nb
}

/// Largest `|incoming(u) - (2|N(u)| + 1)|` over the nodes of `g` after
/// symmetrization. With `mutate`, cross-self edges are left out.
pub fn message_count_deviation(g: &SnapshotGraph, mutate: bool) -> Result<usize> {
    let sym = g.symmetrized();
    let mut ag = AugmentedGraph::from_snapshot(&sym);
    if mutate {
        let kept: Vec<_> = ag.edges().filter(|e| e.2 != EdgeType::CrossSelf).collect();
        ag = AugmentedGraph::from_typed_edges(sym.num_nodes(), &kept)?;
    }
    let nb = neighborhoods(g);
    let mut worst = 0;
    for (u, n) in nb.iter().enumerate() {
        let got = ag.incoming_message_count(u)?;
        worst = worst.max(got.abs_diff(2 * n.len() + 1));
    }
    Ok(worst)
}

/// Message-count identity on random symmetrized graphs.
pub fn check_message_counts(graphs: usize, seed: u64, mutate: bool) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0;
    for _ in 0..graphs {
        let n = rng.gen_range(1..=20);
        let m = rng.gen_range(0..=4 * n);
        let edges = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        worst = worst.max(message_count_deviation(
            &SnapshotGraph::new(n, edges)?,
            mutate,
        )?);
    }
    let name = if mutate {
        "message_counts[mutated]"
    } else {
        "message_counts"
    };
    Ok(CheckReport::at_most(name, worst as f64, 0.0, graphs, seed))
}

/// Feeds two one-node histories `(a, c)` and `(b, c)` through the layer's
/// LSTM from zero state. Returns the largest gaps in the projected message
/// `c W_p` and in the temporal summary at the second step.
pub fn history_divergence(
    store: &ParamStore,
    layer: &SistLayer,
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let p = store.constants();
    let zero = LayerState::zeros(1, layer.hidden_dim);
    let mut summaries = Vec::new();
    let mut projected = Vec::new();
    for first in [a, b] {
        let s1 = layer
            .lstm
            .step(&mut tape, &p, &TapeMatrix::constant(first.clone()), &zero)?;
        let x = TapeMatrix::constant(c.clone());
        let s2 = layer.lstm.step(&mut tape, &p, &x, &s1)?;
        summaries.push(s2.h.into_value());
        projected.push(tape.matmul(&x, &p[layer.projection])?.into_value());
    }
    Ok((
        projected[0].max_abs_diff(&projected[1]),
        summaries[0].max_abs_diff(&summaries[1]),
    ))
}

/// Two histories agreeing at `t` and differing at `t - 1`: the projected
/// message must coincide and the temporal message must differ. With `mutate`
/// the LSTM forgets its past (zero recurrent weights, forget gate closed).
pub fn check_message_diversity(seed: u64, mutate: bool) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_in, d_h) = (3, 4);
    let mut store = ParamStore::new();
    let layer = SistLayer::new(
        &mut store,
        "diversity",
        d_in,
        d_h,
        BackboneKind::GcnMean,
        &mut rng,
    );
    if mutate {
        store.set(layer.lstm.w_hh, Matrix::zeros(d_h, 4 * d_h))?;
        let bias = store.get_mut(layer.lstm.bias);
        for j in d_h..2 * d_h {
            bias.set(0, j, -50.0);
        }
    }
    let a = Matrix::uniform(1, d_in, 1.0, &mut rng);
    let b = Matrix::uniform(1, d_in, 1.0, &mut rng);
    let c = Matrix::uniform(1, d_in, 1.0, &mut rng);
    let (proj_gap, temporal_gap) = history_divergence(&store, &layer, &a, &b, &c)?;
    let gap = if proj_gap == 0.0 { temporal_gap } else { 0.0 };
    let name = if mutate {
        "message_diversity[mutated]"
    } else {
        "message_diversity"
    };
    Ok(
        CheckReport::above(name, gap, DIVERGENCE_THRESHOLD, 1, seed).with_note(format!(
            "projected gap {proj_gap:e}, temporal gap {temporal_gap:e}"
        )),
    )
}
