use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckReport;
use crate::error::Result;
use crate::graph::SnapshotGraph;
use crate::nn::{BackboneKind, Encoder, EncoderConfig, LayerState, Mode};
use crate::params::ParamStore;
use crate::tensor::{Matrix, Tape, TapeMatrix};

pub const EQUIVARIANCE_TOLERANCE: f64 = 1e-10;

struct Outputs {
    z: Matrix,
    states: Vec<(Matrix, Matrix)>,
}

fn run(
    encoder: &Encoder,
    store: &ParamStore,
    x: &Matrix,
    g: &SnapshotGraph,
    states: &[LayerState],
    mutate: bool,
) -> Result<Outputs> {
    let mut tape = Tape::new();
    let p = store.constants();
    let (z, next) = encoder.forward(
        &mut tape,
        &p,
        &TapeMatrix::constant(x.clone()),
        g,
        states,
        Mode::Eval,
    )?;
    let mut z = z.into_value();
    if mutate {
        // Node-index-dependent offset: breaks equivariance by construction.
        for i in 0..z.rows() {
            for v in z.row_mut(i) {
                *v += 0.01 * i as f64;
            }
        }
    }
    Ok(Outputs {
        z,
        states: next
            .into_iter()
            .map(|s| (s.h.into_value(), s.c.into_value()))
            .collect(),
    })
}

/// Deviation `max |f(pi x) - pi f(x)|` over output and updated states of a
/// 2-layer stack, for one permutation.
pub fn permutation_deviation(
    encoder: &Encoder,
    store: &ParamStore,
    x: &Matrix,
    g: &SnapshotGraph,
    states: &[LayerState],
    perm: &[usize],
    mutate: bool,
) -> Result<f64> {
    let base = run(encoder, store, x, g, states, mutate)?;
    let permuted_states: Vec<_> = states.iter().map(|s| s.permute(perm)).collect();
    let moved = run(
        encoder,
        store,
        &x.permute_rows(perm),
        &g.relabel(perm),
        &permuted_states,
        mutate,
    )?;
    let mut dev = moved.z.max_abs_diff(&base.z.permute_rows(perm));
    for ((h1, c1), (h0, c0)) in moved.states.iter().zip(&base.states) {
        dev = dev
            .max(h1.max_abs_diff(&h0.permute_rows(perm)))
            .max(c1.max_abs_diff(&c0.permute_rows(perm)));
    }
    Ok(dev)
}

/// Random graphs, features, states and permutations with `N` in `[3, 12]`,
/// cycling through the three backbones.
pub fn check_equivariance(trials: usize, seed: u64, mutate: bool) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [
        BackboneKind::GcnMean,
        BackboneKind::Sage,
        BackboneKind::GatSingleHead,
    ];
    let (d_in, d_h) = (4, 5);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = rng.gen_range(3..=12);
        let m = rng.gen_range(0..=3 * n);
        let edges = (0..m)
            .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
            .collect();
        let g = SnapshotGraph::new(n, edges)?;
        let mut store = ParamStore::new();
        let config = EncoderConfig {
            input_dim: d_in,
            backbone: kinds[trial % kinds.len()],
            ..EncoderConfig::link_prediction(n, d_h, 2)
        };
        let encoder = Encoder::new(&mut store, config, &mut rng)?;
        let x = Matrix::uniform(n, d_in, 1.0, &mut rng);
        let states = (0..2)
            .map(|_| {
                LayerState::from_values(
                    Matrix::uniform(n, d_h, 1.0, &mut rng),
                    Matrix::uniform(n, d_h, 1.0, &mut rng),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        if mutate && perm.iter().enumerate().all(|(i, &p)| i == p) {
            perm.rotate_left(1);
        }
        worst = worst.max(permutation_deviation(
            &encoder, &store, &x, &g, &states, &perm, mutate,
        )?);
    }
    let name = if mutate {
        "equivariance[mutated]"
    } else {
        "equivariance"
    };
    Ok(CheckReport::at_most(
        name,
        worst,
        EQUIVARIANCE_TOLERANCE,
        trials,
        seed,
    ))
}
