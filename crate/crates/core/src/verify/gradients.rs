use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CheckReport;
use crate::error::Result;
use crate::graph::{AugmentedGraph, SnapshotGraph};
use crate::nn::{BackboneKind, Encoder, EncoderConfig, LayerState};
use crate::params::{Binding, ParamStore};
use crate::tensor::{Matrix, Tape, TapeMatrix};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Compares tape gradients of `loss` against central finite differences for
/// every parameter in `store`. Returns `(name, relative error)` per parameter,
/// where the error is `|g_tape - g_fd| / max(|g_tape|, |g_fd|)` in Frobenius
/// norm.
pub fn parameter_gradient_errors<F>(store: &ParamStore, loss: F) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Tape, &Binding) -> Result<TapeMatrix>,
{
    compare(store, &loss, &loss)
}

/// Tape gradients of `analytic` against finite differences of `numeric`.
fn compare<F, G>(store: &ParamStore, analytic: &F, numeric: &G) -> Result<Vec<(String, f64)>>
where
    F: Fn(&mut Tape, &Binding) -> Result<TapeMatrix>,
    G: Fn(&mut Tape, &Binding) -> Result<TapeMatrix>,
{
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let out = analytic(&mut tape, &binding)?;
    let grads = tape.backward(&out)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        Ok(numeric(&mut t, &s.constants())?.value().get(0, 0))
    };

    let mut perturbed = store.clone();
    let mut errors = Vec::with_capacity(store.len());
    for (id, name, value) in store.iter() {
        let tape_grad = grads
            .wrt(&binding[id])
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()));
        let mut fd = Matrix::zeros(value.rows(), value.cols());
        for i in 0..value.len() {
            let orig = value.as_slice()[i];
            perturbed.get_mut(id).as_mut_slice()[i] = orig + FD_STEP;
            let plus = eval(&perturbed)?;
            perturbed.get_mut(id).as_mut_slice()[i] = orig - FD_STEP;
            let minus = eval(&perturbed)?;
            perturbed.get_mut(id).as_mut_slice()[i] = orig;
            fd.as_mut_slice()[i] = (plus - minus) / (2.0 * FD_STEP);
        }
        let diff = tape_grad.zip_map(&fd, |a, b| a - b).frobenius();
        let scale = tape_grad.frobenius().max(fd.frobenius()).max(1e-12);
        errors.push((name.to_string(), diff / scale));
    }
    Ok(errors)
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, m: usize) -> SnapshotGraph {
    let edges = (0..m)
        .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
        .collect();
    SnapshotGraph::new(n, edges).expect("edges in range")
}

/// Gradient check of every parameter of a 2-layer stack (`N = 6`, `d_h = 5`)
/// for each backbone. The loss weights the output and both final states by
/// fixed random matrices, starting from random nonzero states. With `mutate`
/// the analytic pass cuts the tape between the two layers.
pub fn check_gradients(seed: u64, mutate: bool) -> Result<Vec<CheckReport>> {
    let (n, d) = (6, 5);
    let tolerance = 1e-5;
    let mut reports = Vec::new();
    for kind in [
        BackboneKind::GcnMean,
        BackboneKind::Sage,
        BackboneKind::GatSingleHead,
    ] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut config = EncoderConfig::link_prediction(n, d, 2);
        config.backbone = kind;
        let encoder = Encoder::new(&mut store, config, &mut rng)?;
        let g = random_graph(&mut rng, n, 12);
        let ag = AugmentedGraph::from_snapshot(&g);
        let states: Vec<LayerState> = (0..2)
            .map(|_| {
                LayerState::from_values(
                    Matrix::uniform(n, d, 0.5, &mut rng),
                    Matrix::uniform(n, d, 0.5, &mut rng),
                )
            })
            .collect::<Result<_>>()?;
        let weights: Vec<Matrix> = (0..3)
            .map(|_| Matrix::uniform(n, d, 1.0, &mut rng))
            .collect();

        let loss = |tape: &mut Tape, p: &Binding, cut: bool| -> Result<TapeMatrix> {
            let x = p[encoder.embeddings].clone();
            let (z1, _) = encoder.layers[0].forward(tape, p, &x, &ag, &states[0])?;
            let z1 = if cut { z1.detach() } else { z1 };
            let (z, s) = encoder.layers[1].forward(tape, p, &z1, &ag, &states[1])?;
            let mut total = TapeMatrix::constant(Matrix::scalar(0.0));
            for (m, w) in [&z, &s.h, &s.c].into_iter().zip(&weights) {
                let prod = tape.mul(m, &TapeMatrix::constant(w.clone()))?;
                let part = tape.sum(&prod);
                total = tape.add(&total, &part)?;
            }
            Ok(total)
        };

        let intact = |t: &mut Tape, p: &Binding| loss(t, p, false);
        let errors = if mutate {
            compare(
                &store,
                &|t: &mut Tape, p: &Binding| loss(t, p, true),
                &intact,
            )?
        } else {
            compare(&store, &intact, &intact)?
        };
        let (worst_name, worst) = errors.iter().cloned().fold(
            (String::new(), 0.0),
            |acc, (n, e)| if e > acc.1 { (n, e) } else { acc },
        );
        reports.push(
            CheckReport::at_most(
                format!("gradients[{kind}]"),
                worst,
                tolerance,
                errors.len(),
                seed,
            )
            .with_note(format!("worst parameter {worst_name}")),
        );
    }
    Ok(reports)
}
