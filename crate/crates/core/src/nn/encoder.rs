use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, BackboneKind, LayerState, SistLayer};
use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, EdgeTypeGates, SnapshotGraph};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, TapeMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_nodes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub backbone: BackboneKind,
    pub dropout: f64,
    pub activation: Activation,
    pub gates: EdgeTypeGates,
}

impl EncoderConfig {
    pub fn link_prediction(num_nodes: usize, hidden_dim: usize, num_layers: usize) -> Self {
        EncoderConfig {
            num_nodes,
            input_dim: hidden_dim,
            hidden_dim,
            num_layers,
            backbone: BackboneKind::GcnMean,
            dropout: 0.1,
            activation: Activation::Relu,
            gates: EdgeTypeGates::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} not in [0, 1)",
                self.dropout
            )));
        }
        self.gates.validate()
    }
}

pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

/// `L` stacked layers, each with its own parameters and recurrent state, plus
/// learnable per-node embeddings.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub layers: Vec<SistLayer>,
    /// `[N x d_h]`
    pub embeddings: ParamId,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let d_in = if l == 0 {
                config.input_dim
            } else {
                config.hidden_dim
            };
            let mut layer = SistLayer::new(
                store,
                &format!("encoder.layer{l}"),
                d_in,
                config.hidden_dim,
                config.backbone,
                rng,
            );
            layer.gates = config.gates;
            layer.activation = config.activation;
            layers.push(layer);
        }
        let d = config.hidden_dim;
        let embeddings = store.add(
            "encoder.embeddings",
            Matrix::uniform(config.num_nodes, d, (3.0 / d as f64).sqrt(), rng),
        );
        Ok(Encoder {
            config,
            layers,
            embeddings,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn initial_states(&self) -> Vec<LayerState> {
        self.layers
            .iter()
            .map(|l| LayerState::zeros(self.config.num_nodes, l.hidden_dim))
            .collect()
    }

    /// Runs the stack on `input`. Dropout sits between consecutive layers and
    /// is active only in [`Mode::Train`].
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        input: &TapeMatrix,
        g: &SnapshotGraph,
        states: &[LayerState],
        mut mode: Mode<'_>,
    ) -> Result<(TapeMatrix, Vec<LayerState>)> {
        if states.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "{} states for {} layers",
                states.len(),
                self.layers.len()
            )));
        }
        if g.num_nodes() != self.config.num_nodes {
            return Err(Error::Config(format!(
                "snapshot has {} nodes, encoder expects {}",
                g.num_nodes(),
                self.config.num_nodes
            )));
        }
        let ag = AugmentedGraph::from_snapshot(g);
        let mut x = input.clone();
        let mut next = Vec::with_capacity(states.len());
        for (l, (layer, state)) in self.layers.iter().zip(states).enumerate() {
            if l > 0 {
                if let Mode::Train(rng) = &mut mode {
                    x = dropout(tape, &x, self.config.dropout, rng)?;
                }
            }
            let (z, s) = layer.forward(tape, p, &x, &ag, state)?;
            next.push(s);
            x = z;
        }
        Ok((x, next))
    }

    /// Forward with the learnable embeddings as input.
    pub fn forward_embeddings(
        &self,
        tape: &mut Tape,
        p: &Binding,
        g: &SnapshotGraph,
        states: &[LayerState],
        mode: Mode<'_>,
    ) -> Result<(TapeMatrix, Vec<LayerState>)> {
        let input = p[self.embeddings].clone();
        self.forward(tape, p, &input, g, states, mode)
    }
}

/// Inverted dropout with a fresh mask per call.
pub fn dropout<R: Rng + ?Sized>(
    tape: &mut Tape,
    x: &TapeMatrix,
    rate: f64,
    rng: &mut R,
) -> Result<TapeMatrix> {
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mask = Matrix::from_vec(
        x.rows(),
        x.cols(),
        (0..x.value().len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect(),
    )?;
    tape.mul(x, &TapeMatrix::constant(mask))
}
