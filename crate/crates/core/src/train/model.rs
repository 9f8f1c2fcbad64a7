use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;
use crate::heads::{self, ClassWeighting, NcReadout};
use crate::nn::{detach_states, Encoder, EncoderConfig, LayerState, Mode};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, TapeMatrix};

/// Encoder plus task parameters in one store.
///
/// The encoder input is `P + 1 c` for learnable embeddings `P` and a
/// learnable row `c` on the constant feature, plus `F W_f` when static node
/// features `F` are present.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    /// `[1 x d_h]`
    pub constant_feature: ParamId,
    /// `[d_f x d_h]`
    pub feature_projection: Option<ParamId>,
    pub readout: Option<NcReadout>,
}

impl Model {
    fn build(
        num_nodes: usize,
        config: &ModelConfig,
        static_dim: usize,
        readout_edge_dim: Option<usize>,
        seed: u64,
    ) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc_config = EncoderConfig {
            backbone: config.backbone,
            dropout: config.dropout,
            activation: config.activation,
            gates: config.gates,
            ..EncoderConfig::link_prediction(num_nodes, config.hidden_dim, config.num_layers)
        };
        let encoder = Encoder::new(&mut store, enc_config, &mut rng)?;
        let d = config.hidden_dim;
        let constant_feature = store.add("input.constant", Matrix::zeros(1, d));
        let feature_projection = (static_dim > 0).then(|| {
            store.add(
                "input.static_projection",
                Matrix::xavier(static_dim, d, &mut rng),
            )
        });
        let readout = readout_edge_dim.map(|d_e| NcReadout::new(&mut store, d, d_e, &mut rng));
        Ok(Model {
            config: config.clone(),
            store,
            encoder,
            constant_feature,
            feature_projection,
            readout,
        })
    }

    pub fn link_prediction(num_nodes: usize, config: &ModelConfig, seed: u64) -> Result<Model> {
        Self::build(num_nodes, config, 0, None, seed)
    }

    pub fn node_classification(
        num_nodes: usize,
        static_dim: usize,
        edge_dim: usize,
        config: &ModelConfig,
        seed: u64,
    ) -> Result<Model> {
        Self::build(num_nodes, config, static_dim, Some(edge_dim), seed)
    }

    pub fn num_nodes(&self) -> usize {
        self.encoder.config.num_nodes
    }

    pub fn initial_states(&self) -> Vec<LayerState> {
        self.encoder.initial_states()
    }

    fn input(
        &self,
        tape: &mut Tape,
        p: &Binding,
        static_features: Option<&Matrix>,
    ) -> Result<TapeMatrix> {
        let x = tape.add_row(&p[self.encoder.embeddings], &p[self.constant_feature])?;
        match (self.feature_projection, static_features) {
            (Some(w), Some(f)) => {
                let fw = tape.matmul(&TapeMatrix::constant(f.clone()), &p[w])?;
                tape.add(&x, &fw)
            }
            (None, None) => Ok(x),
            (Some(_), None) => Err(Error::Config("model expects static node features".into())),
            (None, Some(_)) => Err(Error::Config(
                "model was built without static node features".into(),
            )),
        }
    }

    pub fn embed(
        &self,
        tape: &mut Tape,
        p: &Binding,
        g: &SnapshotGraph,
        states: &[LayerState],
        static_features: Option<&Matrix>,
        mode: Mode<'_>,
    ) -> Result<(TapeMatrix, Vec<LayerState>)> {
        let x = self.input(tape, p, static_features)?;
        self.encoder.forward(tape, p, &x, g, states, mode)
    }

    /// Node-classification logits for the labeled sources of `g`.
    pub fn classify(
        &self,
        tape: &mut Tape,
        p: &Binding,
        z: &TapeMatrix,
        g: &SnapshotGraph,
        sources: &[usize],
    ) -> Result<TapeMatrix> {
        let readout = self
            .readout
            .as_ref()
            .ok_or_else(|| Error::Config("model has no classification readout".into()))?;
        let e = heads::last_edge_features(g, sources, readout.edge_dim);
        readout.forward(tape, p, z, sources, &e)
    }
}

#[derive(Debug)]
pub struct StepOutcome {
    /// Absent when the snapshot had no positives and no update was made.
    pub loss: Option<f64>,
    /// Detached states after this snapshot.
    pub states: Vec<LayerState>,
    pub tape_len: usize,
}

/// Model, optimizer, a reusable tape and the training random stream.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamState,
    tape: Tape,
    rng: ChaCha8Rng,
    /// Tape length of every training step so far.
    pub step_tape_lengths: Vec<usize>,
}

impl Trainer {
    pub fn new(model: Model, adam: AdamConfig, seed: u64) -> Self {
        let optimizer = AdamState::new(&model.store, adam);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Trainer {
            model,
            optimizer,
            tape: Tape::new(),
            rng,
            step_tape_lengths: Vec::new(),
        }
    }

    fn finish_step(
        &mut self,
        loss: Option<TapeMatrix>,
        p: &Binding,
        next: &[LayerState],
    ) -> Result<StepOutcome> {
        let value = match loss {
            Some(loss) => {
                let grads = self.tape.backward(&loss)?;
                self.optimizer.step(&mut self.model.store, p, &grads)?;
                Some(loss.value().get(0, 0))
            }
            None => None,
        };
        let tape_len = self.tape.len();
        self.step_tape_lengths.push(tape_len);
        Ok(StepOutcome {
            loss: value,
            states: detach_states(next),
            tape_len,
        })
    }

    /// One optimizer step on the margin loss of `targets`, scored with
    /// embeddings of `structure` from `states`.
    pub fn lp_step(
        &mut self,
        structure: &SnapshotGraph,
        states: &[LayerState],
        targets: &[(usize, usize)],
    ) -> Result<StepOutcome> {
        self.tape.reset();
        let p = self.model.store.bind(&mut self.tape);
        let (z, next) = self.model.embed(
            &mut self.tape,
            &p,
            structure,
            states,
            None,
            Mode::Train(&mut self.rng),
        )?;
        let loss = if targets.is_empty() {
            None
        } else {
            let negatives =
                heads::sample_negatives(targets, self.model.num_nodes(), 1, &mut self.rng)?;
            Some(heads::margin_loss(&mut self.tape, &z, targets, &negatives)?.loss)
        };
        self.finish_step(loss, &p, &next)
    }

    /// One optimizer step on the weighted BCE of the labels of `g`.
    pub fn nc_step(
        &mut self,
        g: &SnapshotGraph,
        states: &[LayerState],
        labels: &[(usize, bool)],
        static_features: Option<&Matrix>,
        weighting: ClassWeighting,
    ) -> Result<StepOutcome> {
        self.tape.reset();
        let p = self.model.store.bind(&mut self.tape);
        let (z, next) = self.model.embed(
            &mut self.tape,
            &p,
            g,
            states,
            static_features,
            Mode::Train(&mut self.rng),
        )?;
        let loss = if labels.is_empty() {
            None
        } else {
            let sources: Vec<usize> = labels.iter().map(|l| l.0).collect();
            let y: Vec<bool> = labels.iter().map(|l| l.1).collect();
            let logits = self.model.classify(&mut self.tape, &p, &z, g, &sources)?;
            Some(heads::weighted_bce(&mut self.tape, &logits, &y, weighting)?.loss)
        };
        self.finish_step(loss, &p, &next)
    }

    /// Frozen forward: embeddings and the next states, nothing recorded.
    pub fn embed_eval(
        &mut self,
        g: &SnapshotGraph,
        states: &[LayerState],
        static_features: Option<&Matrix>,
    ) -> Result<(TapeMatrix, Vec<LayerState>)> {
        self.tape.reset();
        let p = self.model.store.constants();
        self.model
            .embed(&mut self.tape, &p, g, states, static_features, Mode::Eval)
    }

    /// Frozen logits for `sources` of `g`.
    pub fn classify_eval(
        &mut self,
        z: &TapeMatrix,
        g: &SnapshotGraph,
        sources: &[usize],
    ) -> Result<Vec<f64>> {
        let p = self.model.store.constants();
        let logits = self.model.classify(&mut self.tape, &p, z, g, sources)?;
        Ok(logits.value().as_slice().to_vec())
    }
}
