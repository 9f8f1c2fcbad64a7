use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneKind, LayerState, LstmCell};
use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, EdgeTypeGates, SnapshotGraph};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Matrix, Tape, TapeMatrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: &TapeMatrix) -> TapeMatrix {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => x.clone(),
        }
    }
}

/// One joint spatial-temporal layer.
#[derive(Clone, Debug)]
pub struct SistLayer {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub lstm: LstmCell,
    /// `[d_in x d_h]`
    pub projection: ParamId,
    pub backbone: Backbone,
    pub gates: EdgeTypeGates,
    pub activation: Activation,
}

impl SistLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        backbone: BackboneKind,
        rng: &mut R,
    ) -> Self {
        let lstm = LstmCell::new(store, &format!("{prefix}.lstm"), input_dim, hidden_dim, rng);
        let projection = store.add(
            format!("{prefix}.proj"),
            Matrix::xavier(input_dim, hidden_dim, rng),
        );
        let backbone = Backbone::new(
            store,
            &format!("{prefix}.backbone"),
            backbone,
            hidden_dim,
            rng,
        );
        SistLayer {
            input_dim,
            hidden_dim,
            lstm,
            projection,
            backbone,
            gates: EdgeTypeGates::default(),
            activation: Activation::Relu,
        }
    }

    /// Temporal update, then joint message passing over the augmented graph.
    /// Returns the upper-half output and the new state.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        ag: &AugmentedGraph,
        state: &LayerState,
    ) -> Result<(TapeMatrix, LayerState)> {
        let next = self.lstm.step(tape, p, x, state)?;
        let z = self.joint(tape, p, x, &next.h, ag)?;
        Ok((z, next))
    }

    pub fn forward_snapshot(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        g: &SnapshotGraph,
        state: &LayerState,
    ) -> Result<(TapeMatrix, LayerState)> {
        self.forward(tape, p, x, &AugmentedGraph::from_snapshot(g), state)
    }

    /// Projection, stacking over the given temporal summary, message passing,
    /// activation, and the slice back to the first `N` rows.
    pub fn joint(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        summary: &TapeMatrix,
        ag: &AugmentedGraph,
    ) -> Result<TapeMatrix> {
        let n = x.rows();
        if ag.base_nodes() != n || summary.shape() != (n, self.hidden_dim) {
            return Err(Error::shape(
                "sist_layer",
                (ag.base_nodes(), x.cols()),
                summary.shape(),
            ));
        }
        let proj = tape.matmul(x, &p[self.projection])?;
        let x_aug = tape.stack_rows(&proj, summary)?;
        let out = self
            .backbone
            .message_pass(tape, p, &self.gates, &x_aug, ag)?;
        if n == 0 {
            return Ok(TapeMatrix::constant(Matrix::zeros(0, self.hidden_dim)));
        }
        let top = tape.slice_rows(&out, 0, n)?;
        Ok(self.activation.apply(tape, &top))
    }
}
