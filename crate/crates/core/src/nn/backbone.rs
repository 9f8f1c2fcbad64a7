//! Spatial message-passing operators over gated edge lists.
//!
//! All three variants compute `out_v = x_v W_self + agg_v + b`; they differ in
//! how `agg_v` weights incoming messages:
//!
//! * `GcnMean`: gated mean of transformed messages, `sum_e (g_e / deg_v) x_u W_msg`.
//! * `Sage`: gated mean of raw neighbor features, then one transform.
//! * `Gat`: single-head attention, logits `LeakyReLU(a_src.x_u W + a_dst.x_v W) + ln g_e`,
//!   softmax over the incoming edges of `v`.
//!
//! `deg_v` is the sum of incoming gates. When it is zero the gated sum is used
//! unnormalized, so a node with no active incoming edges keeps only its
//! self-transform.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AugmentedGraph, EdgeTypeGates, GatedEdges};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Matrix, SparseAggregation, Tape, TapeMatrix};

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    GcnMean,
    Sage,
    GatSingleHead,
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gcn" | "gcn_mean" => Ok(BackboneKind::GcnMean),
            "sage" | "graphsage" => Ok(BackboneKind::Sage),
            "gat" | "gat_single_head" => Ok(BackboneKind::GatSingleHead),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::GcnMean => "gcn_mean",
            BackboneKind::Sage => "sage",
            BackboneKind::GatSingleHead => "gat_single_head",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub kind: BackboneKind,
    pub dim: usize,
    pub w_msg: ParamId,
    pub w_self: ParamId,
    /// `[2d x 1]`: source half then destination half. GAT only.
    pub attention: Option<ParamId>,
    pub bias: ParamId,
}

impl Backbone {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: BackboneKind,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let w_msg = store.add(format!("{prefix}.w_msg"), Matrix::xavier(dim, dim, rng));
        let w_self = store.add(format!("{prefix}.w_self"), Matrix::xavier(dim, dim, rng));
        let attention = (kind == BackboneKind::GatSingleHead).then(|| {
            store.add(
                format!("{prefix}.attention"),
                Matrix::xavier(2 * dim, 1, rng),
            )
        });
        let bias = store.add(format!("{prefix}.bias"), Matrix::zeros(1, dim));
        Backbone {
            kind,
            dim,
            w_msg,
            w_self,
            attention,
            bias,
        }
    }

    /// Message passing on the augmented graph with per-type gates.
    pub fn message_pass(
        &self,
        tape: &mut Tape,
        p: &Binding,
        gates: &EdgeTypeGates,
        x_aug: &TapeMatrix,
        ag: &AugmentedGraph,
    ) -> Result<TapeMatrix> {
        if x_aug.rows() != ag.num_nodes() {
            return Err(Error::shape(
                "message_pass",
                x_aug.shape(),
                (ag.num_nodes(), self.dim),
            ));
        }
        self.forward(tape, p, x_aug, &ag.gated_edges(gates))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        edges: &GatedEdges,
    ) -> Result<TapeMatrix> {
        if x.rows() != edges.num_nodes || x.cols() != self.dim {
            return Err(Error::shape(
                "backbone",
                x.shape(),
                (edges.num_nodes, self.dim),
            ));
        }
        let self_term = tape.matmul(x, &p[self.w_self])?;
        let agg = match self.kind {
            BackboneKind::GcnMean => {
                let msg = tape.matmul(x, &p[self.w_msg])?;
                tape.spmm(&msg, mean_weights(edges))?
            }
            BackboneKind::Sage => {
                let mean = tape.spmm(x, mean_weights(edges))?;
                tape.matmul(&mean, &p[self.w_msg])?
            }
            BackboneKind::GatSingleHead => self.attend(tape, p, x, edges)?,
        };
        let out = tape.add(&self_term, &agg)?;
        tape.add_row(&out, &p[self.bias])
    }

    fn attend(
        &self,
        tape: &mut Tape,
        p: &Binding,
        x: &TapeMatrix,
        edges: &GatedEdges,
    ) -> Result<TapeMatrix> {
        let n = edges.num_nodes;
        let att = self
            .attention
            .ok_or_else(|| Error::Config("attention backbone without attention vector".into()))?;
        if let Some(g) = edges.gate.iter().find(|g| **g < 0.0) {
            return Err(Error::Config(format!(
                "attention gates must be >= 0, got {g}"
            )));
        }
        let active: Vec<usize> = (0..edges.len()).filter(|&e| edges.gate[e] > 0.0).collect();
        let xw = tape.matmul(x, &p[self.w_msg])?;
        if active.is_empty() {
            return Ok(TapeMatrix::constant(Matrix::zeros(n, self.dim)));
        }
        let src = Arc::new(active.iter().map(|&e| edges.src[e]).collect::<Vec<_>>());
        let dst = Arc::new(active.iter().map(|&e| edges.dst[e]).collect::<Vec<_>>());
        let log_gate = Matrix::column(
            &active
                .iter()
                .map(|&e| edges.gate[e].ln())
                .collect::<Vec<_>>(),
        );

        let a_src = tape.slice_rows(&p[att], 0, self.dim)?;
        let a_dst = tape.slice_rows(&p[att], self.dim, 2 * self.dim)?;
        let s_src = tape.matmul(&xw, &a_src)?;
        let s_dst = tape.matmul(&xw, &a_dst)?;
        let e_src = tape.gather_rows(&s_src, Arc::clone(&src))?;
        let e_dst = tape.gather_rows(&s_dst, Arc::clone(&dst))?;
        let logits = tape.add(&e_src, &e_dst)?;
        let logits = tape.leaky_relu(&logits, GAT_NEGATIVE_SLOPE);
        let logits = tape.add(&logits, &TapeMatrix::constant(log_gate))?;
        let alpha = tape.segment_softmax(&logits, Arc::clone(&dst), n)?;

        let msgs = tape.gather_rows(&xw, src)?;
        let weighted = tape.mul_col(&msgs, &alpha)?;
        tape.scatter_add_rows(&weighted, dst, n)
    }
}

/// Gated mean weights `g_e / deg(dst_e)`, falling back to `g_e` where the
/// gated degree is zero.
pub fn mean_weights(edges: &GatedEdges) -> Arc<SparseAggregation> {
    let deg = edges.in_degree();
    let weight = edges
        .dst
        .iter()
        .zip(&edges.gate)
        .map(|(&d, &g)| if deg[d] != 0.0 { g / deg[d] } else { g })
        .collect();
    Arc::new(SparseAggregation {
        n_in: edges.num_nodes,
        n_out: edges.num_nodes,
        src: edges.src.clone(),
        dst: edges.dst.clone(),
        weight,
    })
}
