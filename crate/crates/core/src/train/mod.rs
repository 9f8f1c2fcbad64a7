//! Snapshot training loop and the three evaluation protocols.
//!
//! Link prediction scores the edges of snapshot `t` with embeddings computed
//! from snapshot `t - 1` and the states carried through `t - 2`. Node
//! classification scores the labeled sources of snapshot `t` from the
//! embedding of snapshot `t` itself.

mod link;
mod model;
mod node;
mod record;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::EdgeTypeGates;
use crate::heads::ClassWeighting;
use crate::nn::{Activation, BackboneKind};
use crate::optim::AdamConfig;

pub use link::{eval_negatives_rng, run_fixed_split, run_live_update, OrderGuard};
pub use model::{Model, StepOutcome, Trainer};
pub use node::{run_nc, EarlyStopping, StopDecision};
pub use record::{MetricsRecord, Phase, Recorder, RunOutput, Summary};

/// Guards `floor(fraction * total)` against products like `0.9 * 10` landing
/// just below an integer.
const SPLIT_EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    FixedSplit,
    LiveUpdate,
    NcSplit,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "fixed-split" => Ok(Protocol::FixedSplit),
            "live-update" => Ok(Protocol::LiveUpdate),
            "nc-split" | "nc" => Ok(Protocol::NcSplit),
            other => Err(Error::Config(format!(
                "unknown protocol {other:?} (fixed-split, live-update, nc-split)"
            ))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::FixedSplit => "fixed-split",
            Protocol::LiveUpdate => "live-update",
            Protocol::NcSplit => "nc-split",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    pub epochs: usize,
    pub train_fraction: f64,
    pub nc_train_fraction: f64,
    pub nc_val_fraction: f64,
    /// Inner epochs per revealed snapshot under live update.
    pub inner_epochs: usize,
    pub patience: usize,
    pub eval_negatives: usize,
    pub seed: u64,
    pub weighting: ClassWeighting,
    pub adam: AdamConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            protocol: Protocol::FixedSplit,
            epochs: 100,
            train_fraction: 0.9,
            nc_train_fraction: 0.7,
            nc_val_fraction: 0.15,
            inner_epochs: 10,
            patience: 5,
            eval_negatives: 1000,
            seed: 0,
            weighting: ClassWeighting::Balanced,
            adam: AdamConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} not in (0, 1]")))
            }
        };
        unit("train_fraction", self.train_fraction)?;
        unit("nc_train_fraction", self.nc_train_fraction)?;
        unit("nc_val_fraction", self.nc_val_fraction)?;
        if self.nc_train_fraction + self.nc_val_fraction > 1.0 + SPLIT_EPSILON {
            return Err(Error::Config(
                "node-classification fractions exceed 1".into(),
            ));
        }
        if self.eval_negatives == 0 {
            return Err(Error::Config("eval_negatives must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.epochs == 0 && self.protocol != Protocol::LiveUpdate {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.adam.lr.is_finite() && self.adam.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be >= 0",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// Encoder shape shared by both tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub backbone: BackboneKind,
    pub dropout: f64,
    pub activation: Activation,
    pub gates: EdgeTypeGates,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            num_layers: 2,
            backbone: BackboneKind::GcnMean,
            dropout: 0.1,
            activation: Activation::Relu,
            gates: EdgeTypeGates::default(),
        }
    }
}

/// `floor(fraction * total)` with the split guard.
pub fn split_count(total: usize, fraction: f64) -> usize {
    ((fraction * total as f64) + SPLIT_EPSILON).floor() as usize
}

/// Snapshot counts `(train, eval)` for the fixed split.
pub fn fixed_split_sizes(total: usize, train_fraction: f64) -> (usize, usize) {
    let train = split_count(total, train_fraction).min(total);
    (train, total - train)
}

/// Snapshot counts `(train, validation, test)` for the node-classification split.
pub fn nc_split_sizes(
    total: usize,
    train_fraction: f64,
    val_fraction: f64,
) -> (usize, usize, usize) {
    let train = split_count(total, train_fraction).min(total);
    let val = split_count(total, val_fraction).min(total - train);
    (train, val, total - train - val)
}
