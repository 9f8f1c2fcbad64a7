//! Run configuration: defaults, JSON config files, and flag overlays.

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sist_core::data::SnapshotRule;
use sist_core::graph::EdgeTypeGates;
use sist_core::heads::ClassWeighting;
use sist_core::nn::{Activation, BackboneKind};
use sist_core::optim::AdamConfig;
use sist_core::train::{ModelConfig, Protocol, ProtocolConfig};

use crate::Failure;

pub const LP_HIDDEN_DIM: usize = 128;
pub const NC_HIDDEN_DIM: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Link prediction.
    #[default]
    Lp,
    /// Node classification.
    Nc,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// Cache files by their magic bytes, otherwise edge list for `lp` and
    /// event stream for `nc`.
    #[default]
    Auto,
    Edgelist,
    Events,
    Cache,
}

/// Everything that determines a training run. Serialized as JSON by
/// `--dump-config` and read back by `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub data: Option<PathBuf>,
    pub format: DataFormat,
    pub snapshot_rule: SnapshotRule,
    pub delta_hours: f64,
    /// Unset means fixed-split for `lp` and nc-split for `nc`.
    pub protocol: Option<Protocol>,
    /// Unset means 128 for `lp` and 256 for `nc`.
    pub hidden_dim: Option<usize>,
    pub num_layers: usize,
    pub backbone: BackboneKind,
    pub dropout: f64,
    pub activation: Activation,
    pub gates: EdgeTypeGates,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub inner_epochs: usize,
    pub patience: usize,
    pub eval_negatives: usize,
    pub train_fraction: f64,
    pub nc_train_fraction: f64,
    pub nc_val_fraction: f64,
    pub weighting: ClassWeighting,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let protocol = ProtocolConfig::default();
        RunConfig {
            task: Task::Lp,
            data: None,
            format: DataFormat::Auto,
            snapshot_rule: SnapshotRule::Weekly,
            delta_hours: 6.0,
            protocol: None,
            hidden_dim: None,
            num_layers: model.num_layers,
            backbone: model.backbone,
            dropout: model.dropout,
            activation: model.activation,
            gates: model.gates,
            lr: protocol.adam.lr,
            weight_decay: protocol.adam.weight_decay,
            epochs: protocol.epochs,
            inner_epochs: protocol.inner_epochs,
            patience: protocol.patience,
            eval_negatives: protocol.eval_negatives,
            train_fraction: protocol.train_fraction,
            nc_train_fraction: protocol.nc_train_fraction,
            nc_val_fraction: protocol.nc_val_fraction,
            weighting: protocol.weighting,
            seed: protocol.seed,
            output: None,
            wall_time: true,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Usage)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))
            .map_err(Failure::Usage)
    }

    /// Fills the task-dependent defaults.
    pub fn resolved(mut self) -> RunConfig {
        let (protocol, dim) = match self.task {
            Task::Lp => (Protocol::FixedSplit, LP_HIDDEN_DIM),
            Task::Nc => (Protocol::NcSplit, NC_HIDDEN_DIM),
        };
        self.protocol.get_or_insert(protocol);
        self.hidden_dim.get_or_insert(dim);
        self
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let usage = |msg: String| Err(Failure::Usage(anyhow::anyhow!(msg)));
        match (self.task, self.protocol) {
            (Task::Lp, Some(Protocol::NcSplit)) => {
                return usage("task lp cannot use the nc-split protocol".into())
            }
            (Task::Nc, Some(p)) if p != Protocol::NcSplit => {
                return usage(format!("task nc needs the nc-split protocol, got {p}"))
            }
            _ => {}
        }
        if self.hidden_dim == Some(0) || self.num_layers == 0 {
            return usage("hidden_dim and num_layers must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return usage(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.delta_hours.is_finite() && self.delta_hours > 0.0) {
            return usage(format!("delta {} must be positive", self.delta_hours));
        }
        self.protocol_config()
            .validate()
            .map_err(|e| Failure::Usage(e.into()))?;
        self.gates.validate().map_err(|e| Failure::Usage(e.into()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden_dim: self.hidden_dim.unwrap_or(match self.task {
                Task::Lp => LP_HIDDEN_DIM,
                Task::Nc => NC_HIDDEN_DIM,
            }),
            num_layers: self.num_layers,
            backbone: self.backbone,
            dropout: self.dropout,
            activation: self.activation,
            gates: self.gates,
        }
    }

    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            protocol: self.protocol.unwrap_or(match self.task {
                Task::Lp => Protocol::FixedSplit,
                Task::Nc => Protocol::NcSplit,
            }),
            epochs: self.epochs,
            train_fraction: self.train_fraction,
            nc_train_fraction: self.nc_train_fraction,
            nc_val_fraction: self.nc_val_fraction,
            inner_epochs: self.inner_epochs,
            patience: self.patience,
            eval_negatives: self.eval_negatives,
            seed: self.seed,
            weighting: self.weighting,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
        }
    }
}

/// `intra,cross,self`
pub fn parse_gates(s: &str) -> Result<EdgeTypeGates, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [intra, cross, self_loop] => Ok(EdgeTypeGates::new(intra, cross, self_loop)),
        _ => Err(format!("expected three comma-separated gates, got {s:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        let lp = RunConfig::default().resolved();
        assert_eq!(lp.hidden_dim, Some(128));
        assert_eq!(lp.protocol, Some(Protocol::FixedSplit));
        let nc = RunConfig {
            task: Task::Nc,
            ..Default::default()
        }
        .resolved();
        assert_eq!(nc.hidden_dim, Some(256));
        assert_eq!(nc.protocol, Some(Protocol::NcSplit));
        assert_eq!(nc.delta_hours, 6.0);
        assert_eq!((nc.lr, nc.weight_decay), (1e-3, 1e-5));
        assert_eq!(nc.weighting, ClassWeighting::Balanced);
    }

    #[test]
    fn json_round_trip() {
        let c = RunConfig {
            snapshot_rule: SnapshotRule::FixedCount(40),
            gates: EdgeTypeGates::new(1.0, 0.0, 0.5),
            seed: 4,
            ..Default::default()
        }
        .resolved();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"hiden_dim": 3}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(partial.epochs, 3);
        assert_eq!(partial.num_layers, 2);
    }

    #[test]
    fn protocol_task_mismatch() {
        let c = RunConfig {
            task: Task::Nc,
            protocol: Some(Protocol::LiveUpdate),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            protocol: Some(Protocol::NcSplit),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().resolved().validate().is_ok());
    }

    #[test]
    fn gates_parse() {
        assert_eq!(
            parse_gates("1,0,0").unwrap(),
            EdgeTypeGates::new(1.0, 0.0, 0.0)
        );
        assert!(parse_gates("1,0").is_err());
        assert!(parse_gates("a,b,c").is_err());
    }
}
