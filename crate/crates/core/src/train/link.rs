use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::mean;
use super::{
    fixed_split_sizes, MetricsRecord, Phase, Protocol, ProtocolConfig, Recorder, RunOutput,
    Summary, Trainer,
};
use crate::data::SnapshotSequence;
use crate::error::{Error, Result};
use crate::heads;
use crate::nn::detach_states;
use crate::tensor::Matrix;

/// Minimum sequence length for the fixed split.
pub const MIN_FIXED_SPLIT_SNAPSHOTS: usize = 10;

const EVAL_SALT: u64 = 0x5157_4556_414c_0001;

/// Negative-sampling stream for evaluating snapshot `t`; independent of
/// everything that happened before.
pub fn eval_negatives_rng(seed: u64, t: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ EVAL_SALT);
    rng.set_stream(t as u64);
    rng
}

fn snapshot_mrr(
    z: &Matrix,
    positives: &[(usize, usize)],
    cfg: &ProtocolConfig,
    t: usize,
) -> Result<Option<f64>> {
    if positives.is_empty() {
        return Ok(None);
    }
    let mut rng = eval_negatives_rng(cfg.seed, t);
    let k = cfg.eval_negatives;
    let negatives = heads::sample_negatives(positives, z.rows(), k, &mut rng)?;
    heads::mrr(z, positives, &negatives, k)
}

/// Enforces that snapshot `t` is evaluated before any update that uses it.
#[derive(Debug, Default)]
pub struct OrderGuard {
    evaluated: Option<usize>,
    updated: Option<usize>,
}

impl OrderGuard {
    pub fn evaluated(&mut self, t: usize) -> Result<()> {
        if self.updated.is_some_and(|u| u >= t) || self.evaluated.is_some_and(|e| e >= t) {
            return Err(Error::Config(format!(
                "snapshot {t} evaluated after its update"
            )));
        }
        self.evaluated = Some(t);
        Ok(())
    }

    pub fn before_update(&mut self, t: usize) -> Result<()> {
        if self.evaluated != Some(t) {
            return Err(Error::Config(format!(
                "update on snapshot {t} before its evaluation"
            )));
        }
        self.updated = Some(t);
        Ok(())
    }
}

fn check_model(trainer: &Trainer, seq: &SnapshotSequence) -> Result<()> {
    if trainer.model.num_nodes() != seq.num_nodes {
        return Err(Error::Config(format!(
            "model has {} nodes, sequence has {}",
            trainer.model.num_nodes(),
            seq.num_nodes
        )));
    }
    Ok(())
}

/// Trains on the first `train_fraction` of snapshots for `epochs` epochs, each
/// from zero states, then replays the whole sequence frozen and reports MRR on
/// every held-out snapshot.
pub fn run_fixed_split(
    trainer: &mut Trainer,
    seq: &SnapshotSequence,
    cfg: &ProtocolConfig,
    mut rec: Recorder<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    check_model(trainer, seq)?;
    let total = seq.len();
    if total < MIN_FIXED_SPLIT_SNAPSHOTS {
        return Err(Error::Config(format!(
            "fixed split needs at least {MIN_FIXED_SPLIT_SNAPSHOTS} snapshots, got {total}"
        )));
    }
    let (n_train, n_eval) = fixed_split_sizes(total, cfg.train_fraction);
    if n_train < 2 || n_eval == 0 {
        return Err(Error::Config(format!(
            "split of {total} snapshots leaves {n_train} for training and {n_eval} for evaluation"
        )));
    }
    let protocol = Protocol::FixedSplit;
    for epoch in 1..=cfg.epochs {
        let mut states = trainer.model.initial_states();
        let mut losses = Vec::new();
        let mut positives = 0;
        for t in 1..n_train {
            let targets = seq.snapshots[t].edges();
            let out = trainer.lp_step(&seq.snapshots[t - 1], &states, targets)?;
            losses.extend(out.loss);
            positives += targets.len();
            states = out.states;
        }
        rec.push(MetricsRecord {
            epoch: Some(epoch),
            loss: mean(&losses),
            positives,
            ..MetricsRecord::new(protocol, Phase::Train)
        })?;
    }

    let mut states = trainer.model.initial_states();
    let mut mrrs = Vec::new();
    for t in 1..total {
        let (z, next) = trainer.embed_eval(&seq.snapshots[t - 1], &states, None)?;
        states = next;
        if t < n_train {
            continue;
        }
        let positives = seq.snapshots[t].edges();
        let mrr = snapshot_mrr(z.value(), positives, cfg, t)?;
        mrrs.extend(mrr);
        rec.push(MetricsRecord {
            snapshot: Some(t),
            mrr,
            positives: positives.len(),
            ..MetricsRecord::new(protocol, Phase::Eval)
        })?;
    }
    rec.finish(Summary {
        mean_mrr: mean(&mrrs),
        epochs_run: cfg.epochs,
        train_snapshots: n_train,
        evaluated_snapshots: n_eval,
        checksum: trainer.model.store.checksum(),
        ..Summary::new(protocol)
    })
}

/// At each snapshot `t >= 1`: score `E_t` with the current parameters, then
/// take `inner_epochs` optimizer steps on `E_t`, then advance the states
/// with the updated parameters.
pub fn run_live_update(
    trainer: &mut Trainer,
    seq: &SnapshotSequence,
    cfg: &ProtocolConfig,
    mut rec: Recorder<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    check_model(trainer, seq)?;
    if seq.len() < 2 {
        return Err(Error::Config(format!(
            "live update needs at least 2 snapshots, got {}",
            seq.len()
        )));
    }
    let protocol = Protocol::LiveUpdate;
    let mut guard = OrderGuard::default();
    let mut states = trainer.model.initial_states();
    let mut mrrs = Vec::new();
    for t in 1..seq.len() {
        let structure = &seq.snapshots[t - 1];
        let positives = seq.snapshots[t].edges();
        let (z, frozen_next) = trainer.embed_eval(structure, &states, None)?;
        let mrr = snapshot_mrr(z.value(), positives, cfg, t)?;
        guard.evaluated(t)?;
        mrrs.extend(mrr);

        let mut losses = Vec::new();
        for _ in 0..cfg.inner_epochs {
            guard.before_update(t)?;
            losses.extend(trainer.lp_step(structure, &states, positives)?.loss);
        }
        states = if cfg.inner_epochs == 0 {
            detach_states(&frozen_next)
        } else {
            detach_states(&trainer.embed_eval(structure, &states, None)?.1)
        };
        rec.push(MetricsRecord {
            snapshot: Some(t),
            mrr,
            loss: mean(&losses),
            positives: positives.len(),
            ..MetricsRecord::new(protocol, Phase::Eval)
        })?;
    }
    rec.finish(Summary {
        mean_mrr: mean(&mrrs),
        epochs_run: cfg.inner_epochs,
        train_snapshots: seq.len() - 1,
        evaluated_snapshots: seq.len() - 1,
        checksum: trainer.model.store.checksum(),
        ..Summary::new(protocol)
    })
}
