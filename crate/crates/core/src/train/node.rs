use super::record::mean;
use super::{
    nc_split_sizes, MetricsRecord, Phase, Protocol, ProtocolConfig, Recorder, RunOutput, Summary,
    Trainer,
};
use crate::data::SnapshotSequence;
use crate::error::{Error, Result};
use crate::metrics;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive scored epochs without a strict
/// improvement. Epochs without a score neither improve nor count.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(f64, usize)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: Option<f64>) -> StopDecision {
        let Some(score) = score else {
            return StopDecision::Continue;
        };
        if self.best.is_none_or(|(b, _)| score > b) {
            self.best = Some((score, epoch));
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// `(score, epoch)` of the best epoch so far.
    pub fn best(&self) -> Option<(f64, usize)> {
        self.best
    }
}

struct Scored {
    scores: Vec<f64>,
    labels: Vec<bool>,
    per_snapshot: Vec<(usize, Option<f64>, usize)>,
}

/// Frozen replay from zero states over `0..end`, scoring the labels of
/// snapshots in `from..end`.
fn replay_scores(
    trainer: &mut Trainer,
    seq: &SnapshotSequence,
    from: usize,
    end: usize,
) -> Result<Scored> {
    let mut states = trainer.model.initial_states();
    let mut out = Scored {
        scores: Vec::new(),
        labels: Vec::new(),
        per_snapshot: Vec::new(),
    };
    let x = seq.static_features.as_ref();
    for t in 0..end {
        let g = &seq.snapshots[t];
        let (z, next) = trainer.embed_eval(g, &states, x)?;
        states = next;
        if t < from {
            continue;
        }
        let labels = &seq.labels[t];
        let sources: Vec<usize> = labels.iter().map(|l| l.0).collect();
        let y: Vec<bool> = labels.iter().map(|l| l.1).collect();
        let s = if sources.is_empty() {
            Vec::new()
        } else {
            trainer.classify_eval(&z, g, &sources)?
        };
        let pos = y.iter().filter(|&&v| v).count();
        out.per_snapshot.push((t, metrics::auc(&s, &y), pos));
        out.scores.extend(s);
        out.labels.extend(y);
    }
    Ok(out)
}

/// Chronological train/validation/test split with early stopping on pooled
/// validation AUC; the test window is scored with the best-validation
/// parameters.
pub fn run_nc(
    trainer: &mut Trainer,
    seq: &SnapshotSequence,
    cfg: &ProtocolConfig,
    mut rec: Recorder<'_>,
) -> Result<RunOutput> {
    cfg.validate()?;
    if !seq.has_labels() {
        return Err(Error::Config("node classification needs labels".into()));
    }
    if trainer.model.readout.is_none() {
        return Err(Error::Config("model has no classification readout".into()));
    }
    let total = seq.len();
    let (n_train, n_val, n_test) =
        nc_split_sizes(total, cfg.nc_train_fraction, cfg.nc_val_fraction);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {total} snapshots into {n_train}/{n_val}/{n_test} leaves a window empty"
        )));
    }
    let protocol = Protocol::NcSplit;
    let x = seq.static_features.as_ref();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best: Option<(ParamStore, String)> = None;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        let mut states = trainer.model.initial_states();
        let mut losses = Vec::new();
        let mut positives = 0;
        for t in 0..n_train {
            let labels = &seq.labels[t];
            let out = trainer.nc_step(&seq.snapshots[t], &states, labels, x, cfg.weighting)?;
            losses.extend(out.loss);
            positives += labels.iter().filter(|l| l.1).count();
            states = out.states;
        }
        rec.push(MetricsRecord {
            epoch: Some(epoch),
            loss: mean(&losses),
            positives,
            ..MetricsRecord::new(protocol, Phase::Train)
        })?;

        let val = replay_scores(trainer, seq, n_train, n_train + n_val)?;
        let auc = metrics::auc(&val.scores, &val.labels);
        rec.push(MetricsRecord {
            epoch: Some(epoch),
            auc,
            positives: val.labels.iter().filter(|&&y| y).count(),
            ..MetricsRecord::new(protocol, Phase::Validation)
        })?;
        match stopper.observe(epoch, auc) {
            StopDecision::Improved => {
                best = Some((trainer.model.store.clone(), trainer.model.store.checksum()));
            }
            StopDecision::Stop => break,
            StopDecision::Continue => {}
        }
    }

    if let Some((store, checksum)) = &best {
        trainer.model.store.load_from(store)?;
        let restored = trainer.model.store.checksum();
        if &restored != checksum {
            return Err(Error::Format(format!(
                "restored parameters {restored} differ from checkpoint {checksum}"
            )));
        }
    }
    let test = replay_scores(trainer, seq, n_train + n_val, total)?;
    for &(t, auc, positives) in &test.per_snapshot {
        rec.push(MetricsRecord {
            snapshot: Some(t),
            auc,
            positives,
            ..MetricsRecord::new(protocol, Phase::Test)
        })?;
    }
    let best_score = stopper.best();
    rec.finish(Summary {
        test_auc: metrics::auc(&test.scores, &test.labels),
        best_epoch: best_score.map(|b| b.1),
        best_validation_auc: best_score.map(|b| b.0),
        epochs_run,
        train_snapshots: n_train,
        evaluated_snapshots: n_test,
        checksum: trainer.model.store.checksum(),
        ..Summary::new(protocol)
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::graph::SnapshotGraph;
    use crate::tensor::Matrix;
    use crate::train::{Model, ModelConfig};

    #[test]
    fn patience_arithmetic() {
        let mut s = EarlyStopping::new(5);
        let seq = [0.6, 0.61, 0.6, 0.6, 0.6, 0.6, 0.6, 0.9];
        let mut stopped = None;
        for (i, &a) in seq.iter().enumerate() {
            if s.observe(i + 1, Some(a)) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(s.best(), Some((0.61, 2)));
    }

    #[test]
    fn absent_scores_do_not_count() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, Some(0.5)), StopDecision::Improved);
        assert_eq!(s.observe(2, None), StopDecision::Continue);
        assert_eq!(s.observe(3, None), StopDecision::Continue);
        assert_eq!(s.observe(4, Some(0.5)), StopDecision::Continue);
        assert_eq!(s.observe(5, Some(0.4)), StopDecision::Stop);
    }

    /// Users 0..8 interact with items 8..12; a user is positive in a window
    /// when it touches item 8.
    fn labeled(t_total: usize, seed: u64) -> SnapshotSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut snapshots = Vec::new();
        let mut labels = Vec::new();
        for t in 0..t_total {
            let mut edges = Vec::new();
            let mut feats = Vec::new();
            let mut l = Vec::new();
            for u in 0..8 {
                if rng.gen_bool(0.6) {
                    let item = 8 + rng.gen_range(0..4);
                    edges.push((u, item));
                    feats.push(if item == 8 { 1.0 } else { 0.0 });
                    l.push((u, item == 8));
                }
            }
            let m = edges.len();
            snapshots.push(
                SnapshotGraph::new(12, edges)
                    .unwrap()
                    .with_index(t)
                    .with_features(Matrix::from_vec(m, 1, feats).unwrap())
                    .unwrap(),
            );
            labels.push(l);
        }
        SnapshotSequence::new(12, snapshots)
            .unwrap()
            .with_labels(labels)
            .unwrap()
    }

    fn nc_trainer(seq: &SnapshotSequence) -> Trainer {
        let cfg = ModelConfig {
            hidden_dim: 8,
            ..Default::default()
        };
        let m = Model::node_classification(seq.num_nodes, 0, seq.edge_dim(), &cfg, 5).unwrap();
        Trainer::new(m, Default::default(), 5)
    }

    #[test]
    fn nc_split_learns_and_restores_best() {
        let seq = labeled(20, 1);
        let cfg = ProtocolConfig {
            protocol: Protocol::NcSplit,
            epochs: 30,
            adam: crate::optim::AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
            ..Default::default()
        };
        let mut tr = nc_trainer(&seq);
        let out = run_nc(&mut tr, &seq, &cfg, Recorder::new(false)).unwrap();
        let s = &out.summary;
        assert_eq!((s.train_snapshots, s.evaluated_snapshots), (14, 3));
        assert!(s.test_auc.unwrap() > 0.9, "{s:?}");
        assert_eq!(
            out.records
                .iter()
                .filter(|r| r.phase == Phase::Test)
                .count(),
            3
        );

        // Training for exactly the best number of epochs reproduces the
        // restored parameters.
        let best = s.best_epoch.unwrap();
        let mut again = nc_trainer(&seq);
        let short = ProtocolConfig {
            epochs: best,
            ..cfg
        };
        run_nc(&mut again, &seq, &short, Recorder::new(false)).unwrap();
        assert_eq!(again.model.store.checksum(), s.checksum);
    }

    #[test]
    fn nc_requires_labels_and_readout() {
        let seq = labeled(20, 2);
        let mut unlabeled = seq.clone();
        unlabeled.labels.clear();
        let cfg = ProtocolConfig {
            protocol: Protocol::NcSplit,
            epochs: 1,
            ..Default::default()
        };
        assert!(run_nc(
            &mut nc_trainer(&seq),
            &unlabeled,
            &cfg,
            Recorder::new(false)
        )
        .is_err());
        let lp = Model::link_prediction(
            12,
            &ModelConfig {
                hidden_dim: 4,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let mut tr = Trainer::new(lp, Default::default(), 0);
        assert!(run_nc(&mut tr, &seq, &cfg, Recorder::new(false)).is_err());
    }
}
