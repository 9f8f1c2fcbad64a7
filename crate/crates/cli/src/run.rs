//! Dataset loading and single training runs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use log::info;
use sist_core::data::{
    discretize_events, ingest_edgelist, ingest_events, read_sequence_file, SnapshotSequence,
    SEQUENCE_MAGIC,
};
use sist_core::train::{
    run_fixed_split, run_live_update, run_nc, Model, Protocol, Recorder, Summary, Trainer,
};

use crate::config::{DataFormat, RunConfig, Task};
use crate::Failure;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.json";

fn is_cache(path: &Path) -> anyhow::Result<bool> {
    let mut head = [0u8; 8];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut read = 0;
    while read < head.len() {
        match f.read(&mut head[read..])? {
            0 => break,
            n => read += n,
        }
    }
    Ok(read == head.len() && &head == SEQUENCE_MAGIC)
}

/// Reads the dataset named by the configuration.
pub fn load_sequence(cfg: &RunConfig) -> Result<SnapshotSequence, Failure> {
    let path = cfg
        .data
        .as_deref()
        .ok_or_else(|| Failure::Usage(anyhow::anyhow!("no dataset given (--data)")))?;
    let format = match cfg.format {
        DataFormat::Auto if is_cache(path).map_err(Failure::Runtime)? => DataFormat::Cache,
        DataFormat::Auto if cfg.task == Task::Nc => DataFormat::Events,
        DataFormat::Auto => DataFormat::Edgelist,
        f => f,
    };
    let seq = match format {
        DataFormat::Cache => read_sequence_file(path)?,
        DataFormat::Edgelist => ingest_edgelist(path, cfg.snapshot_rule)?,
        DataFormat::Events => {
            let (stream, hash) = ingest_events(path)?;
            let mut seq = discretize_events(&stream, cfg.delta_hours)?;
            seq.source_hash = Some(hash);
            seq
        }
        DataFormat::Auto => unreachable!("auto resolved above"),
    };
    info!(
        "{}: {} nodes, {} edges, {} snapshots",
        path.display(),
        seq.num_nodes,
        seq.total_edges(),
        seq.len()
    );
    Ok(seq)
}

pub fn write_config(cfg: &RunConfig, path: &Path) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Runs the configured protocol. Appends records to `metrics.jsonl` in
/// `out_dir` and writes the resolved configuration and the final parameters
/// next to it.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<Summary, Failure> {
    let cfg = cfg.clone().resolved();
    cfg.validate()?;
    let seq = load_sequence(&cfg)?;
    train_on(&cfg, &seq, out_dir)
}

pub fn train_on(
    cfg: &RunConfig,
    seq: &SnapshotSequence,
    out_dir: &Path,
) -> Result<Summary, Failure> {
    let model_cfg = cfg.model_config();
    let protocol = cfg.protocol_config();
    let model = match cfg.task {
        Task::Lp => Model::link_prediction(seq.num_nodes, &model_cfg, cfg.seed)?,
        Task::Nc => Model::node_classification(
            seq.num_nodes,
            seq.static_dim(),
            seq.edge_dim(),
            &model_cfg,
            cfg.seed,
        )?,
    };
    let mut trainer = Trainer::new(model, protocol.adam, cfg.seed);

    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    write_config(cfg, &out_dir.join(CONFIG_FILE))?;
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    let rec = Recorder::with_sink(&mut metrics, cfg.wall_time);
    let out = match protocol.protocol {
        Protocol::FixedSplit => run_fixed_split(&mut trainer, seq, &protocol, rec)?,
        Protocol::LiveUpdate => run_live_update(&mut trainer, seq, &protocol, rec)?,
        Protocol::NcSplit => run_nc(&mut trainer, seq, &protocol, rec)?,
    };

    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let mut w = BufWriter::new(
        File::create(&ckpt).with_context(|| format!("creating {}", ckpt.display()))?,
    );
    trainer.model.store.write_checkpoint(&mut w)?;
    w.flush()?;
    info!("wrote {} and {}", metrics_path.display(), ckpt.display());
    Ok(out.summary)
}

/// Summary line of a metrics file written by [`train`]: its last line.
pub fn read_summary(out_dir: &Path) -> anyhow::Result<Summary> {
    let path: PathBuf = out_dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let last = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .with_context(|| format!("{} is empty", path.display()))?;
    serde_json::from_str(last)
        .with_context(|| format!("last line of {} is not a summary", path.display()))
}
