//! `sist`: ingestion, training, verification and sweeps from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure or failed verification,
//! 2 on usage and configuration errors.

mod config;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sist_core::data::{generate_synthetic, write_sequence_file, SnapshotRule, SyntheticSpec};
use sist_core::graph::EdgeTypeGates;
use sist_core::heads::ClassWeighting;
use sist_core::nn::BackboneKind;
use sist_core::train::Protocol;
use sist_core::verify::{self, Suite};

use config::{parse_gates, DataFormat, RunConfig, Task};

/// Environment override for the output directory.
pub const OUTPUT_DIR_ENV: &str = "SIST_OUTPUT_DIR";
const DEFAULT_OUTPUT_DIR: &str = "runs";

#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<sist_core::Error> for Failure {
    fn from(e: sist_core::Error) -> Self {
        match e {
            sist_core::Error::Config(_) => Failure::Usage(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "sist",
    version,
    about = "Joint spatial-temporal message passing on snapshot graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Train(TrainArgs),
    /// Run the structural verification checks.
    Verify(VerifyArgs),
    /// Repeat a training run over the values of one axis.
    Sweep(SweepArgs),
    /// Parse a dataset and write it as a snapshot cache.
    Ingest(IngestArgs),
    /// Write a synthetic recurring-edge sequence as a snapshot cache.
    Generate(GenerateArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the resolved configuration here and exit.
    #[arg(long)]
    dump_config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<DataFormat>,
    /// weekly, daily or fixed_count:<n>, for edge lists.
    #[arg(long)]
    snapshot_rule: Option<SnapshotRule>,
    /// Snapshot width in hours, for event streams.
    #[arg(long)]
    delta: Option<f64>,
    /// fixed-split, live-update or nc-split.
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Hidden dimension d_h.
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Number of layers L.
    #[arg(long)]
    layers: Option<usize>,
    /// gcn_mean, sage or gat_single_head.
    #[arg(long)]
    backbone: Option<BackboneKind>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Edge-type gates as intra,cross,self.
    #[arg(long, value_parser = parse_gates)]
    gates: Option<EdgeTypeGates>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Live-update inner epochs K per snapshot.
    #[arg(long)]
    inner_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Sampled negatives per positive at evaluation.
    #[arg(long)]
    eval_negatives: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// none, sqrt or balanced.
    #[arg(long)]
    weighting: Option<ClassWeighting>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Overrides SIST_OUTPUT_DIR and the config file.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Record wall_ms as 0 so metrics files are byte-comparable.
    #[arg(long)]
    no_wall_time: bool,
}

impl TrainArgs {
    /// Defaults, then the config file, then flags.
    fn to_config(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! overlay {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag.clone() { c.$field = v; })*
            };
        }
        overlay!(
            task => task, format => format, snapshot_rule => snapshot_rule, delta => delta_hours,
            layers => num_layers, backbone => backbone, dropout => dropout, gates => gates, lr => lr,
            weight_decay => weight_decay, epochs => epochs, inner_epochs => inner_epochs,
            patience => patience, eval_negatives => eval_negatives, train_fraction => train_fraction,
            weighting => weighting, seed => seed,
        );
        if self.data.is_some() {
            c.data = self.data.clone();
        }
        if self.protocol.is_some() {
            c.protocol = self.protocol;
        }
        if self.hidden_dim.is_some() {
            c.hidden_dim = self.hidden_dim;
        }
        if self.output.is_some() {
            c.output = self.output.clone();
        }
        if self.no_wall_time {
            c.wall_time = false;
        }
        let c = c.resolved();
        c.validate()?;
        Ok(c)
    }

    /// Flag, then environment, then config file, then `runs`.
    fn output_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// all, equivariance, reductions, witness, diversity or gradients.
    #[arg(default_value = "all")]
    suite: Suite,
    /// Run against deliberately broken configurations; every check should fail.
    #[arg(long)]
    mutate: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: sweep::Axis,
    /// Comma-separated values of the axis.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
    /// Run each value in its own process, at most this many at once
    /// (all at once when given without a number).
    #[arg(long, num_args = 0..=1, default_missing_value = "0")]
    parallel: Option<usize>,
    #[command(flatten)]
    train: TrainArgs,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: DataFormat,
    /// Selects the default format under `auto`.
    #[arg(long, value_enum, default_value = "lp")]
    task: Task,
    #[arg(long, default_value = "weekly")]
    snapshot_rule: SnapshotRule,
    #[arg(long, default_value_t = 6.0)]
    delta: f64,
    /// Cache file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 50)]
    nodes: usize,
    #[arg(long, default_value_t = 2)]
    period: usize,
    #[arg(long, default_value_t = 25)]
    edges: usize,
    /// Probability that each base edge recurs.
    #[arg(long, default_value_t = 1.0)]
    recurrence: f64,
    /// Uniform noise edges per snapshot as a fraction of --edges.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 200)]
    snapshots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct SequenceStats<'a> {
    num_nodes: usize,
    total_edges: usize,
    snapshots: usize,
    labeled: bool,
    source_hash: Option<&'a str>,
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    println!(
        "{}",
        serde_json::to_string(value).map_err(anyhow::Error::from)?
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = args.to_config()?;
    if let Some(path) = &args.dump_config {
        run::write_config(&cfg, path)?;
        return Ok(());
    }
    let summary = run::train(&cfg, &args.output_dir(&cfg))?;
    print_json(&summary)
}

fn cmd_verify(args: &VerifyArgs) -> Result<(), Failure> {
    let reports = verify::run_suite(args.suite, args.seed, args.mutate)?;
    let mut failed = 0;
    for r in &reports {
        print_json(r)?;
        if !r.passed {
            failed += 1;
            eprintln!(
                "FAILED {}",
                serde_json::to_string(r).map_err(anyhow::Error::from)?
            );
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{failed} of {} checks failed",
            reports.len()
        )));
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let base = args.train.to_config()?;
    let out = args.train.output_dir(&base);
    sweep::run(&base, args.axis, &args.values, args.parallel, &out)
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), Failure> {
    let cfg = RunConfig {
        task: args.task,
        data: Some(args.data.clone()),
        format: args.format,
        snapshot_rule: args.snapshot_rule,
        delta_hours: args.delta,
        ..RunConfig::default()
    };
    let seq = run::load_sequence(&cfg)?;
    write_sequence_file(&seq, &args.out)?;
    print_stats(&seq)
}

fn print_stats(seq: &sist_core::data::SnapshotSequence) -> Result<(), Failure> {
    print_json(&SequenceStats {
        num_nodes: seq.num_nodes,
        total_edges: seq.total_edges(),
        snapshots: seq.len(),
        labeled: seq.has_labels(),
        source_hash: seq.source_hash.as_deref(),
    })
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let spec = SyntheticSpec {
        num_nodes: args.nodes,
        period: args.period,
        edges_per_snapshot: args.edges,
        recurrence: args.recurrence,
        noise_rate: args.noise,
        num_snapshots: args.snapshots,
        seed: args.seed,
    };
    let seq = generate_synthetic(&spec)
        .map_err(|e| Failure::Usage(e.into()))?
        .sequence;
    write_sequence_file(&seq, &args.out)?;
    print_stats(&seq)
}

fn exit_with(result: Result<(), Failure>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    exit_with(match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Generate(a) => cmd_generate(a),
    })
}
