//! One-axis sweeps. Each value gets its own output directory
//! `<out>/<axis>=<value>`; the rows are appended to `<out>/sweep.jsonl` and
//! printed as a table.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sist_core::train::Summary;

use crate::config::{DataFormat, RunConfig, Task};
use crate::run;
use crate::Failure;

pub const SWEEP_FILE: &str = "sweep.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Hidden dimension.
    #[value(name = "d_h")]
    #[serde(rename = "d_h")]
    HiddenDim,
    /// Number of layers.
    #[value(name = "layers", alias = "L")]
    Layers,
    Backbone,
    /// Snapshot width in hours.
    Delta,
    Weighting,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::HiddenDim => "d_h",
            Axis::Layers => "layers",
            Axis::Backbone => "backbone",
            Axis::Delta => "delta",
            Axis::Weighting => "weighting",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig, Failure> {
        let bad = |e: String| Failure::Usage(anyhow!("bad {} value {value:?}: {e}", self.name()));
        let mut c = base.clone();
        match self {
            Axis::HiddenDim => c.hidden_dim = Some(value.parse().map_err(|e| bad(format!("{e}")))?),
            Axis::Layers => c.num_layers = value.parse().map_err(|e| bad(format!("{e}")))?,
            Axis::Backbone => c.backbone = value.parse().map_err(|e| bad(format!("{e}")))?,
            Axis::Delta => c.delta_hours = value.parse().map_err(|e| bad(format!("{e}")))?,
            Axis::Weighting => c.weighting = value.parse().map_err(|e| bad(format!("{e}")))?,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: String,
    pub output: PathBuf,
    pub summary: Summary,
}

fn spawn(cfg_path: &Path, out: &Path) -> anyhow::Result<Child> {
    let exe = std::env::current_exe().context("locating the sist executable")?;
    Command::new(exe)
        .arg("train")
        .arg("--config")
        .arg(cfg_path)
        .arg("--output")
        .arg(out)
        .stdout(Stdio::null())
        .spawn()
        .context("spawning a sweep worker")
}

fn wait(child: &mut Child, value: &str) -> anyhow::Result<()> {
    let status = child.wait()?;
    if !status.success() {
        return Err(anyhow!(
            "sweep run for value {value:?} exited with {status}"
        ));
    }
    Ok(())
}

/// Runs `base` once per value. `parallel` of `Some(0)` runs every value at
/// once in separate processes; `Some(n)` keeps at most `n` running.
pub fn run(
    base: &RunConfig,
    axis: Axis,
    values: &[String],
    parallel: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if values.is_empty() {
        return Err(Failure::Usage(anyhow!("sweep needs at least one value")));
    }
    if axis == Axis::Delta && !(base.task == Task::Nc || base.format == DataFormat::Events) {
        warn!("delta only affects event streams; edge lists use --snapshot-rule");
    }
    let configs: Vec<RunConfig> = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<_, _>>()?;
    let dirs: Vec<PathBuf> = values
        .iter()
        .map(|v| out.join(format!("{}={v}", axis.name())))
        .collect();

    match parallel {
        None => {
            for (cfg, dir) in configs.iter().zip(&dirs) {
                info!("sweep run in {}", dir.display());
                run::train(cfg, dir)?;
            }
        }
        Some(limit) => {
            let limit = if limit == 0 { values.len() } else { limit };
            let mut running: Vec<(Child, &str)> = Vec::new();
            for ((cfg, dir), value) in configs.iter().zip(&dirs).zip(values) {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                let cfg_path = dir.join(run::CONFIG_FILE);
                run::write_config(cfg, &cfg_path)?;
                if running.len() == limit {
                    let (mut child, v) = running.remove(0);
                    wait(&mut child, v)?;
                }
                running.push((spawn(&cfg_path, dir)?, value));
            }
            for (mut child, v) in running {
                wait(&mut child, v)?;
            }
        }
    }

    let rows: Vec<SweepRow> = values
        .iter()
        .zip(&dirs)
        .map(|(v, dir)| {
            Ok(SweepRow {
                axis,
                value: v.clone(),
                output: dir.clone(),
                summary: run::read_summary(dir)?,
            })
        })
        .collect::<anyhow::Result<_>>()?;

    std::fs::create_dir_all(out)?;
    let path = out.join(SWEEP_FILE);
    let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
    for r in &rows {
        writeln!(
            f,
            "{}",
            serde_json::to_string(r).map_err(anyhow::Error::from)?
        )?;
    }
    print_table(axis, &rows);
    Ok(())
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn print_table(axis: Axis, rows: &[SweepRow]) {
    println!(
        "{:<12} {:>9} {:>9} {:>7} {:>10}  checksum",
        axis.name(),
        "mean_mrr",
        "test_auc",
        "epochs",
        "evaluated"
    );
    for r in rows {
        let s = &r.summary;
        println!(
            "{:<12} {:>9} {:>9} {:>7} {:>10}  {}",
            r.value,
            fmt_metric(s.mean_mrr),
            fmt_metric(s.test_auc),
            s.epochs_run,
            s.evaluated_snapshots,
            &s.checksum[..s.checksum.len().min(16)]
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sist_core::heads::ClassWeighting;
    use sist_core::nn::BackboneKind;

    #[test]
    fn axes_set_their_field() {
        let base = RunConfig::default().resolved();
        assert_eq!(
            Axis::HiddenDim.apply(&base, "32").unwrap().hidden_dim,
            Some(32)
        );
        assert_eq!(Axis::Layers.apply(&base, "3").unwrap().num_layers, 3);
        assert_eq!(
            Axis::Backbone.apply(&base, "sage").unwrap().backbone,
            BackboneKind::Sage
        );
        assert_eq!(Axis::Delta.apply(&base, "12").unwrap().delta_hours, 12.0);
        assert_eq!(
            Axis::Weighting.apply(&base, "sqrt").unwrap().weighting,
            ClassWeighting::Sqrt
        );
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let base = RunConfig::default().resolved();
        assert!(matches!(
            Axis::HiddenDim.apply(&base, "x"),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(
            Axis::Delta.apply(&base, "-1"),
            Err(Failure::Usage(_))
        ));
        assert!(matches!(
            Axis::Layers.apply(&base, "0"),
            Err(Failure::Usage(_))
        ));
    }
}
