use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{detect_delimiter, file_hash, NodeMap, SnapshotSequence};
use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;

pub const DAY_SECONDS: f64 = 86_400.0;
pub const WEEK_SECONDS: f64 = 7.0 * DAY_SECONDS;

/// How edge-list rows are grouped into snapshots.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotRule {
    /// 7-day windows from the earliest timestamp.
    Weekly,
    /// 1-day windows from the earliest timestamp.
    Daily,
    /// Consecutive runs of this many rows in timestamp order.
    FixedCount(usize),
}

impl FromStr for SnapshotRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        match s.as_str() {
            "weekly" => Ok(SnapshotRule::Weekly),
            "daily" => Ok(SnapshotRule::Daily),
            _ => {
                let n = s
                    .strip_prefix("fixed_count:")
                    .or_else(|| s.strip_prefix("fixed-count:"))
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| n > 0)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "unknown snapshot rule {s:?} (weekly, daily, fixed_count:<n>)"
                        ))
                    })?;
                Ok(SnapshotRule::FixedCount(n))
            }
        }
    }
}

impl fmt::Display for SnapshotRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnapshotRule::Weekly => f.write_str("weekly"),
            SnapshotRule::Daily => f.write_str("daily"),
            SnapshotRule::FixedCount(n) => write!(f, "fixed_count:{n}"),
        }
    }
}

struct Row {
    src: usize,
    dst: usize,
    ts: f64,
    weight: Option<f64>,
}

fn parse_number(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("{what} {field:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("{what} {field:?} is not finite"),
        });
    }
    Ok(v)
}

/// Parses `src,dst,timestamp[,weight]` rows. The header is optional and the
/// delimiter (comma or tab) is detected from the first line.
pub fn parse_edgelist(text: &str, rule: SnapshotRule) -> Result<SnapshotSequence> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(detect_delimiter(text))
        .from_reader(text.as_bytes());
    let mut nodes = NodeMap::new();
    let mut rows = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !(3..=4).contains(&record.len()) {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 or 4 columns, found {}", record.len()),
            });
        }
        if rows.is_empty() && width.is_none() && record[2].parse::<f64>().is_err() {
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {w} columns, found {}", record.len()),
                })
            }
            _ => width = Some(record.len()),
        }
        let ts = parse_number(&record[2], "timestamp", line)?;
        let weight = match record.get(3) {
            Some(w) => Some(parse_number(w, "weight", line)?),
            None => None,
        };
        if record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty node identifier".into(),
            });
        }
        let src = nodes.intern(&record[0]);
        let dst = nodes.intern(&record[1]);
        rows.push(Row {
            src,
            dst,
            ts,
            weight,
        });
    }
    if rows.is_empty() {
        return Err(Error::Format("edge list has no rows".into()));
    }
    rows.sort_by(|a, b| a.ts.total_cmp(&b.ts));
    let bucket_of: Vec<usize> = match rule {
        SnapshotRule::FixedCount(n) => (0..rows.len()).map(|i| i / n).collect(),
        SnapshotRule::Weekly | SnapshotRule::Daily => {
            let span = if rule == SnapshotRule::Weekly {
                WEEK_SECONDS
            } else {
                DAY_SECONDS
            };
            let origin = rows[0].ts;
            rows.iter()
                .map(|r| ((r.ts - origin) / span).floor() as usize)
                .collect()
        }
    };
    let t = bucket_of.last().map_or(0, |b| b + 1);
    let mut edges = vec![Vec::new(); t];
    let mut stamps = vec![Vec::new(); t];
    let mut weights = vec![Vec::new(); t];
    let weighted = rows[0].weight.is_some();
    for (r, &b) in rows.iter().zip(&bucket_of) {
        edges[b].push((r.src, r.dst));
        stamps[b].push(r.ts);
        if let Some(w) = r.weight {
            weights[b].push(w);
        }
    }
    let n = nodes.len();
    let mut snapshots = Vec::with_capacity(t);
    for (b, ((e, s), w)) in edges.into_iter().zip(stamps).zip(weights).enumerate() {
        let mut g = SnapshotGraph::new(n, e)?.with_index(b).with_timestamps(s)?;
        if weighted {
            g = g.with_weights(w)?;
        }
        snapshots.push(g);
    }
    let mut seq = SnapshotSequence::new(n, snapshots)?;
    seq.node_map = Some(nodes);
    Ok(seq)
}

/// Reads and parses an edge-list file; the sequence records the file hash.
pub fn ingest_edgelist(path: &Path, rule: SnapshotRule) -> Result<SnapshotSequence> {
    let text = std::fs::read_to_string(path)?;
    let mut seq = parse_edgelist(&text, rule)?;
    seq.source_hash = Some(file_hash(path)?);
    log::info!(
        "ingested {}: N={} E={} T={}",
        path.display(),
        seq.num_nodes,
        seq.total_edges(),
        seq.len()
    );
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_same_week() {
        let s = parse_edgelist("a,b,0\nb,c,100\nc,a,6000", SnapshotRule::Weekly).unwrap();
        assert_eq!(
            (s.num_nodes, s.len(), s.snapshots[0].num_edges()),
            (3, 1, 3)
        );
    }

    #[test]
    fn header_tabs_and_weights() {
        let text = "src\tdst\ttimestamp\tweight\n10\t20\t0\t-3\n20\t30\t86400\t5\n";
        let s = parse_edgelist(text, SnapshotRule::Daily).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.snapshots[1].edges(), &[(1, 2)]);
        assert_eq!(s.snapshots[0].edge_weights.as_deref(), Some(&[-3.0][..]));
        let map = s.node_map.as_ref().unwrap();
        assert_eq!(map.original(2), Some("30"));
    }

    #[test]
    fn buckets_measured_from_earliest_timestamp() {
        let text = format!(
            "1,2,{}\n2,3,{}\n3,1,{}",
            1000.0 + WEEK_SECONDS,
            1000.0,
            1000.0 + 3.0 * WEEK_SECONDS - 1.0
        );
        let s = parse_edgelist(&text, SnapshotRule::Weekly).unwrap();
        let sizes: Vec<_> = s.snapshots.iter().map(|g| g.num_edges()).collect();
        assert_eq!(sizes, vec![1, 1, 1]);
        assert_eq!(s.snapshots[0].edges(), &[(1, 2)]);
    }

    #[test]
    fn fixed_count_rule() {
        let text = "0,1,5\n1,2,3\n2,3,4\n3,4,1\n4,0,2";
        let s = parse_edgelist(text, SnapshotRule::FixedCount(2)).unwrap();
        let sizes: Vec<_> = s.snapshots.iter().map(|g| g.num_edges()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
        assert_eq!(
            s.snapshots[0].edge_timestamps.as_deref(),
            Some(&[1.0, 2.0][..])
        );
    }

    #[test]
    fn malformed_rows_report_line() {
        match parse_edgelist("a,b,1\nb,c,oops\n", SnapshotRule::Daily) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_edgelist("a,b,1\nb,c\n", SnapshotRule::Daily) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_edgelist("", SnapshotRule::Daily).is_err());
        assert!(parse_edgelist("src,dst,timestamp\n", SnapshotRule::Daily).is_err());
    }

    #[test]
    fn rule_parsing() {
        for r in [
            SnapshotRule::Weekly,
            SnapshotRule::Daily,
            SnapshotRule::FixedCount(7),
        ] {
            assert_eq!(r.to_string().parse::<SnapshotRule>().unwrap(), r);
        }
        assert!("fixed_count:0".parse::<SnapshotRule>().is_err());
        assert!("hourly".parse::<SnapshotRule>().is_err());
    }
}
