use std::collections::BTreeMap;
use std::path::Path;

use super::{detect_delimiter, file_hash, NodeMap, SnapshotSequence};
use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    /// Index into the user map.
    pub user: usize,
    /// Index into the item map.
    pub item: usize,
    /// Seconds.
    pub timestamp: f64,
    pub label: bool,
    pub features: Vec<f64>,
}

/// Bipartite interaction stream. After discretization users occupy node ids
/// `0..U` and items `U..U+I`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStream {
    /// Sorted by timestamp, input order kept on ties.
    pub events: Vec<Event>,
    pub users: NodeMap,
    pub items: NodeMap,
    pub edge_dim: usize,
    /// `[U+I x d_f]`
    pub static_features: Option<Matrix>,
}

impl EventStream {
    pub fn new(mut events: Vec<Event>, users: NodeMap, items: NodeMap) -> Result<Self> {
        let edge_dim = events.first().map_or(0, |e| e.features.len());
        for e in &events {
            if e.user >= users.len() || e.item >= items.len() {
                return Err(Error::Domain(format!(
                    "event ({}, {}) outside {} users / {} items",
                    e.user,
                    e.item,
                    users.len(),
                    items.len()
                )));
            }
            if e.features.len() != edge_dim {
                return Err(Error::Domain(format!(
                    "event with {} features, stream has {edge_dim}",
                    e.features.len()
                )));
            }
            if !e.timestamp.is_finite() || e.timestamp < 0.0 {
                return Err(Error::Domain(format!(
                    "timestamp {} must be finite and >= 0",
                    e.timestamp
                )));
            }
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        Ok(EventStream {
            events,
            users,
            items,
            edge_dim,
            static_features: None,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.users.len() + self.items.len()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn parse_label(field: &str, line: usize) -> Result<bool> {
    match field.parse::<f64>() {
        Ok(0.0) => Ok(false),
        Ok(1.0) => Ok(true),
        _ => Err(Error::Parse {
            line,
            msg: format!("state label {field:?} is not 0 or 1"),
        }),
    }
}

/// Parses `user_id,item_id,timestamp,state_label,feature_0..` rows with an
/// optional header line.
pub fn parse_events(text: &str) -> Result<EventStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(detect_delimiter(text))
        .from_reader(text.as_bytes());
    let mut users = NodeMap::new();
    let mut items = NodeMap::new();
    let mut events = Vec::new();
    let mut header_seen = false;
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
        if events.is_empty()
            && !header_seen
            && record.get(2).is_some_and(|f| f.parse::<f64>().is_err())
        {
            header_seen = true;
            continue;
        }
        if record.len() < 4 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least 4 columns, found {}", record.len()),
            });
        }
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "expected {} columns, found {}",
                    width.unwrap_or(0),
                    record.len()
                ),
            });
        }
        let timestamp: f64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("timestamp {:?} is not a number", &record[2]),
        })?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(Error::Parse {
                line,
                msg: format!("timestamp {timestamp} must be finite and >= 0"),
            });
        }
        let label = parse_label(&record[3], line)?;
        let features = record
            .iter()
            .skip(4)
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("feature {f:?} is not a number"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        events.push(Event {
            user: users.intern(&record[0]),
            item: items.intern(&record[1]),
            timestamp,
            label,
            features,
        });
    }
    if events.is_empty() {
        return Err(Error::Format("event stream has no rows".into()));
    }
    EventStream::new(events, users, items)
}

pub fn ingest_events(path: &Path) -> Result<(EventStream, String)> {
    let text = std::fs::read_to_string(path)?;
    let stream = parse_events(&text)?;
    Ok((stream, file_hash(path)?))
}

/// Bins events into windows of `delta_hours`: an event at `ts` seconds lands
/// in snapshot `floor(ts / (3600 delta))` (0-based). Each snapshot keeps its
/// events as a multigraph with features and timestamps; its labels are the
/// emitting users, positive when any of their events in the window is.
pub fn discretize_events(stream: &EventStream, delta_hours: f64) -> Result<SnapshotSequence> {
    if !(delta_hours.is_finite() && delta_hours > 0.0) {
        return Err(Error::Domain(format!(
            "delta must be positive, got {delta_hours}"
        )));
    }
    let width = delta_hours * 3600.0;
    let num_users = stream.users.len();
    let n = stream.num_nodes();
    let buckets: Vec<usize> = stream
        .events
        .iter()
        .map(|e| (e.timestamp / width).floor() as usize)
        .collect();
    let t = buckets.iter().max().map_or(0, |b| b + 1);
    let mut edges = vec![Vec::new(); t];
    let mut stamps = vec![Vec::new(); t];
    let mut feats: Vec<Vec<f64>> = vec![Vec::new(); t];
    let mut labels: Vec<BTreeMap<usize, bool>> = vec![BTreeMap::new(); t];
    for (e, &b) in stream.events.iter().zip(&buckets) {
        edges[b].push((e.user, num_users + e.item));
        stamps[b].push(e.timestamp);
        feats[b].extend_from_slice(&e.features);
        *labels[b].entry(e.user).or_insert(false) |= e.label;
    }
    let mut snapshots = Vec::with_capacity(t);
    for (b, ((e, s), f)) in edges.into_iter().zip(stamps).zip(feats).enumerate() {
        let m = e.len();
        let mut g = SnapshotGraph::new(n, e)?.with_index(b).with_timestamps(s)?;
        if stream.edge_dim > 0 {
            g = g.with_features(Matrix::from_vec(m, stream.edge_dim, f)?)?;
        }
        snapshots.push(g);
    }
    let mut seq = SnapshotSequence::new(n, snapshots)?.with_labels(
        labels
            .into_iter()
            .map(|l| l.into_iter().collect())
            .collect(),
    )?;
    if let Some(x) = &stream.static_features {
        seq = seq.with_static_features(x.clone())?;
    }
    seq.delta_hours = Some(delta_hours);
    let originals = stream
        .users
        .originals()
        .iter()
        .map(|u| format!("u:{u}"))
        .chain(stream.items.originals().iter().map(|i| format!("i:{i}")))
        .collect();
    seq.node_map = Some(NodeMap::from_originals(originals)?);
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HOUR: f64 = 3600.0;

    #[test]
    fn half_open_windows() {
        let text = format!(
            "user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n\
             0,0,{},0,0.1\n1,0,{},1,0.2\n0,1,{},0,0.3\n",
            0.5 * HOUR,
            5.9 * HOUR,
            6.0 * HOUR
        );
        let s = discretize_events(&parse_events(&text).unwrap(), 6.0).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.snapshots[0].num_edges(), 2);
        assert_eq!(s.snapshots[1].num_edges(), 1);
        assert_eq!(s.labels[0], vec![(0, false), (1, true)]);
        assert_eq!(s.snapshots[1].edges(), &[(0, 3)]);
        assert_eq!(s.edge_dim(), 1);
        assert_eq!(
            s.snapshots[1].edge_features.as_ref().unwrap().get(0, 0),
            0.3
        );
    }

    #[test]
    fn labels_or_within_window() {
        let text = "7,x,10,0\n7,y,20,1\n7,x,30,0\n8,x,4000,0\n";
        let s = discretize_events(&parse_events(text).unwrap(), 1.0).unwrap();
        assert_eq!(s.labels[0], vec![(0, true)]);
        assert_eq!(s.labels[1], vec![(1, false)]);
        assert_eq!(s.num_nodes, 4);
        assert_eq!(s.node_map.as_ref().unwrap().original(2), Some("i:x"));
    }

    #[test]
    fn nonpositive_delta_is_domain_error() {
        let st = parse_events("0,0,1,0\n").unwrap();
        for d in [0.0, -6.0, f64::NAN] {
            assert!(matches!(discretize_events(&st, d), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn unsorted_input_is_sorted_stably() {
        let st = parse_events("0,0,50,0,1\n1,0,10,0,2\n2,0,50,0,3\n").unwrap();
        let f: Vec<f64> = st.events.iter().map(|e| e.features[0]).collect();
        assert_eq!(f, vec![2.0, 1.0, 3.0]);
    }

    #[test]
    fn malformed_events() {
        assert!(matches!(
            parse_events("0,0,1,2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_events("0,0,1,0,1\n0,0,2,0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_events("0,0,-1,0\n"),
            Err(Error::Parse { .. })
        ));
        assert!(parse_events("").is_err());
    }
}
