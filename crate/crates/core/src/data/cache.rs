//! Binary sequence container, little-endian throughout:
//!
//! ```text
//! "SISTSEQ1" N:u64 T:u64 flags:u64
//! T x { index:u64 E:u64 edge_flags:u64 d_e:u64 E x (src:u64 dst:u64)
//!       [E*d_e f64 features] [E f64 timestamps] [E f64 weights] }
//! [labels]       T x { count:u64 count x (node:u64 y:u64) }
//! [static]       rows:u64 cols:u64 rows*cols f64
//! [delta]        f64 hours
//! [source hash]  len:u64 bytes
//! [node map]     count:u64 count x (len:u64 bytes)
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NodeMap, SnapshotSequence};
use crate::error::{Error, Result};
use crate::graph::SnapshotGraph;
use crate::params::{read_f64, read_u64};
use crate::tensor::Matrix;

pub const SEQUENCE_MAGIC: &[u8; 8] = b"SISTSEQ1";

const HAS_LABELS: u64 = 1;
const HAS_STATIC: u64 = 2;
const HAS_DELTA: u64 = 4;
const HAS_HASH: u64 = 8;
const HAS_NODE_MAP: u64 = 16;

const EDGE_FEATURES: u64 = 1;
const EDGE_TIMESTAMPS: u64 = 2;
const EDGE_WEIGHTS: u64 = 4;

fn put<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put(w, s.len() as u64)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| read_f64(r)).collect()
}

fn get_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    let mut b = Vec::new();
    r.take(len as u64).read_to_end(&mut b)?;
    if b.len() != len {
        return Err(Error::Format("truncated string".into()));
    }
    String::from_utf8(b).map_err(|_| Error::Format("string is not UTF-8".into()))
}

fn get_usize<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(read_u64(r)?).map_err(|_| Error::Format("count exceeds address space".into()))
}

pub fn write_sequence<W: Write>(seq: &SnapshotSequence, mut w: W) -> Result<()> {
    w.write_all(SEQUENCE_MAGIC)?;
    put(&mut w, seq.num_nodes as u64)?;
    put(&mut w, seq.len() as u64)?;
    let mut flags = 0;
    if seq.has_labels() {
        flags |= HAS_LABELS;
    }
    if seq.static_features.is_some() {
        flags |= HAS_STATIC;
    }
    if seq.delta_hours.is_some() {
        flags |= HAS_DELTA;
    }
    if seq.source_hash.is_some() {
        flags |= HAS_HASH;
    }
    if seq.node_map.is_some() {
        flags |= HAS_NODE_MAP;
    }
    put(&mut w, flags)?;
    for g in &seq.snapshots {
        put(&mut w, g.index as u64)?;
        put(&mut w, g.num_edges() as u64)?;
        let mut ef = 0;
        if g.edge_features.is_some() {
            ef |= EDGE_FEATURES;
        }
        if g.edge_timestamps.is_some() {
            ef |= EDGE_TIMESTAMPS;
        }
        if g.edge_weights.is_some() {
            ef |= EDGE_WEIGHTS;
        }
        put(&mut w, ef)?;
        put(
            &mut w,
            g.edge_features.as_ref().map_or(0, Matrix::cols) as u64,
        )?;
        for &(u, v) in g.edges() {
            put(&mut w, u as u64)?;
            put(&mut w, v as u64)?;
        }
        if let Some(f) = &g.edge_features {
            put_f64s(&mut w, f.as_slice())?;
        }
        if let Some(ts) = &g.edge_timestamps {
            put_f64s(&mut w, ts)?;
        }
        if let Some(ws) = &g.edge_weights {
            put_f64s(&mut w, ws)?;
        }
    }
    for labels in &seq.labels {
        put(&mut w, labels.len() as u64)?;
        for &(v, y) in labels {
            put(&mut w, v as u64)?;
            put(&mut w, y as u64)?;
        }
    }
    if let Some(x) = &seq.static_features {
        put(&mut w, x.rows() as u64)?;
        put(&mut w, x.cols() as u64)?;
        put_f64s(&mut w, x.as_slice())?;
    }
    if let Some(d) = seq.delta_hours {
        put_f64s(&mut w, &[d])?;
    }
    if let Some(h) = &seq.source_hash {
        put_str(&mut w, h)?;
    }
    if let Some(m) = &seq.node_map {
        put(&mut w, m.len() as u64)?;
        for o in m.originals() {
            put_str(&mut w, o)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequence<R: Read>(mut r: R) -> Result<SnapshotSequence> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SEQUENCE_MAGIC {
        return Err(Error::Format("not a snapshot sequence cache".into()));
    }
    let n = get_usize(&mut r)?;
    let t = get_usize(&mut r)?;
    let flags = read_u64(&mut r)?;
    let mut snapshots = Vec::new();
    for _ in 0..t {
        let index = get_usize(&mut r)?;
        let m = get_usize(&mut r)?;
        let ef = read_u64(&mut r)?;
        let d_e = get_usize(&mut r)?;
        let mut edges = Vec::new();
        for _ in 0..m {
            edges.push((get_usize(&mut r)?, get_usize(&mut r)?));
        }
        let mut g = SnapshotGraph::new(n, edges)?.with_index(index);
        if ef & EDGE_FEATURES != 0 {
            g = g.with_features(Matrix::from_vec(m, d_e, get_f64s(&mut r, m * d_e)?)?)?;
        }
        if ef & EDGE_TIMESTAMPS != 0 {
            g = g.with_timestamps(get_f64s(&mut r, m)?)?;
        }
        if ef & EDGE_WEIGHTS != 0 {
            g = g.with_weights(get_f64s(&mut r, m)?)?;
        }
        snapshots.push(g);
    }
    let mut seq = SnapshotSequence::new(n, snapshots)?;
    if flags & HAS_LABELS != 0 {
        let mut labels = Vec::new();
        for _ in 0..t {
            let count = get_usize(&mut r)?;
            let mut l = Vec::new();
            for _ in 0..count {
                let v = get_usize(&mut r)?;
                let y = match read_u64(&mut r)? {
                    0 => false,
                    1 => true,
                    other => return Err(Error::Format(format!("label value {other}"))),
                };
                l.push((v, y));
            }
            labels.push(l);
        }
        seq = seq.with_labels(labels)?;
    }
    if flags & HAS_STATIC != 0 {
        let rows = get_usize(&mut r)?;
        let cols = get_usize(&mut r)?;
        seq = seq.with_static_features(Matrix::from_vec(
            rows,
            cols,
            get_f64s(&mut r, rows * cols)?,
        )?)?;
    }
    if flags & HAS_DELTA != 0 {
        seq.delta_hours = Some(read_f64(&mut r)?);
    }
    if flags & HAS_HASH != 0 {
        seq.source_hash = Some(get_str(&mut r)?);
    }
    if flags & HAS_NODE_MAP != 0 {
        let count = get_usize(&mut r)?;
        let originals = (0..count)
            .map(|_| get_str(&mut r))
            .collect::<Result<Vec<_>>>()?;
        seq.node_map = Some(NodeMap::from_originals(originals)?);
    }
    Ok(seq)
}

pub fn write_sequence_file(seq: &SnapshotSequence, path: &Path) -> Result<()> {
    write_sequence(seq, BufWriter::new(std::fs::File::create(path)?))
}

pub fn read_sequence_file(path: &Path) -> Result<SnapshotSequence> {
    read_sequence(BufReader::new(std::fs::File::open(path)?))
}
