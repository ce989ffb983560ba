//! JSON-lines persistence for collections.
//!
//! Line 1 is a header `{"version":1,"name":..,"dim":..,"metric":"cosine"}`;
//! every further line is one record. Floats use shortest round-trip
//! formatting, so a save/load cycle is bit-exact.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hybrid_spec_core::retrieval::{Collection, Payload, RetrievalStore};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u64 = 1;
pub const METRIC: &str = "cosine";
pub const EXTENSION: &str = "jsonl";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u64,
    name: String,
    dim: usize,
    metric: String,
}

#[derive(Serialize)]
struct LineOut<'a> {
    embedding: &'a [f64],
    payload: &'a Payload,
    feature: Option<&'a [f64]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LineIn {
    embedding: Vec<f64>,
    payload: Payload,
    feature: Option<Vec<f64>>,
}

pub fn write_collection<W: Write>(c: &Collection, mut w: W) -> std::io::Result<()> {
    let header = Header { version: FORMAT_VERSION, name: c.name().to_string(), dim: c.dim(), metric: METRIC.into() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in c.records() {
        let line = LineOut { embedding: &r.embedding, payload: &r.payload, feature: r.feature.as_deref() };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_collection(c: &Collection, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    write_collection(c, BufWriter::new(file)).map_err(|e| AppError::io(path, e))
}

/// Read a collection; `origin` names the source in error messages.
pub fn read_collection<R: BufRead>(reader: R, origin: &Path) -> Result<Collection> {
    let mut lines = reader.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| AppError::io(origin, e))?,
        None => return Err(AppError::parse(origin, 1, "missing header")),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| AppError::parse(origin, 1, e))?;
    if header.version != FORMAT_VERSION {
        return Err(AppError::Version { path: origin.into(), found: header.version, expected: FORMAT_VERSION });
    }
    if header.metric != METRIC {
        return Err(AppError::parse(origin, 1, format!("unsupported metric '{}'", header.metric)));
    }
    let mut c = Collection::new(header.name, header.dim).map_err(|e| AppError::parse(origin, 1, e))?;
    for (i, line) in lines {
        let line = line.map_err(|e| AppError::io(origin, e))?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            return Err(AppError::parse(origin, lineno, "empty line"));
        }
        let rec: LineIn = serde_json::from_str(&line).map_err(|e| AppError::parse(origin, lineno, e))?;
        c.insert(rec.embedding, rec.payload, rec.feature).map_err(|e| AppError::parse(origin, lineno, e))?;
    }
    Ok(c)
}

pub fn load_collection(path: &Path) -> Result<Collection> {
    let file = File::open(path).map_err(|e| AppError::io(path, e))?;
    read_collection(BufReader::new(file), path)
}

/// Shard file path inside a database directory.
pub fn shard_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.{EXTENSION}"))
}

/// Write every shard to `<dir>/<name>.jsonl`; returns the paths in shard order.
pub fn save_store(store: &RetrievalStore, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    store
        .shards()
        .map(|c| {
            let path = shard_path(dir, c.name());
            save_collection(c, &path)?;
            Ok(path)
        })
        .collect()
}

/// Load a database: a directory of shard files, or a single shard file.
pub fn load_store(path: &Path) -> Result<RetrievalStore> {
    let mut store = RetrievalStore::new();
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| AppError::io(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
            .collect();
        files.sort();
        for f in files {
            store.add(load_collection(&f)?);
        }
    } else {
        store.add(load_collection(path)?);
    }
    Ok(store)
}
