//! One-time preprocessing cache.
//!
//! Layout under `<cache_dir>/<dataset>/`:
//! - `graphs.bin`: the parsed dataset (structure, features, labels)
//! - `<m>/<graph_idx>.cplx`: one complex per graph and granularity
//! - `<m>/index.json`: content hash, per-file hashes and cell counts
//!
//! `.cplx` layout (little-endian): magic `CPLX`, `u32` version, `u32` m,
//! `u32` n0, n1, n2, then n1 `(u32, u32)` edge endpoints, then per ring a
//! `u32` length followed by that many vertex ids and that many edge ids.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cell::{build_complex_capped, CellularComplex};
use super::rings::{Ring, DEFAULT_RING_CAP};
use crate::autodiff::Tensor;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::graph_io::{FeatureMode, Graph, GraphDataset};

pub const CACHE_FORMAT_VERSION: u32 = 1;

const CPLX_MAGIC: &[u8; 4] = b"CPLX";
const DATASET_MAGIC: &[u8; 4] = b"RFDS";

/// Complexes for every graph at every configured granularity.
#[derive(Clone, Debug)]
pub struct ComplexCache {
    pub dataset: String,
    pub granularities: Vec<usize>,
    complexes: Vec<Vec<CellularComplex>>,
    /// Complexes built (rather than loaded) by the call that produced this.
    pub rebuilt: usize,
}

impl ComplexCache {
    pub fn new(dataset: String, granularities: Vec<usize>, complexes: Vec<Vec<CellularComplex>>) -> Result<Self> {
        if complexes.len() != granularities.len() {
            return Err(Error::Contract("one complex list per granularity required".into()));
        }
        let n = complexes.first().map_or(0, Vec::len);
        if complexes.iter().any(|c| c.len() != n) {
            return Err(Error::Contract("granularities cover different graph counts".into()));
        }
        Ok(ComplexCache {
            dataset,
            granularities,
            complexes,
            rebuilt: 0,
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.complexes.first().map_or(0, Vec::len)
    }

    /// Complexes at the `a`-th configured granularity.
    pub fn at(&self, a: usize) -> &[CellularComplex] {
        &self.complexes[a]
    }

    /// Restricts to a subset of the cached granularities.
    pub fn select(&self, granularities: &[usize]) -> Result<ComplexCache> {
        let mut complexes = Vec::new();
        for m in granularities {
            let a = self
                .granularities
                .iter()
                .position(|g| g == m)
                .ok_or_else(|| Error::Config(format!("granularity {m} not in cache {:?}", self.granularities)))?;
            complexes.push(self.complexes[a].clone());
        }
        ComplexCache::new(self.dataset.clone(), granularities.to_vec(), complexes)
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct IndexEntry {
    graph: usize,
    sha256: String,
    n0: usize,
    n1: usize,
    n2: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CacheIndex {
    format_version: u32,
    dataset: String,
    granularity: usize,
    content_hash: String,
    n_graphs: usize,
    total_cells: [usize; 3],
    files: Vec<IndexEntry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the graph structures in `dataset` (node counts and edge lists).
pub fn dataset_hash(dataset: &GraphDataset) -> String {
    let mut h = Sha256::new();
    h.update((dataset.graphs.len() as u64).to_le_bytes());
    for g in &dataset.graphs {
        h.update((g.n_nodes() as u64).to_le_bytes());
        h.update((g.n_edges() as u64).to_le_bytes());
        for &(u, v) in g.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn content_hash(name: &str, m: usize, dhash: &str) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_FORMAT_VERSION.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update((m as u64).to_le_bytes());
    h.update(dhash.as_bytes());
    hex::encode(h.finalize())
}

pub(crate) fn validate_granularities(granularities: &[usize], cap: usize) -> Result<()> {
    if granularities.is_empty() {
        return Err(Error::Config("at least one granularity is required".into()));
    }
    if granularities.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "granularities must be strictly increasing, got {granularities:?}"
        )));
    }
    if let Some(&m) = granularities.iter().find(|&&m| m < 3 || m > cap) {
        return Err(Error::Config(format!("granularity {m} outside 3..={cap}")));
    }
    Ok(())
}

fn encode_complex(c: &CellularComplex) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(CPLX_MAGIC);
    w.u32(CACHE_FORMAT_VERSION);
    w.usize32(c.granularity())?;
    let (n0, n1, n2) = c.counts();
    w.usize32(n0)?;
    w.usize32(n1)?;
    w.usize32(n2)?;
    for &(u, v) in c.edge_boundary() {
        w.usize32(u)?;
        w.usize32(v)?;
    }
    for r in c.rings() {
        w.usize32(r.len())?;
        for &v in r.vertices() {
            w.usize32(v)?;
        }
        for &e in r.edges() {
            w.usize32(e)?;
        }
    }
    Ok(w.buf)
}

fn decode_complex(bytes: &[u8], what: &str) -> Result<CellularComplex> {
    let mut r = Reader::new(bytes, what);
    r.magic(CPLX_MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_FORMAT_VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {version}")));
    }
    let m = r.usize32()?;
    let n0 = r.usize32()?;
    let n1 = r.usize32()?;
    let n2 = r.usize32()?;
    let mut edges = Vec::with_capacity(n1);
    for _ in 0..n1 {
        edges.push((r.usize32()?, r.usize32()?));
    }
    let mut rings = Vec::with_capacity(n2);
    for _ in 0..n2 {
        let len = r.usize32()?;
        let vertices = (0..len).map(|_| r.usize32()).collect::<Result<Vec<_>>>()?;
        let ring_edges = (0..len).map(|_| r.usize32()).collect::<Result<Vec<_>>>()?;
        rings.push(Ring::from_parts(vertices, ring_edges));
    }
    r.finish()?;
    CellularComplex::from_parts(n0, edges, rings, m)
}

fn encode_dataset(ds: &GraphDataset) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u32(CACHE_FORMAT_VERSION);
    w.str(&ds.name)?;
    w.usize32(ds.n_classes)?;
    w.u8(match ds.feature_mode {
        FeatureMode::NodeLabelsOnehot => 0,
        FeatureMode::DegreeOnehot => 1,
    });
    w.usize32(ds.graphs.len())?;
    for g in &ds.graphs {
        w.usize32(g.n_nodes())?;
        w.usize32(g.n_edges())?;
        for &(u, v) in g.edges() {
            w.usize32(u)?;
            w.usize32(v)?;
        }
        w.usize32(g.label())?;
        let f = g.node_features();
        w.usize32(f.cols())?;
        for &x in f.data() {
            w.f64(x);
        }
    }
    Ok(w.buf)
}

fn decode_dataset(bytes: &[u8], what: &str) -> Result<GraphDataset> {
    let mut r = Reader::new(bytes, what);
    r.magic(DATASET_MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_FORMAT_VERSION {
        return Err(Error::Format(format!("{what}: unsupported version {version}")));
    }
    let name = r.str()?;
    let n_classes = r.usize32()?;
    let feature_mode = match r.u8()? {
        0 => FeatureMode::NodeLabelsOnehot,
        1 => FeatureMode::DegreeOnehot,
        x => return Err(Error::Format(format!("{what}: bad feature mode {x}"))),
    };
    let n_graphs = r.usize32()?;
    let mut graphs = Vec::with_capacity(n_graphs);
    for _ in 0..n_graphs {
        let n = r.usize32()?;
        let ne = r.usize32()?;
        let mut edges = Vec::with_capacity(ne);
        for _ in 0..ne {
            edges.push((r.usize32()?, r.usize32()?));
        }
        let label = r.usize32()?;
        let cols = r.usize32()?;
        let data = (0..n * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        graphs.push(Graph::new(n, edges, Tensor::from_vec(n, cols, data)?, label)?);
    }
    r.finish()?;
    Ok(GraphDataset {
        name,
        graphs,
        n_classes,
        feature_mode,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes the dataset to `path` (skipped if identical bytes already exist).
pub fn write_dataset(dataset: &GraphDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(dataset)?;
    if fs::read(path).ok().as_deref() == Some(bytes.as_slice()) {
        return Ok(());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_file(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<GraphDataset> {
    if !path.is_file() {
        return Err(Error::CacheMissing(format!("{} not found; run preprocess first", path.display())));
    }
    decode_dataset(&read_file(path)?, &path.display().to_string())
}

fn dataset_root(cache_dir: &Path, name: &str) -> PathBuf {
    cache_dir.join(name)
}

fn granularity_dir(cache_dir: &Path, name: &str, m: usize) -> PathBuf {
    dataset_root(cache_dir, name).join(m.to_string())
}

fn read_index(dir: &Path) -> Option<CacheIndex> {
    let text = fs::read_to_string(dir.join("index.json")).ok()?;
    serde_json::from_str(&text).ok()
}

fn load_granularity(dir: &Path, index: &CacheIndex) -> Result<Vec<CellularComplex>> {
    let mut out = Vec::with_capacity(index.n_graphs);
    for entry in &index.files {
        let path = dir.join(format!("{}.cplx", entry.graph));
        let bytes = read_file(&path)?;
        if sha_hex(&bytes) != entry.sha256 {
            return Err(Error::Format(format!("{}: hash mismatch with index", path.display())));
        }
        out.push(decode_complex(&bytes, &path.display().to_string())?);
    }
    Ok(out)
}

/// Builds (or reloads) every complex for every granularity.
///
/// A granularity whose `index.json` matches the dataset's content hash is a
/// cache hit and is loaded instead of rebuilt.
pub fn preprocess_dataset(dataset: &GraphDataset, granularities: &[usize], cache_dir: &Path) -> Result<ComplexCache> {
    preprocess_dataset_capped(dataset, granularities, cache_dir, DEFAULT_RING_CAP)
}

pub fn preprocess_dataset_capped(
    dataset: &GraphDataset,
    granularities: &[usize],
    cache_dir: &Path,
    cap: usize,
) -> Result<ComplexCache> {
    validate_granularities(granularities, cap)?;
    let root = dataset_root(cache_dir, &dataset.name);
    fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    write_dataset(dataset, &root.join("graphs.bin"))?;

    let dhash = dataset_hash(dataset);
    let mut all = Vec::with_capacity(granularities.len());
    let mut rebuilt = 0;
    for &m in granularities {
        let dir = granularity_dir(cache_dir, &dataset.name, m);
        let chash = content_hash(&dataset.name, m, &dhash);
        if let Some(index) = read_index(&dir) {
            if index.content_hash == chash && index.n_graphs == dataset.graphs.len() {
                if let Ok(complexes) = load_granularity(&dir, &index) {
                    log::info!("{} m={m}: cache hit ({} complexes)", dataset.name, complexes.len());
                    all.push(complexes);
                    continue;
                }
            }
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut complexes = Vec::with_capacity(dataset.graphs.len());
        let mut files = Vec::with_capacity(dataset.graphs.len());
        let mut total = [0usize; 3];
        for (i, g) in dataset.graphs.iter().enumerate() {
            let c = build_complex_capped(g, m, cap)?;
            let bytes = encode_complex(&c)?;
            write_file(&dir.join(format!("{i}.cplx")), &bytes)?;
            let (n0, n1, n2) = c.counts();
            total[0] += n0;
            total[1] += n1;
            total[2] += n2;
            files.push(IndexEntry {
                graph: i,
                sha256: sha_hex(&bytes),
                n0,
                n1,
                n2,
            });
            complexes.push(c);
        }
        rebuilt += complexes.len();
        let index = CacheIndex {
            format_version: CACHE_FORMAT_VERSION,
            dataset: dataset.name.clone(),
            granularity: m,
            content_hash: chash,
            n_graphs: complexes.len(),
            total_cells: total,
            files,
        };
        let json = serde_json::to_string_pretty(&index).map_err(|e| Error::Format(e.to_string()))?;
        write_file(&dir.join("index.json"), json.as_bytes())?;
        log::info!(
            "{} m={m}: built {} complexes ({} rings)",
            dataset.name,
            complexes.len(),
            total[2]
        );
        all.push(complexes);
    }
    let mut cache = ComplexCache::new(dataset.name.clone(), granularities.to_vec(), all)?;
    cache.rebuilt = rebuilt;
    Ok(cache)
}

/// Loads the cached dataset and its complexes; fails with
/// [`Error::CacheMissing`] if anything required is absent or stale.
pub fn load_cache(cache_dir: &Path, name: &str, granularities: &[usize]) -> Result<(GraphDataset, ComplexCache)> {
    validate_granularities(granularities, usize::MAX)?;
    let dataset = load_dataset(&dataset_root(cache_dir, name).join("graphs.bin"))?;
    let dhash = dataset_hash(&dataset);
    let mut all = Vec::new();
    for &m in granularities {
        let dir = granularity_dir(cache_dir, name, m);
        let index = read_index(&dir).ok_or_else(|| {
            Error::CacheMissing(format!("no index for {name} at granularity {m} under {}", dir.display()))
        })?;
        if index.content_hash != content_hash(name, m, &dhash) {
            return Err(Error::CacheMissing(format!("stale cache for {name} at granularity {m}")));
        }
        all.push(load_granularity(&dir, &index)?);
    }
    let cache = ComplexCache::new(name.to_owned(), granularities.to_vec(), all)?;
    Ok((dataset, cache))
}
