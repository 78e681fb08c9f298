//! TU-collection text datasets: parsing, node features and archive fetch.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::autodiff::Tensor;
use crate::error::{Error, FetchError, Result};

/// Default one-hot cap for degree features; covers the IMDB datasets.
pub const DEFAULT_MAX_DEGREE: usize = 88;

pub const DEFAULT_BASE_URL: &str = "https://www.chrsmrrs.com/graphkerneldatasets";

/// Datasets `fetch` knows about.
pub const KNOWN_DATASETS: &[&str] = &[
    "MUTAG",
    "PROTEINS",
    "NCI1",
    "NCI109",
    "IMDB-BINARY",
    "IMDB-MULTI",
];

/// Undirected simple graph with one-hot node features and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Tensor<f64>,
    label: usize,
}

impl Graph {
    /// Validates and canonicalises `edges`: each pair is stored as `(min, max)`
    /// and the list is sorted. Self-loops and duplicates are rejected.
    pub fn new(
        n_nodes: usize,
        edges: Vec<(usize, usize)>,
        node_features: Tensor<f64>,
        label: usize,
    ) -> Result<Self> {
        if node_features.rows() != n_nodes {
            return Err(Error::Format(format!(
                "feature rows {} != node count {n_nodes}",
                node_features.rows()
            )));
        }
        let mut canon: Vec<(usize, usize)> = Vec::with_capacity(edges.len());
        for (u, v) in edges {
            if u == v {
                return Err(Error::Format(format!("self-loop at node {u}")));
            }
            if u >= n_nodes || v >= n_nodes {
                return Err(Error::Format(format!(
                    "edge ({u}, {v}) out of range for {n_nodes} nodes"
                )));
            }
            canon.push((u.min(v), u.max(v)));
        }
        canon.sort_unstable();
        let before = canon.len();
        canon.dedup();
        if canon.len() != before {
            return Err(Error::Format("duplicate edge".into()));
        }
        Ok(Graph {
            n_nodes,
            edges: canon,
            node_features,
            label,
        })
    }

    /// Structure-only graph with a single constant feature per node.
    pub fn from_edges(n_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        Self::new(n_nodes, edges.to_vec(), Tensor::full(n_nodes, 1, 1.0), 0)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted `(u, v)` pairs with `u < v`. Position in this list is the edge id.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_features(&self) -> &Tensor<f64> {
        &self.node_features
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn with_features(mut self, features: Tensor<f64>) -> Result<Self> {
        if features.rows() != self.n_nodes {
            return Err(Error::Format(format!(
                "feature rows {} != node count {}",
                features.rows(),
                self.n_nodes
            )));
        }
        self.node_features = features;
        Ok(self)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = label;
        self
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Id of edge `{u, v}` if present.
    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureMode {
    NodeLabelsOnehot,
    DegreeOnehot,
}

impl FeatureMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMode::NodeLabelsOnehot => "node_labels",
            FeatureMode::DegreeOnehot => "degree",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "node_labels" | "node_labels_onehot" => Ok(FeatureMode::NodeLabelsOnehot),
            "degree" | "degree_onehot" => Ok(FeatureMode::DegreeOnehot),
            other => Err(Error::Config(format!("unknown feature mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub n_classes: usize,
    pub feature_mode: FeatureMode,
}

impl GraphDataset {
    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.node_features().cols())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(Graph::label).collect()
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ParseOptions {
    /// `None` uses node labels when the file exists, else degree one-hot.
    pub feature_mode: Option<FeatureMode>,
    pub max_degree: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            feature_mode: None,
            max_degree: DEFAULT_MAX_DEGREE,
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Format(format!("missing mandatory file {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

fn parse_int(s: &str, path: &Path, line: usize) -> Result<i64> {
    s.trim().parse::<i64>().map_err(|_| {
        Error::Format(format!(
            "{}:{}: expected an integer, found `{s}`",
            path.display(),
            line + 1
        ))
    })
}

/// Parses `<dir>/<name>_*.txt` with default options.
pub fn parse_tu_dataset(dir: &Path, name: &str) -> Result<GraphDataset> {
    parse_tu_dataset_with(dir, name, &ParseOptions::default())
}

pub fn parse_tu_dataset_with(dir: &Path, name: &str, opts: &ParseOptions) -> Result<GraphDataset> {
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let indicator: Vec<i64> = read_lines(&indicator_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(l, &indicator_path, i))
        .collect::<Result<_>>()?;

    let labels_path = file("graph_labels");
    let raw_labels: Vec<i64> = read_lines(&labels_path)?
        .iter()
        .enumerate()
        .map(|(i, l)| parse_int(l, &labels_path, i))
        .collect::<Result<_>>()?;
    let n_graphs = raw_labels.len();

    let a_path = file("A");
    let a_lines = read_lines(&a_path)?;

    // node -> (graph, local index)
    let mut counts = vec![0usize; n_graphs];
    let mut placement = Vec::with_capacity(indicator.len());
    for (i, &g) in indicator.iter().enumerate() {
        if g < 1 || g as usize > n_graphs {
            return Err(Error::Format(format!(
                "{}:{}: graph id {g} outside 1..={n_graphs}",
                indicator_path.display(),
                i + 1
            )));
        }
        let g = g as usize - 1;
        placement.push((g, counts[g]));
        counts[g] += 1;
    }
    let n_total = indicator.len();

    let mut edge_sets: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n_graphs];
    for (i, line) in a_lines.iter().enumerate() {
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (parse_int(a, &a_path, i)?, parse_int(b, &a_path, i)?),
            _ => {
                return Err(Error::Format(format!(
                    "{}:{}: expected `row, col`",
                    a_path.display(),
                    i + 1
                )))
            }
        };
        for id in [a, b] {
            if id < 1 || id as usize > n_total {
                return Err(Error::Format(format!(
                    "{}:{}: node id {id} outside indicator range 1..={n_total}",
                    a_path.display(),
                    i + 1
                )));
            }
        }
        let (ga, la) = placement[a as usize - 1];
        let (gb, lb) = placement[b as usize - 1];
        if ga != gb {
            return Err(Error::Format(format!(
                "{}:{}: edge ({a}, {b}) crosses graphs {} and {}",
                a_path.display(),
                i + 1,
                ga + 1,
                gb + 1
            )));
        }
        if la != lb {
            edge_sets[ga].insert((la.min(lb), la.max(lb)));
        }
    }

    let node_labels_path = file("node_labels");
    let node_labels: Option<Vec<i64>> = if node_labels_path.exists() {
        let v: Vec<i64> = read_lines(&node_labels_path)?
            .iter()
            .enumerate()
            .map(|(i, l)| parse_int(l.split(',').next().unwrap_or(""), &node_labels_path, i))
            .collect::<Result<_>>()?;
        if v.len() != n_total {
            return Err(Error::Format(format!(
                "{} has {} lines, indicator has {n_total}",
                node_labels_path.display(),
                v.len()
            )));
        }
        Some(v)
    } else {
        None
    };

    let feature_mode = match (opts.feature_mode, &node_labels) {
        (Some(FeatureMode::NodeLabelsOnehot), None) => {
            return Err(Error::Format(format!(
                "node-label features requested but {} is missing",
                node_labels_path.display()
            )))
        }
        (Some(m), _) => m,
        (None, Some(_)) => FeatureMode::NodeLabelsOnehot,
        (None, None) => FeatureMode::DegreeOnehot,
    };

    let label_map = sorted_unique_map(&raw_labels);
    let node_label_map = node_labels.as_deref().map(sorted_unique_map);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_graphs];
    for (node, &(g, _)) in placement.iter().enumerate() {
        members[g].push(node);
    }

    let mut graphs = Vec::with_capacity(n_graphs);
    for g in 0..n_graphs {
        let n = counts[g];
        let edges: Vec<(usize, usize)> = edge_sets[g].iter().copied().collect();
        let label = label_map[&raw_labels[g]];
        let skeleton = Graph::new(n, edges, Tensor::zeros(n, 0), label)?;
        let features = match feature_mode {
            FeatureMode::NodeLabelsOnehot => {
                let (labels, map) = (node_labels.as_ref().unwrap(), node_label_map.as_ref().unwrap());
                let mut f = Tensor::zeros(n, map.len());
                for (local, &node) in members[g].iter().enumerate() {
                    f.set(local, map[&labels[node]], 1.0);
                }
                f
            }
            FeatureMode::DegreeOnehot => degree_onehot_features(&skeleton, opts.max_degree),
        };
        graphs.push(skeleton.with_features(features)?);
    }

    Ok(GraphDataset {
        name: name.to_owned(),
        graphs,
        n_classes: label_map.len(),
        feature_mode,
    })
}

fn sorted_unique_map(values: &[i64]) -> BTreeMap<i64, usize> {
    let uniq: BTreeSet<i64> = values.iter().copied().collect();
    uniq.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
}

/// Row `v` is one-hot at `min(degree(v), max_degree)`; width `max_degree + 1`.
pub fn degree_onehot_features(graph: &Graph, max_degree: usize) -> Tensor<f64> {
    let mut f = Tensor::zeros(graph.n_nodes(), max_degree + 1);
    for (v, d) in graph.degrees().into_iter().enumerate() {
        f.set(v, d.min(max_degree), 1.0);
    }
    f
}

fn dataset_present(dir: &Path, name: &str) -> bool {
    ["A", "graph_indicator", "graph_labels"]
        .iter()
        .all(|s| dir.join(format!("{name}_{s}.txt")).is_file())
}

/// Downloads `<base_url>/<name>.zip` and unpacks it into `dest/<name>/`.
/// Returns immediately when the mandatory files are already there.
pub fn fetch_dataset(name: &str, base_url: &str, dest: &Path) -> Result<PathBuf, FetchError> {
    if !KNOWN_DATASETS.contains(&name) {
        return Err(FetchError::UnknownDataset(name.to_owned()));
    }
    let target = dest.join(name);
    if dataset_present(&target, name) {
        log::info!("{name} already present at {}", target.display());
        return Ok(target);
    }
    fs::create_dir_all(dest).map_err(|source| FetchError::Io {
        path: dest.to_path_buf(),
        source,
    })?;
    let probe = dest.join(".ringforge-write-probe");
    fs::write(&probe, b"").map_err(|source| FetchError::Io {
        path: dest.to_path_buf(),
        source,
    })?;
    let _ = fs::remove_file(&probe);

    let url = format!("{}/{name}.zip", base_url.trim_end_matches('/'));
    log::info!("downloading {url}");
    let bytes = http_get(&url)?;
    extract_zip(&bytes, dest)?;
    if !dataset_present(&target, name) {
        return Err(FetchError::Extract(format!(
            "archive did not contain {name}/{name}_A.txt and friends"
        )));
    }
    Ok(target)
}

fn http_get(url: &str) -> Result<Vec<u8>, FetchError> {
    let mut resp = match ureq::get(url).call() {
        Ok(r) => r,
        Err(ureq::Error::StatusCode(status)) => {
            return Err(FetchError::Http {
                url: url.to_owned(),
                status,
            })
        }
        Err(e) => {
            return Err(FetchError::Transport {
                url: url.to_owned(),
                message: e.to_string(),
            })
        }
    };
    let status = resp.status().as_u16();
    if status != 200 {
        return Err(FetchError::Http {
            url: url.to_owned(),
            status,
        });
    }
    resp.body_mut()
        .with_config()
        .limit(1 << 30)
        .read_to_vec()
        .map_err(|e| FetchError::Transport {
            url: url.to_owned(),
            message: e.to_string(),
        })
}

fn extract_zip(bytes: &[u8], dest: &Path) -> Result<(), FetchError> {
    let mut archive = zip::ZipArchive::new(std::io::Cursor::new(bytes))
        .map_err(|e| FetchError::Extract(e.to_string()))?;
    for i in 0..archive.len() {
        let mut entry = archive
            .by_index(i)
            .map_err(|e| FetchError::Extract(e.to_string()))?;
        let rel = entry
            .enclosed_name()
            .ok_or_else(|| FetchError::Extract(format!("unsafe entry path `{}`", entry.name())))?;
        let out = dest.join(rel);
        let io_err = |source| FetchError::Io {
            path: out.clone(),
            source,
        };
        if entry.is_dir() {
            fs::create_dir_all(&out).map_err(io_err)?;
            continue;
        }
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent).map_err(|source| FetchError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut buf = Vec::new();
        entry
            .read_to_end(&mut buf)
            .map_err(|e| FetchError::Extract(e.to_string()))?;
        fs::write(&out, buf).map_err(io_err)?;
    }
    Ok(())
}
