#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ringforge::complex::{build_complex, ComplexCache};
use ringforge::graph_io::{FeatureMode, Graph, GraphDataset};
use ringforge::Tensor64;

pub fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Erdos-Renyi graph on `n` nodes.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Graph on `n` nodes whose edges are the set bits of `mask` over the
/// pairs `(u, v)`, `u < v`, in lexicographic order.
pub fn graph_from_mask(n: usize, mask: u64) -> Graph {
    let mut edges = Vec::new();
    let mut bit = 0;
    for u in 0..n {
        for v in u + 1..n {
            if mask >> bit & 1 == 1 {
                edges.push((u, v));
            }
            bit += 1;
        }
    }
    Graph::from_edges(n, &edges).unwrap()
}

pub fn is_connected(g: &Graph) -> bool {
    let n = g.n_nodes();
    if n == 0 {
        return true;
    }
    let adj = g.adjacency();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Vertex sets of all induced cycles of length `3..=m`, by subset search.
pub fn brute_force_rings(g: &Graph, m: usize) -> BTreeSet<Vec<usize>> {
    let n = g.n_nodes();
    assert!(n <= 20);
    let adj = g.adjacency();
    let mut out = BTreeSet::new();
    for mask in 0u32..(1 << n) {
        let k = mask.count_ones() as usize;
        if k < 3 || k > m {
            continue;
        }
        let verts: Vec<usize> = (0..n).filter(|&v| mask >> v & 1 == 1).collect();
        let inside = |v: usize| mask >> v & 1 == 1;
        if verts.iter().any(|&v| adj[v].iter().filter(|&&w| inside(w)).count() != 2) {
            continue;
        }
        // 2-regular: a single cycle iff connected
        let mut seen = 1u32 << verts[0];
        let mut stack = vec![verts[0]];
        while let Some(u) = stack.pop() {
            for &w in &adj[u] {
                if inside(w) && seen >> w & 1 == 0 {
                    seen |= 1 << w;
                    stack.push(w);
                }
            }
        }
        if seen == mask {
            out.insert(verts);
        }
    }
    out
}

fn cycle(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|v| (v, (v + 1) % n)).collect()
}

/// Small graphs whose rings have lengths 3 to 11, so the granularities 6, 9
/// and 12 see different complexes. Node features are two binary columns.
pub fn toy_graph(i: usize) -> Graph {
    let (n, edges) = match i % 7 {
        0 => (4, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]),
        1 => (7, cycle(7)),
        2 => {
            let mut e = cycle(6);
            e.push((5, 6));
            (7, e)
        }
        3 => (10, cycle(10)),
        4 => (5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]),
        5 => {
            let mut e = cycle(9);
            e.push((0, 2));
            (9, e)
        }
        _ => (11, cycle(11)),
    };
    let feats = (0..n)
        .flat_map(|v| [((v + i) % 2) as f64, (v * (i + 1)).is_multiple_of(3) as u8 as f64])
        .collect();
    Graph::new(n, edges, Tensor64::from_vec(n, 2, feats).unwrap(), i % 2).unwrap()
}

pub fn toy_data() -> (GraphDataset, ComplexCache) {
    toy_data_with(7, &[6, 9])
}

pub fn toy_data_with(n_graphs: usize, granularities: &[usize]) -> (GraphDataset, ComplexCache) {
    let graphs: Vec<Graph> = (0..n_graphs).map(toy_graph).collect();
    let complexes = granularities
        .iter()
        .map(|&m| graphs.iter().map(|g| build_complex(g, m).unwrap()).collect())
        .collect();
    let ds = GraphDataset {
        name: "toy".into(),
        graphs,
        n_classes: 2,
        feature_mode: FeatureMode::NodeLabelsOnehot,
    };
    let cache = ComplexCache::new("toy".into(), granularities.to_vec(), complexes).unwrap();
    (ds, cache)
}

/// Maximum finite-difference relative error of the full objective on the
/// samples `idx`, per parameter group. The uncertainty weights are computed
/// once and then frozen so the objective is a smooth function of the
/// parameters.
pub fn objective_grad_errors(
    ds: &GraphDataset,
    cache: &ComplexCache,
    encoder: &ringforge::encoders::EncoderConfig,
    loss: &ringforge::objectives::LossConfig,
    idx: &[usize],
    h: f64,
) -> Vec<(&'static str, f64)> {
    use ringforge::autodiff::{finite_diff_check_many, Tape};
    use ringforge::encoders::{init_params, BoundParams, ModelDims, PARAM_GROUPS};
    use ringforge::objectives::OmegaMode;
    use ringforge::training::{batch_objective, PreparedData};

    let data = PreparedData::<f64>::new(ds, cache, &cache.granularities).unwrap();
    let dims = ModelDims {
        in_features: data.feature_dim,
        n_granularities: cache.granularities.len(),
    };
    let params = init_params(3, encoder, dims).unwrap();

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = batch_objective(&mut tape, &params, &bound, &data, idx, loss, &OmegaMode::Compute).unwrap();
    let frozen = OmegaMode::Frozen(out.omegas.clone());

    let errs = finite_diff_check_many(
        |tape, vars| {
            let bound = BoundParams { vars: vars.to_vec() };
            Ok(batch_objective(tape, &params, &bound, &data, idx, loss, &frozen)?.total)
        },
        params.tensors(),
        h,
    )
    .unwrap();
    PARAM_GROUPS
        .iter()
        .map(|&g| {
            let worst = params.group_indices(g).into_iter().map(|i| errs[i]).fold(0.0, f64::max);
            (g, worst)
        })
        .collect()
}
