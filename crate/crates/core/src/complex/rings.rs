use crate::error::{Error, Result};
use crate::graph_io::Graph;

/// Upper bound on the maximum ring size accepted by default.
pub const DEFAULT_RING_CAP: usize = 15;

/// A chordless cycle in canonical form: starts at its smallest vertex and
/// proceeds towards the smaller of that vertex's two cycle neighbours.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ring {
    vertices: Vec<usize>,
    edges: Vec<usize>,
}

impl Ring {
    /// Builds a ring from a canonical vertex cycle, resolving edge ids
    /// against `graph`. `edges[i]` joins `vertices[i]` and `vertices[i + 1]`
    /// (wrapping around).
    pub fn from_cycle(graph: &Graph, vertices: Vec<usize>) -> Result<Self> {
        let len = vertices.len();
        if len < 3 {
            return Err(Error::Format(format!("ring of length {len}")));
        }
        let mut edges = Vec::with_capacity(len);
        for i in 0..len {
            let (u, v) = (vertices[i], vertices[(i + 1) % len]);
            let id = graph
                .edge_id(u, v)
                .ok_or_else(|| Error::Format(format!("ring step ({u}, {v}) is not an edge")))?;
            edges.push(id);
        }
        Ok(Ring { vertices, edges })
    }

    pub(crate) fn from_parts(vertices: Vec<usize>, edges: Vec<usize>) -> Self {
        Ring { vertices, edges }
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    pub fn edges(&self) -> &[usize] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// All chordless cycles of length `3..=m`, each once, sorted by
/// `(length, vertices)`.
pub fn enumerate_rings(graph: &Graph, m: usize) -> Result<Vec<Ring>> {
    enumerate_rings_capped(graph, m, DEFAULT_RING_CAP)
}

pub fn enumerate_rings_capped(graph: &Graph, m: usize, cap: usize) -> Result<Vec<Ring>> {
    if m < 3 {
        return Err(Error::Config(format!("maximum ring size must be >= 3, got {m}")));
    }
    if m > cap {
        return Err(Error::Config(format!("maximum ring size {m} exceeds cap {cap}")));
    }
    let n = graph.n_nodes();
    let adj = graph.adjacency();
    let mut search = Search {
        adj: &adj,
        adjacent: AdjMatrix::new(n, &adj),
        on_path: vec![false; n],
        // number of interior path vertices adjacent to each vertex
        blocked: vec![0u32; n],
        path: Vec::with_capacity(m),
        max_len: m,
        found: Vec::new(),
    };
    for s in 0..n {
        for &v1 in &adj[s] {
            if v1 <= s {
                continue;
            }
            search.path.clear();
            search.path.extend([s, v1]);
            search.on_path[s] = true;
            search.on_path[v1] = true;
            search.extend();
            search.on_path[s] = false;
            search.on_path[v1] = false;
        }
    }
    let mut cycles = search.found;
    cycles.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    cycles
        .into_iter()
        .map(|c| Ring::from_cycle(graph, c))
        .collect()
}

struct AdjMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl AdjMatrix {
    fn new(n: usize, adj: &[Vec<usize>]) -> Self {
        let mut bits = vec![false; n * n];
        for (u, nbrs) in adj.iter().enumerate() {
            for &v in nbrs {
                bits[u * n + v] = true;
            }
        }
        AdjMatrix { n, bits }
    }

    #[inline]
    fn has(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.n + v]
    }
}

struct Search<'a> {
    adj: &'a [Vec<usize>],
    adjacent: AdjMatrix,
    on_path: Vec<bool>,
    blocked: Vec<u32>,
    path: Vec<usize>,
    max_len: usize,
    found: Vec<Vec<usize>>,
}

impl Search<'_> {
    /// Path invariants: every vertex exceeds `path[0]`, no interior vertex is
    /// adjacent to `path[0]`, and the path is induced.
    fn extend(&mut self) {
        let s = self.path[0];
        let last = *self.path.last().unwrap();
        for idx in 0..self.adj[last].len() {
            let w = self.adj[last][idx];
            if w <= s || self.on_path[w] || self.blocked[w] > 0 {
                continue;
            }
            if self.adjacent.has(w, s) {
                // closing the cycle; w can never be extended past without a chord
                if self.path[1] < w && self.path.len() < self.max_len {
                    let mut cycle = self.path.clone();
                    cycle.push(w);
                    self.found.push(cycle);
                }
                continue;
            }
            if self.path.len() + 2 > self.max_len {
                continue;
            }
            for &nb in &self.adj[last] {
                self.blocked[nb] += 1;
            }
            self.path.push(w);
            self.on_path[w] = true;
            self.extend();
            self.on_path[w] = false;
            self.path.pop();
            for &nb in &self.adj[last] {
                self.blocked[nb] -= 1;
            }
        }
    }
}
