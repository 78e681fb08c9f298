use super::rings::{enumerate_rings_capped, Ring, DEFAULT_RING_CAP};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graph_io::Graph;
use crate::scalar::Scalar;

/// A graph with its rings of length `<= granularity` attached as 2-cells.
///
/// 0-cells are the graph vertices, 1-cells the graph edges in sorted
/// endpoint order, 2-cells the rings in `(length, vertices)` order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellularComplex {
    n0: usize,
    edges: Vec<(usize, usize)>,
    rings: Vec<Ring>,
    granularity: usize,
}

impl CellularComplex {
    pub(crate) fn from_parts(n0: usize, edges: Vec<(usize, usize)>, rings: Vec<Ring>, granularity: usize) -> Result<Self> {
        for &(u, v) in &edges {
            if u >= v || v >= n0 {
                return Err(Error::Format(format!("invalid 1-cell ({u}, {v}) with n0 = {n0}")));
            }
        }
        for r in &rings {
            if r.len() < 3 || r.len() > granularity {
                return Err(Error::Format(format!(
                    "ring of length {} outside 3..={granularity}",
                    r.len()
                )));
            }
            if r.edges().len() != r.len() || r.edges().iter().any(|&e| e >= edges.len()) {
                return Err(Error::Format("ring boundary references a missing 1-cell".into()));
            }
        }
        Ok(CellularComplex {
            n0,
            edges,
            rings,
            granularity,
        })
    }

    /// Cell counts `(n0, n1, n2)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.n0, self.edges.len(), self.rings.len())
    }

    pub fn n_cells(&self, dim: usize) -> usize {
        match dim {
            0 => self.n0,
            1 => self.edges.len(),
            2 => self.rings.len(),
            _ => 0,
        }
    }

    /// The two 0-cells bounding each 1-cell.
    pub fn edge_boundary(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn rings(&self) -> &[Ring] {
        &self.rings
    }

    /// Boundary 1-cells of 2-cell `sigma`, in cycle order.
    pub fn ring_boundary(&self, sigma: usize) -> &[usize] {
        self.rings[sigma].edges()
    }

    pub fn granularity(&self) -> usize {
        self.granularity
    }
}

/// Lifts `graph` to `X_m(G)` using the default ring cap.
pub fn build_complex(graph: &Graph, m: usize) -> Result<CellularComplex> {
    build_complex_capped(graph, m, DEFAULT_RING_CAP)
}

pub(crate) fn build_complex_capped(graph: &Graph, m: usize, cap: usize) -> Result<CellularComplex> {
    let rings = enumerate_rings_capped(graph, m, cap)?;
    CellularComplex::from_parts(graph.n_nodes(), graph.edges().to_vec(), rings, m)
}

/// Initial features per dimension: nodes keep `node_features`, each edge is
/// the mean of its endpoints, each ring the mean of its boundary edges.
pub fn init_cell_features<T: Scalar>(
    complex: &CellularComplex,
    node_features: &Tensor<T>,
) -> Result<[Tensor<T>; 3]> {
    let (n0, n1, n2) = complex.counts();
    if node_features.rows() != n0 {
        return Err(Error::Shape {
            op: "init_cell_features",
            left: [n0, node_features.cols()],
            right: node_features.shape(),
        });
    }
    let width = node_features.cols();
    let half = T::lit(0.5);
    let mut x1 = Tensor::zeros(n1, width);
    for (e, &(u, v)) in complex.edge_boundary().iter().enumerate() {
        let (ru, rv) = (node_features.row(u), node_features.row(v));
        for ((o, &a), &b) in x1.row_mut(e).iter_mut().zip(ru).zip(rv) {
            *o = (a + b) * half;
        }
    }
    let mut x2 = Tensor::zeros(n2, width);
    for s in 0..n2 {
        let boundary = complex.ring_boundary(s);
        let inv = T::one() / T::from_usize_lossy(boundary.len());
        for &e in boundary {
            let re = x1.row(e).to_vec();
            for (o, a) in x2.row_mut(s).iter_mut().zip(re) {
                *o += a * inv;
            }
        }
    }
    Ok([node_features.clone(), x1, x2])
}
