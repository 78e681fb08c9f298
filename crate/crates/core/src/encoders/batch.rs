use std::sync::Arc;

use crate::autodiff::{NeighborIndex, Tensor};
use crate::complex::{adjacency_pack, init_cell_features, AdjacencyKind, CellularComplex};
use crate::error::{Error, Result};
use crate::graph_io::Graph;
use crate::scalar::Scalar;

/// Per-graph GIN input, built once and reused across epochs.
#[derive(Clone, Debug)]
pub struct PreparedGraph<T: Scalar> {
    pub features: Tensor<T>,
    pub adjacency: NeighborIndex,
}

impl<T: Scalar> PreparedGraph<T> {
    pub fn from_graph(graph: &Graph) -> Self {
        PreparedGraph {
            features: graph.node_features().cast(),
            adjacency: NeighborIndex::from_lists(&graph.adjacency()),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Per-complex CCNN input. Features are attached separately; encoding a
/// complex without them is a contract violation.
#[derive(Clone, Debug)]
pub struct PreparedComplex<T: Scalar> {
    counts: [usize; 3],
    pub boundary: [NeighborIndex; 3],
    pub coboundary: [NeighborIndex; 3],
    pub upper: [NeighborIndex; 3],
    pub lower: [NeighborIndex; 3],
    pub features: Option<[Tensor<T>; 3]>,
}

impl<T: Scalar> PreparedComplex<T> {
    pub fn from_complex(complex: &CellularComplex) -> Self {
        let pack = adjacency_pack(complex);
        let idx = |kind| std::array::from_fn(|k| NeighborIndex::from_lists(pack.lists(kind, k)));
        PreparedComplex {
            counts: pack.counts(),
            boundary: idx(AdjacencyKind::Boundary),
            coboundary: idx(AdjacencyKind::Coboundary),
            upper: idx(AdjacencyKind::Upper),
            lower: idx(AdjacencyKind::Lower),
            features: None,
        }
    }

    /// Builds adjacency and lifts the graph's node features onto all cells.
    pub fn with_graph(complex: &CellularComplex, graph: &Graph) -> Result<Self> {
        let mut out = Self::from_complex(complex);
        out.features = Some(init_cell_features(complex, &graph.node_features().cast())?);
        Ok(out)
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }
}

/// Disjoint union of graphs, with a readout index mapping each graph to its nodes.
#[derive(Clone, Debug)]
pub struct GraphBatch<T: Scalar> {
    pub features: Tensor<T>,
    pub adjacency: Arc<NeighborIndex>,
    pub membership: Arc<NeighborIndex>,
}

fn check_width(op: &'static str, expected: usize, t: &Tensor<impl Scalar>) -> Result<()> {
    if t.cols() != expected {
        return Err(Error::Shape {
            op,
            left: [t.rows(), expected],
            right: t.shape(),
        });
    }
    Ok(())
}

fn membership(sizes: impl Iterator<Item = usize>) -> NeighborIndex {
    let mut start = 0;
    let lists: Vec<Vec<usize>> = sizes
        .map(|n| {
            let l = (start..start + n).collect();
            start += n;
            l
        })
        .collect();
    NeighborIndex::from_lists(&lists)
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new(graphs: &[&PreparedGraph<T>]) -> Result<Self> {
        let width = graphs.first().map_or(0, |g| g.features.cols());
        let mut adjacency = NeighborIndex::empty_rows(0);
        let mut offset = 0;
        for g in graphs {
            check_width("graph batch", width, &g.features)?;
            adjacency.extend_shifted(&g.adjacency, offset);
            offset += g.n_nodes();
        }
        let parts: Vec<&Tensor<T>> = graphs.iter().map(|g| &g.features).collect();
        let features = if parts.is_empty() {
            Tensor::zeros(0, 0)
        } else {
            Tensor::vstack(&parts)?
        };
        Ok(GraphBatch {
            features,
            adjacency: Arc::new(adjacency),
            membership: Arc::new(membership(graphs.iter().map(|g| g.n_nodes()))),
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.membership.len()
    }
}

/// Disjoint union of complexes. Index arrays are per receiving dimension.
#[derive(Clone, Debug)]
pub struct ComplexBatch<T: Scalar> {
    pub features: [Tensor<T>; 3],
    pub boundary: [Arc<NeighborIndex>; 3],
    pub coboundary: [Arc<NeighborIndex>; 3],
    pub upper: [Arc<NeighborIndex>; 3],
    pub lower: [Arc<NeighborIndex>; 3],
    pub membership: [Arc<NeighborIndex>; 3],
    /// 1 where the complex has at least one cell of the dimension, else 0.
    pub presence: [Vec<T>; 3],
}

impl<T: Scalar> ComplexBatch<T> {
    pub fn new(complexes: &[&PreparedComplex<T>]) -> Result<Self> {
        let mut feats: Vec<&[Tensor<T>; 3]> = Vec::with_capacity(complexes.len());
        for c in complexes {
            feats.push(c.features.as_ref().ok_or_else(|| {
                Error::Contract("cell features must be initialised before encoding".into())
            })?);
        }
        let width = feats.first().map_or(0, |f| f[0].cols());
        for f in &feats {
            for t in f.iter() {
                check_width("complex batch", width, t)?;
            }
        }
        let features: [Tensor<T>; 3] = std::array::from_fn(|k| {
            let mut data = Vec::new();
            let mut rows = 0;
            for f in &feats {
                data.extend_from_slice(f[k].data());
                rows += f[k].rows();
            }
            Tensor::from_vec(rows, width, data).expect("widths checked")
        });

        let mut boundary: [NeighborIndex; 3] = Default::default();
        let mut coboundary: [NeighborIndex; 3] = Default::default();
        let mut upper: [NeighborIndex; 3] = Default::default();
        let mut lower: [NeighborIndex; 3] = Default::default();
        let mut offsets = [0usize; 3];
        for c in complexes {
            for k in 0..3 {
                let below = if k == 0 { 0 } else { offsets[k - 1] };
                let above = if k == 2 { 0 } else { offsets[k + 1] };
                boundary[k].extend_shifted(&c.boundary[k], below);
                coboundary[k].extend_shifted(&c.coboundary[k], above);
                upper[k].extend_shifted(&c.upper[k], offsets[k]);
                lower[k].extend_shifted(&c.lower[k], offsets[k]);
            }
            for (o, n) in offsets.iter_mut().zip(c.counts) {
                *o += n;
            }
        }
        let arc = |a: [NeighborIndex; 3]| a.map(Arc::new);
        Ok(ComplexBatch {
            features,
            boundary: arc(boundary),
            coboundary: arc(coboundary),
            upper: arc(upper),
            lower: arc(lower),
            membership: std::array::from_fn(|k| Arc::new(membership(complexes.iter().map(|c| c.counts[k])))),
            presence: std::array::from_fn(|k| {
                complexes
                    .iter()
                    .map(|c| if c.counts[k] > 0 { T::one() } else { T::zero() })
                    .collect()
            }),
        })
    }

    pub fn n_complexes(&self) -> usize {
        self.presence[0].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;

    fn tri_and_path() -> (Graph, Graph) {
        (
            Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap(),
            Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap(),
        )
    }

    #[test]
    fn graph_batch_shifts_indices() {
        let (a, b) = tri_and_path();
        let pa = PreparedGraph::<f64>::from_graph(&a);
        let pb = PreparedGraph::<f64>::from_graph(&b);
        let batch = GraphBatch::new(&[&pa, &pb]).unwrap();
        assert_eq!(batch.features.rows(), 6);
        assert_eq!(batch.adjacency.neighbors(4), &[3, 5]);
        assert_eq!(batch.membership.neighbors(1), &[3, 4, 5]);
    }

    #[test]
    fn complex_batch_shifts_and_presence() {
        let (a, b) = tri_and_path();
        let ca = PreparedComplex::<f64>::with_graph(&build_complex(&a, 6).unwrap(), &a).unwrap();
        let cb = PreparedComplex::<f64>::with_graph(&build_complex(&b, 6).unwrap(), &b).unwrap();
        let batch = ComplexBatch::new(&[&ca, &cb]).unwrap();
        assert_eq!(batch.features[1].rows(), 5);
        assert_eq!(batch.features[2].rows(), 1);
        assert_eq!(batch.presence[2], vec![1.0, 0.0]);
        // edge (0,1) of the path graph becomes batch edge 3 with nodes 3 and 4
        assert_eq!(batch.boundary[1].neighbors(3), &[3, 4]);
        assert_eq!(batch.coboundary[1].neighbors(3), &[] as &[usize]);
        assert_eq!(batch.membership[2].neighbors(1), &[] as &[usize]);
    }

    #[test]
    fn missing_features_is_contract_error() {
        let (a, _) = tri_and_path();
        let c = PreparedComplex::<f64>::from_complex(&build_complex(&a, 6).unwrap());
        assert!(matches!(ComplexBatch::new(&[&c]), Err(Error::Contract(_))));
    }
}
