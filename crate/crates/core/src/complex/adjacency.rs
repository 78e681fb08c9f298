use std::fmt;

use super::cell::CellularComplex;
use crate::error::{Error, Result};
use crate::graph_io::Graph;

/// Dense integer matrix for exact incidence/Laplacian algebra.
#[derive(Clone, PartialEq, Eq)]
pub struct IntMatrix {
    rows: usize,
    cols: usize,
    data: Vec<i64>,
}

impl fmt::Debug for IntMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "IntMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        Ok(())
    }
}

impl IntMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        IntMatrix {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<i64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        IntMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: i64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[i64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape {
                op: "int matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self.get(i, p);
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(p, j);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "int add",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(IntMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op: "int sub",
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(IntMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0)
    }

    /// 0/1 matrix from neighbour lists: row `i` has ones at `lists[i]`.
    pub fn from_lists(lists: &[Vec<usize>], cols: usize) -> Self {
        let mut m = Self::zeros(lists.len(), cols);
        for (r, l) in lists.iter().enumerate() {
            for &c in l {
                m.set(r, c, 1);
            }
        }
        m
    }
}

/// The four neighbourhood relations between cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyKind {
    /// Faces one dimension down.
    Boundary,
    /// Cofaces one dimension up.
    Coboundary,
    /// Same-dimension cells sharing a coface.
    Upper,
    /// Same-dimension cells sharing a face.
    Lower,
}

/// Unsigned neighbour lists for dimensions 0, 1, 2, indexed by the cell
/// receiving messages. All lists are sorted and free of self-references.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdjacencyPack {
    counts: [usize; 3],
    boundary: [Vec<Vec<usize>>; 3],
    coboundary: [Vec<Vec<usize>>; 3],
    upper: [Vec<Vec<usize>>; 3],
    lower: [Vec<Vec<usize>>; 3],
}

impl AdjacencyPack {
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    /// Neighbour lists of `kind` for the `k`-cells.
    pub fn lists(&self, kind: AdjacencyKind, k: usize) -> &[Vec<usize>] {
        match kind {
            AdjacencyKind::Boundary => &self.boundary[k],
            AdjacencyKind::Coboundary => &self.coboundary[k],
            AdjacencyKind::Upper => &self.upper[k],
            AdjacencyKind::Lower => &self.lower[k],
        }
    }

    /// Materialised 0/1 matrix with one row per `k`-cell.
    ///
    /// Boundary rows index `(k-1)`-cells (the matrix `B_k^T`), coboundary
    /// rows index `(k+1)`-cells (`B_{k+1}`), upper/lower are square.
    pub fn matrix(&self, kind: AdjacencyKind, k: usize) -> IntMatrix {
        let cols = match kind {
            AdjacencyKind::Boundary => {
                if k == 0 {
                    0
                } else {
                    self.counts[k - 1]
                }
            }
            AdjacencyKind::Coboundary => {
                if k == 2 {
                    0
                } else {
                    self.counts[k + 1]
                }
            }
            AdjacencyKind::Upper | AdjacencyKind::Lower => self.counts[k],
        };
        IntMatrix::from_lists(self.lists(kind, k), cols)
    }

    /// Unsigned incidence `B_k` (rows: `(k-1)`-cells, cols: `k`-cells) for `k` in 1..=2.
    pub fn incidence(&self, k: usize) -> IntMatrix {
        IntMatrix::from_lists(&self.coboundary[k - 1], self.counts[k])
    }
}

fn sorted_unique(mut v: Vec<usize>) -> Vec<usize> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Cells sharing a neighbour in `via`, where `via[c]` lists the neighbours of
/// cell `c` and `back[x]` the cells touching `x`.
fn shared(via: &[Vec<usize>], back: &[Vec<usize>]) -> Vec<Vec<usize>> {
    via.iter()
        .enumerate()
        .map(|(c, xs)| {
            sorted_unique(
                xs.iter()
                    .flat_map(|&x| back[x].iter().copied())
                    .filter(|&o| o != c)
                    .collect(),
            )
        })
        .collect()
}

pub fn adjacency_pack(complex: &CellularComplex) -> AdjacencyPack {
    let (n0, n1, n2) = complex.counts();

    let edge_faces: Vec<Vec<usize>> = complex
        .edge_boundary()
        .iter()
        .map(|&(u, v)| vec![u, v])
        .collect();
    let ring_faces: Vec<Vec<usize>> = (0..n2)
        .map(|s| sorted_unique(complex.ring_boundary(s).to_vec()))
        .collect();

    let mut node_cofaces = vec![Vec::new(); n0];
    for (e, &(u, v)) in complex.edge_boundary().iter().enumerate() {
        node_cofaces[u].push(e);
        node_cofaces[v].push(e);
    }
    let mut edge_cofaces = vec![Vec::new(); n1];
    for (s, faces) in ring_faces.iter().enumerate() {
        for &e in faces {
            edge_cofaces[e].push(s);
        }
    }
    let node_cofaces: Vec<Vec<usize>> = node_cofaces.into_iter().map(sorted_unique).collect();
    let edge_cofaces: Vec<Vec<usize>> = edge_cofaces.into_iter().map(sorted_unique).collect();

    let upper0 = shared(&node_cofaces, &edge_faces);
    let upper1 = shared(&edge_cofaces, &ring_faces);
    let lower1 = shared(&edge_faces, &node_cofaces);
    let lower2 = shared(&ring_faces, &edge_cofaces);

    AdjacencyPack {
        counts: [n0, n1, n2],
        boundary: [vec![Vec::new(); n0], edge_faces, ring_faces],
        coboundary: [node_cofaces, edge_cofaces, vec![Vec::new(); n2]],
        upper: [upper0, upper1, vec![Vec::new(); n2]],
        lower: [vec![Vec::new(); n0], lower1, lower2],
    }
}

/// Signed node-edge incidence: column `e = (u, v)` with `u < v` holds `+1`
/// at `u` and `-1` at `v`.
pub fn oriented_incidence_b1(graph: &Graph) -> IntMatrix {
    let mut b = IntMatrix::zeros(graph.n_nodes(), graph.n_edges());
    for (e, &(u, v)) in graph.edges().iter().enumerate() {
        b.set(u, e, 1);
        b.set(v, e, -1);
    }
    b
}

/// `L_k = A_k^U + A_k^L` on the unsigned off-diagonal adjacency supports.
pub fn hodge_laplacian(pack: &AdjacencyPack, k: usize) -> Result<IntMatrix> {
    if k > 1 {
        return Err(Error::Contract(format!("hodge_laplacian supports k in {{0, 1}}, got {k}")));
    }
    pack.matrix(AdjacencyKind::Upper, k)
        .add(&pack.matrix(AdjacencyKind::Lower, k))
}

#[cfg(test)]
mod tests {
    use super::super::cell::build_complex;
    use super::*;

    fn triangle() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    /// Off-diagonal support of an integer matrix.
    fn support_offdiag(m: &IntMatrix) -> IntMatrix {
        let mut out = IntMatrix::zeros(m.shape()[0], m.shape()[1]);
        for r in 0..m.shape()[0] {
            for c in 0..m.shape()[1] {
                if r != c && m.get(r, c) != 0 {
                    out.set(r, c, 1);
                }
            }
        }
        out
    }

    #[test]
    fn filled_triangle_edges_are_upper_and_lower_adjacent() {
        let c = build_complex(&triangle(), 3).unwrap();
        let pack = adjacency_pack(&c);
        let b2 = pack.incidence(2);
        let b1 = pack.incidence(1);
        let up = support_offdiag(&b2.matmul(&b2.transpose()).unwrap());
        let low = support_offdiag(&b1.transpose().matmul(&b1).unwrap());
        assert_eq!(pack.matrix(AdjacencyKind::Upper, 1), up);
        assert_eq!(pack.matrix(AdjacencyKind::Lower, 1), low);
        for e in 0..3 {
            for f in 0..3 {
                let want = i64::from(e != f);
                assert_eq!(up.get(e, f), want);
                assert_eq!(low.get(e, f), want);
            }
        }
        let l1 = hodge_laplacian(&pack, 1).unwrap();
        assert_eq!(l1, up.add(&low).unwrap());
    }

    #[test]
    fn no_rings_means_empty_upper_edge_adjacency() {
        let p3 = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let pack = adjacency_pack(&build_complex(&p3, 12).unwrap());
        assert!(pack.lists(AdjacencyKind::Upper, 1).iter().all(Vec::is_empty));
        for kind in [AdjacencyKind::Boundary, AdjacencyKind::Coboundary, AdjacencyKind::Upper, AdjacencyKind::Lower] {
            assert!(pack.lists(kind, 2).is_empty());
        }
        assert_eq!(hodge_laplacian(&pack, 1).unwrap(), pack.matrix(AdjacencyKind::Lower, 1));
    }

    #[test]
    fn node_upper_adjacency_is_graph_adjacency() {
        let p3 = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let pack = adjacency_pack(&build_complex(&p3, 3).unwrap());
        let a = IntMatrix::from_rows(&[vec![0, 1, 0], vec![1, 0, 1], vec![0, 1, 0]]);
        assert_eq!(pack.matrix(AdjacencyKind::Upper, 0), a);
    }

    #[test]
    fn p3_laplacian_from_oriented_incidence() {
        let p3 = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let b1 = oriented_incidence_b1(&p3);
        let l0 = b1.matmul(&b1.transpose()).unwrap();
        assert_eq!(l0, IntMatrix::from_rows(&[vec![1, -1, 0], vec![-1, 2, -1], vec![0, -1, 1]]));
    }

    #[test]
    fn single_edge_orientation() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        assert_eq!(oriented_incidence_b1(&g), IntMatrix::from_rows(&[vec![1], vec![-1]]));
    }

    #[test]
    fn edgeless_laplacian_is_zero() {
        let g = Graph::from_edges(4, &[]).unwrap();
        let pack = adjacency_pack(&build_complex(&g, 3).unwrap());
        let l0 = hodge_laplacian(&pack, 0).unwrap();
        assert_eq!(l0.shape(), [4, 4]);
        assert!(l0.is_zero());
        assert!(hodge_laplacian(&pack, 2).is_err());
    }
}
