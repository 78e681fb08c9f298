//! Ring-based lifting of graphs into 2-dimensional cellular complexes.
//!
//! For a maximum ring size `m`, every chordless cycle of length `3..=m`
//! becomes a 2-cell glued along its edges. Complexes for increasing `m`
//! are nested: rings are ordered by `(length, vertices)`, so the rings of a
//! coarser complex form a prefix of any finer one.

mod adjacency;
mod cache;
mod cell;
mod rings;

pub use adjacency::{adjacency_pack, hodge_laplacian, oriented_incidence_b1, AdjacencyKind, AdjacencyPack, IntMatrix};
pub use cache::{
    dataset_hash, load_cache, load_dataset, preprocess_dataset, write_dataset, ComplexCache, CACHE_FORMAT_VERSION,
};
pub use cell::{build_complex, init_cell_features, CellularComplex};
pub use rings::{enumerate_rings, enumerate_rings_capped, Ring, DEFAULT_RING_CAP};
