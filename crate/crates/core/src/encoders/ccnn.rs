use std::sync::Arc;

use super::{BoundParams, ComplexBatch, ModelParams, PreparedComplex};
use crate::autodiff::{NeighborIndex, Tape, Tensor, Var};
use crate::complex::CellularComplex;
use crate::error::{Error, Result};
use crate::graph_io::Graph;
use crate::scalar::Scalar;

fn message<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &BoundParams,
    weight: Option<usize>,
    src: Option<Var>,
    index: &Arc<NeighborIndex>,
) -> Result<Option<Var>> {
    match (weight, src) {
        (Some(w), Some(src)) => {
            let agg = tape.gather_sum(src, index.clone())?;
            Ok(Some(tape.matmul(agg, bound.var(w))?))
        }
        _ => Ok(None),
    }
}

/// Cellular message passing followed by per-dimension sum readouts.
/// Returns a `(n_complexes, hidden)` variable.
pub fn ccnn_forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    batch: &ComplexBatch<T>,
) -> Result<Var> {
    let mut z: [Var; 3] = std::array::from_fn(|k| tape.constant(batch.features[k].clone()));
    for layer in &params.layout.ccnn {
        let mut next = z;
        for (k, upd) in layer.iter().enumerate() {
            let below = k.checked_sub(1).map(|j| z[j]);
            let above = (k < 2).then(|| z[k + 1]);
            let mut acc = bound.linear(tape, upd.self_loop, z[k])?;
            let parts = [
                message(tape, bound, upd.boundary, below, &batch.boundary[k])?,
                message(tape, bound, upd.coboundary, above, &batch.coboundary[k])?,
                message(tape, bound, upd.upper, Some(z[k]), &batch.upper[k])?,
                message(tape, bound, upd.lower, Some(z[k]), &batch.lower[k])?,
            ];
            for m in parts.into_iter().flatten() {
                acc = tape.add(acc, m)?;
            }
            next[k] = tape.relu(acc);
        }
        z = next;
    }

    let mut pooled = None;
    for k in 0..3 {
        let s = tape.gather_sum(z[k], batch.membership[k].clone())?;
        let r = bound.mlp(tape, params.layout.readout_dims[k], s)?;
        let r = tape.scale_rows(r, batch.presence[k].clone())?;
        pooled = Some(match pooled {
            None => r,
            Some(acc) => tape.add(acc, r)?,
        });
    }
    let pooled = pooled.expect("three dimensions");
    bound.mlp(tape, params.layout.readout_global, pooled)
}

/// Complex-level CCNN embeddings. Each complex is paired with the graph it
/// was lifted from, which supplies the node features.
pub fn ccnn_encode<T: Scalar>(items: &[(&CellularComplex, &Graph)], params: &ModelParams<T>) -> Result<Tensor<T>> {
    let prepared = items
        .iter()
        .map(|(c, g)| PreparedComplex::with_graph(c, g))
        .collect::<Result<Vec<_>>>()?;
    ccnn_encode_prepared(&prepared.iter().collect::<Vec<_>>(), params)
}

/// As [`ccnn_encode`] for complexes whose features are already attached.
pub fn ccnn_encode_prepared<T: Scalar>(
    complexes: &[&PreparedComplex<T>],
    params: &ModelParams<T>,
) -> Result<Tensor<T>> {
    if let Some(f) = complexes.iter().find_map(|c| c.features.as_ref()) {
        if f[0].cols() != params.dims.in_features {
            return Err(Error::Shape {
                op: "ccnn_encode",
                left: [f[0].rows(), params.dims.in_features],
                right: f[0].shape(),
            });
        }
    }
    let batch = ComplexBatch::new(complexes)?;
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let out = ccnn_forward(&mut tape, params, &bound, &batch)?;
    Ok(tape.value(out).clone())
}
