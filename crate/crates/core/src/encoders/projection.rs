use super::{BoundParams, MlpIdx, ModelParams};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;
use crate::scalar::Scalar;

/// Two-layer head followed by row-wise L2 normalisation.
pub fn project_forward<T: Scalar>(tape: &mut Tape<T>, bound: &BoundParams, head: MlpIdx, h: Var) -> Result<Var> {
    let z = bound.mlp(tape, head, h)?;
    Ok(tape.normalize_rows(z))
}

/// Applies `head` to `h`. Also returns the rows whose pre-normalisation
/// output was exactly zero; those rows stay zero instead of becoming NaN.
pub fn project<T: Scalar>(h: &Tensor<T>, params: &ModelParams<T>, head: MlpIdx) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut tape = Tape::new();
    let bound = params.bind_frozen(&mut tape);
    let x = tape.constant(h.clone());
    let z = bound.mlp(&mut tape, head, x)?;
    let degenerate = (0..tape.value(z).rows())
        .filter(|&r| tape.value(z).row(r).iter().all(|v| *v == T::zero()))
        .collect();
    let out = tape.normalize_rows(z);
    Ok((tape.value(out).clone(), degenerate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_params, EncoderConfig, ModelDims};

    #[test]
    fn unit_rows_and_zero_input() {
        let p: ModelParams<f64> = init_params(
            2,
            &EncoderConfig::default(),
            ModelDims {
                in_features: 1,
                n_granularities: 2,
            },
        )
        .unwrap();
        let mut h = Tensor::full(3, 32, 0.3);
        h.row_mut(1).iter_mut().for_each(|v| *v = 0.0);
        let (z, _) = project(&h, &p, p.layout.proj_common.gin).unwrap();
        assert!(z.is_finite());
        for r in [0, 2] {
            let n: f64 = z.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        // zero biases at init send a zero row to a zero output
        let (_, zero_rows) = project(&h, &p, p.layout.proj_common.cell).unwrap();
        assert_eq!(zero_rows, vec![1]);
    }
}
