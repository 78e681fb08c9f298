use crate::autodiff::Tensor;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Gradients are checked before anything is
/// modified, so a failed step leaves parameters and state untouched.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    hp: &AdamHyper,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} parameters, {} gradients, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.names().iter().zip(params.tensors()).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numerics(format!("non-finite gradient for parameter {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    let (lr, eps) = (T::lit(hp.lr), T::lit(hp.eps));
    for (i, g) in grads.iter().enumerate() {
        let p = &mut params.tensors_mut()[i];
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{init_params, EncoderConfig, ModelDims};

    fn small() -> ModelParams<f64> {
        let cfg = EncoderConfig {
            gin_layers: 1,
            ccnn_layers: 1,
            hidden: 2,
            proj_dim: 2,
        };
        init_params(
            0,
            &cfg,
            ModelDims {
                in_features: 1,
                n_granularities: 1,
            },
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = small();
        let before = p.clone();
        let g: Vec<_> = p.tensors().iter().map(|t| Tensor::full(t.rows(), t.cols(), 1.0)).collect();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamHyper::default()).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y + 0.001).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_gradient_is_no_op() {
        let mut p = small();
        let before = p.clone();
        let g: Vec<_> = p.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, &AdamHyper::default()).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_named() {
        let mut p = small();
        let mut g: Vec<_> = p.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        g[3].data_mut()[0] = f64::NAN;
        let mut s = AdamState::new(&p);
        let name = p.names()[3].clone();
        match adam_step(&mut p, &g, &mut s, &AdamHyper::default()) {
            Err(Error::Numerics(msg)) => assert!(msg.contains(&name)),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.step, 0);
    }
}
