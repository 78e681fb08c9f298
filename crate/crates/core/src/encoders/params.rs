use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncoderConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Top-level parameter groups; every parameter name starts with one of these.
pub const PARAM_GROUPS: [&str; 5] = ["gin", "ccnn", "readout", "proj_common", "proj_decoupled"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
}

/// Two linear layers with a ReLU in between.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpIdx {
    pub first: LinearIdx,
    pub second: LinearIdx,
}

/// Weights for updating one cell dimension. Neighbourhoods that cannot exist
/// for the dimension (no boundary for nodes, no coboundary or upper
/// neighbours for rings, no lower neighbours for nodes) have no weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellUpdateIdx {
    pub boundary: Option<usize>,
    pub coboundary: Option<usize>,
    pub upper: Option<usize>,
    pub lower: Option<usize>,
    pub self_loop: LinearIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjGroupIdx {
    /// Head for the GIN view.
    pub gin: MlpIdx,
    /// Head shared by all cellular views.
    pub cell: MlpIdx,
}

/// Positions of every parameter tensor inside [`ModelParams`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub gin: Vec<MlpIdx>,
    pub ccnn: Vec<[CellUpdateIdx; 3]>,
    pub readout_dims: [MlpIdx; 3],
    pub readout_global: MlpIdx,
    pub proj_common: ProjGroupIdx,
    pub proj_decoupled: Vec<ProjGroupIdx>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub in_features: usize,
    pub n_granularities: usize,
}

/// Flat list of named tensors plus the layout that gives them structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    pub layout: ParamLayout,
    pub config: EncoderConfig,
    pub dims: ModelDims,
}

impl<T: Scalar> ModelParams<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameter indices belonging to `group` (see [`PARAM_GROUPS`]).
    pub fn group_indices(&self, group: &str) -> Vec<usize> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.split('.').next() == Some(group))
            .map(|(i, _)| i)
            .collect()
    }

    /// Replaces all tensors, keeping names and layout. Shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                tensors.len()
            )));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Contract(format!(
                    "{}: expected shape {:?}, got {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        let mut out = self.clone();
        out.tensors = tensors;
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }

    /// Registers every tensor as a constant leaf (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            layout: self.layout.clone(),
            config: self.config.clone(),
            dims: self.dims,
        }
    }
}

/// Tape handles for a [`ModelParams`], in the same order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

impl BoundParams {
    #[inline]
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn linear<T: Scalar>(&self, tape: &mut Tape<T>, idx: LinearIdx, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.var(idx.weight))?;
        tape.add_row_bias(y, self.var(idx.bias))
    }

    pub fn mlp<T: Scalar>(&self, tape: &mut Tape<T>, idx: MlpIdx, x: Var) -> Result<Var> {
        mlp_forward(tape, self, idx, x)
    }
}

pub fn mlp_forward<T: Scalar>(tape: &mut Tape<T>, p: &BoundParams, idx: MlpIdx, x: Var) -> Result<Var> {
    let h = p.linear(tape, idx.first, x)?;
    let h = tape.relu(h);
    p.linear(tape, idx.second, h)
}

struct Builder<T: Scalar> {
    rng: ChaCha8Rng,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Builder<T> {
    fn weight(&mut self, name: String, fan_in: usize, fan_out: usize) -> usize {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(self.rng.random_range(-bound..bound)))
            .collect();
        self.push(name, Tensor::from_vec(fan_in, fan_out, data).expect("sized"))
    }

    fn push(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let weight = self.weight(format!("{prefix}.weight"), fan_in, fan_out);
        let bias = self.push(format!("{prefix}.bias"), Tensor::zeros(1, fan_out));
        LinearIdx { weight, bias }
    }

    fn mlp(&mut self, prefix: &str, fan_in: usize, hidden: usize, fan_out: usize) -> MlpIdx {
        MlpIdx {
            first: self.linear(&format!("{prefix}.first"), fan_in, hidden),
            second: self.linear(&format!("{prefix}.second"), hidden, fan_out),
        }
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `seed`.
pub fn init_params<T: Scalar>(seed: u64, config: &EncoderConfig, dims: ModelDims) -> Result<ModelParams<T>> {
    config.validate()?;
    if dims.in_features == 0 {
        return Err(Error::Config("input feature width must be >= 1".into()));
    }
    let h = config.hidden;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        names: Vec::new(),
        tensors: Vec::new(),
    };

    let gin = (0..config.gin_layers)
        .map(|l| {
            let fan_in = if l == 0 { dims.in_features } else { h };
            b.mlp(&format!("gin.{l}"), fan_in, h, h)
        })
        .collect();

    let mut ccnn = Vec::with_capacity(config.ccnn_layers);
    for l in 0..config.ccnn_layers {
        let fan_in = if l == 0 { dims.in_features } else { h };
        let mut dims_idx = Vec::with_capacity(3);
        for k in 0..3 {
            let p = format!("ccnn.{l}.dim{k}");
            let boundary = (k >= 1).then(|| b.weight(format!("{p}.boundary"), fan_in, h));
            let coboundary = (k <= 1).then(|| b.weight(format!("{p}.coboundary"), fan_in, h));
            let upper = (k <= 1).then(|| b.weight(format!("{p}.upper"), fan_in, h));
            let lower = (k >= 1).then(|| b.weight(format!("{p}.lower"), fan_in, h));
            let self_loop = b.linear(&format!("{p}.self"), fan_in, h);
            dims_idx.push(CellUpdateIdx {
                boundary,
                coboundary,
                upper,
                lower,
                self_loop,
            });
        }
        ccnn.push([dims_idx[0], dims_idx[1], dims_idx[2]]);
    }

    let readout_dims = [
        b.mlp("readout.dim0", h, h, h),
        b.mlp("readout.dim1", h, h, h),
        b.mlp("readout.dim2", h, h, h),
    ];
    let readout_global = b.mlp("readout.global", h, h, h);

    let group = |b: &mut Builder<T>, prefix: &str| ProjGroupIdx {
        gin: b.mlp(&format!("{prefix}.gin"), h, h, config.proj_dim),
        cell: b.mlp(&format!("{prefix}.cell"), h, h, config.proj_dim),
    };
    let proj_common = group(&mut b, "proj_common");
    let proj_decoupled = (0..dims.n_granularities)
        .map(|a| group(&mut b, &format!("proj_decoupled.{a}")))
        .collect();

    Ok(ModelParams {
        names: b.names,
        tensors: b.tensors,
        layout: ParamLayout {
            gin,
            ccnn,
            readout_dims,
            readout_global,
            proj_common,
            proj_decoupled,
        },
        config: config.clone(),
        dims,
    })
}
