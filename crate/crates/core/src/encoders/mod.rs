//! Graph (GIN) and cellular (CCNN) encoders with projection heads.
//!
//! Everything here aggregates by summation and activates with ReLU, so both
//! encoders are invariant to relabelling nodes or cells within a graph.

mod batch;
mod ccnn;
mod gin;
mod params;
mod projection;

pub use batch::{ComplexBatch, GraphBatch, PreparedComplex, PreparedGraph};
pub use ccnn::{ccnn_encode, ccnn_encode_prepared, ccnn_forward};
pub use gin::{gin_encode, gin_forward};
pub use params::{
    init_params, mlp_forward, BoundParams, CellUpdateIdx, LinearIdx, MlpIdx, ModelDims, ModelParams, ParamLayout,
    ProjGroupIdx, PARAM_GROUPS,
};
pub use projection::{project, project_forward};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture sizes. Aggregation is always a sum, activation always ReLU.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub gin_layers: usize,
    pub ccnn_layers: usize,
    pub hidden: usize,
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            gin_layers: 3,
            ccnn_layers: 2,
            hidden: 32,
            proj_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gin_layers == 0 || self.ccnn_layers == 0 {
            return Err(Error::Config("encoder layer counts must be >= 1".into()));
        }
        if self.hidden == 0 || self.proj_dim == 0 {
            return Err(Error::Config("hidden and projection widths must be >= 1".into()));
        }
        Ok(())
    }
}
