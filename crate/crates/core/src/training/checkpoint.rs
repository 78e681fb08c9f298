use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::autodiff::Tensor;
use crate::binio::{Reader, Writer};
use crate::encoders::{init_params, ModelDims, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Summary of one finished epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean weight per decoupled space over the epoch's batches.
    pub omega: Vec<f64>,
    pub batches: usize,
}

/// Everything needed to continue training or to embed: parameters,
/// optimiser moments, configuration, shuffle RNG position and history.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub dataset: String,
    pub dataset_hash: String,
    pub config: TrainConfig,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng_word_pos: u128,
    pub history: Vec<EpochRecord>,
    pub params: ModelParams<f64>,
    pub adam: AdamState<f64>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dataset: String,
    dataset_hash: String,
    config: TrainConfig,
    epoch: usize,
    rng_word_pos: String,
    history: Vec<EpochRecord>,
    in_features: usize,
}

fn write_tensor(w: &mut Writer, t: &Tensor<f64>) -> Result<()> {
    w.usize32(t.rows())?;
    w.usize32(t.cols())?;
    for &x in t.data() {
        w.f64(x);
    }
    Ok(())
}

fn read_tensor(r: &mut Reader, expect: [usize; 2], name: &str) -> Result<Tensor<f64>> {
    let shape = [r.usize32()?, r.usize32()?];
    if shape != expect {
        return Err(Error::Format(format!(
            "checkpoint tensor {name} has shape {shape:?}, expected {expect:?}"
        )));
    }
    let data = (0..shape[0] * shape[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    Tensor::from_vec(shape[0], shape[1], data)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = Meta {
            dataset: self.dataset.clone(),
            dataset_hash: self.dataset_hash.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            rng_word_pos: self.rng_word_pos.to_string(),
            history: self.history.clone(),
            in_features: self.params.dims.in_features,
        };
        let json = serde_json::to_string(&meta).map_err(|e| Error::Format(e.to_string()))?;
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.str(&json)?;
        w.usize32(self.params.len())?;
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            w.str(name)?;
            write_tensor(&mut w, t)?;
        }
        w.u64(self.adam.step);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            write_tensor(&mut w, m)?;
            write_tensor(&mut w, v)?;
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "checkpoint");
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta: Meta = serde_json::from_str(&r.str()?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
        let rng_word_pos = meta
            .rng_word_pos
            .parse()
            .map_err(|_| Error::Format("checkpoint RNG position is not an integer".into()))?;
        let template = init_params(
            meta.config.seed,
            &meta.config.encoder,
            ModelDims {
                in_features: meta.in_features,
                n_granularities: meta.config.granularities.len(),
            },
        )?;
        let count = r.usize32()?;
        if count != template.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} tensors, configuration implies {}",
                template.len()
            )));
        }
        let mut tensors = Vec::with_capacity(count);
        for (name, t) in template.names().iter().zip(template.tensors()) {
            let stored = r.str()?;
            if &stored != name {
                return Err(Error::Format(format!("checkpoint tensor {stored:?} where {name:?} was expected")));
            }
            tensors.push(read_tensor(&mut r, t.shape(), name)?);
        }
        let params = template.with_tensors(tensors)?;
        let step = r.u64()?;
        let mut m = Vec::with_capacity(count);
        let mut v = Vec::with_capacity(count);
        for (name, t) in params.names().iter().zip(params.tensors()) {
            m.push(read_tensor(&mut r, t.shape(), name)?);
            v.push(read_tensor(&mut r, t.shape(), name)?);
        }
        r.finish()?;
        Ok(Checkpoint {
            dataset: meta.dataset,
            dataset_hash: meta.dataset_hash,
            config: meta.config,
            epoch: meta.epoch,
            rng_word_pos,
            history: meta.history,
            params,
            adam: AdamState { step, m, v },
        })
    }

    /// Writes via a temporary file and rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// `epoch,mean_loss,omega_1,...` with one row per finished epoch.
pub fn losses_csv(history: &[EpochRecord], n_granularities: usize) -> String {
    let mut out = String::from("epoch,mean_loss");
    for a in 1..=n_granularities {
        out.push_str(&format!(",omega_{a}"));
    }
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{}", r.epoch, r.mean_loss));
        for w in &r.omega {
            out.push_str(&format!(",{w}"));
        }
        out.push('\n');
    }
    out
}
