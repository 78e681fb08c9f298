//! Epoch loop, Adam, checkpoints and embedding extraction.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{losses_csv, Checkpoint, EpochRecord, CHECKPOINT_VERSION};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::complex::{dataset_hash, ComplexCache};
use crate::encoders::{
    ccnn_forward, gin_forward, init_params, project_forward, BoundParams, ComplexBatch, EncoderConfig, GraphBatch,
    ModelDims, ModelParams, PreparedComplex, PreparedGraph,
};
use crate::error::{Error, Result};
use crate::evaluation::EmbeddingTable;
use crate::graph_io::GraphDataset;
use crate::objectives::{objective_forward, LossConfig, ObjectiveOutput, OmegaMode};
use crate::scalar::Scalar;

const SHUFFLE_STREAM: u64 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSSES_FILE: &str = "losses.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub granularities: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            granularities: vec![6, 9, 12],
            epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
            loss: LossConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Contract(format!(
                "batch_size must be >= 2 for contrastive negatives, got {}",
                self.batch_size
            )));
        }
        if self.granularities.is_empty() || self.granularities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "granularities must be non-empty and strictly increasing, got {:?}",
                self.granularities
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.loss.validate()?;
        self.encoder.validate()
    }
}

/// Encoder inputs for every graph and every configured granularity.
#[derive(Clone, Debug)]
pub struct PreparedData<T: Scalar> {
    pub graphs: Vec<PreparedGraph<T>>,
    /// `complexes[a][i]`: graph `i` lifted at the `a`-th granularity.
    pub complexes: Vec<Vec<PreparedComplex<T>>>,
    pub feature_dim: usize,
}

impl<T: Scalar> PreparedData<T> {
    /// Fails with a configuration error when `cache` lacks a granularity.
    pub fn new(dataset: &GraphDataset, cache: &ComplexCache, granularities: &[usize]) -> Result<Self> {
        let cache = cache.select(granularities)?;
        if cache.n_graphs() != dataset.len() {
            return Err(Error::Config(format!(
                "cache holds {} graphs, dataset {}",
                cache.n_graphs(),
                dataset.len()
            )));
        }
        let complexes = (0..granularities.len())
            .map(|a| {
                cache
                    .at(a)
                    .iter()
                    .zip(&dataset.graphs)
                    .map(|(c, g)| PreparedComplex::with_graph(c, g))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedData {
            graphs: dataset.graphs.iter().map(PreparedGraph::from_graph).collect(),
            complexes,
            feature_dim: dataset.feature_dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn n_granularities(&self) -> usize {
        self.complexes.len()
    }
}

/// Encoder outputs and projections of one batch.
#[derive(Clone, Debug)]
pub struct BatchViews {
    /// GIN embedding, `n x H`.
    pub graph: Var,
    /// CCNN embedding per granularity.
    pub cells: Vec<Var>,
    /// All views in the common space.
    pub common: Vec<Var>,
    /// `decoupled[a - 1]`: all views in decoupled space `a`.
    pub decoupled: Vec<Vec<Var>>,
}

/// Encodes the samples `idx` with both encoders, then projects every view
/// into the common space and into each decoupled space.
pub fn encode_batch<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    data: &PreparedData<T>,
    idx: &[usize],
) -> Result<(Var, Vec<Var>)> {
    let graphs: Vec<&PreparedGraph<T>> = idx.iter().map(|&i| &data.graphs[i]).collect();
    let graph = gin_forward(tape, params, bound, &GraphBatch::new(&graphs)?)?;
    let mut cells = Vec::with_capacity(data.n_granularities());
    for level in &data.complexes {
        let items: Vec<&PreparedComplex<T>> = idx.iter().map(|&i| &level[i]).collect();
        cells.push(ccnn_forward(tape, params, bound, &ComplexBatch::new(&items)?)?);
    }
    Ok((graph, cells))
}

pub fn project_batch<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    data: &PreparedData<T>,
    idx: &[usize],
) -> Result<BatchViews> {
    if params.layout.proj_decoupled.len() != data.n_granularities() {
        return Err(Error::Config(format!(
            "model has {} decoupled spaces, data {} granularities",
            params.layout.proj_decoupled.len(),
            data.n_granularities()
        )));
    }
    let (graph, cells) = encode_batch(tape, params, bound, data, idx)?;
    let layout = &params.layout;
    let mut groups = Vec::with_capacity(1 + layout.proj_decoupled.len());
    for group in std::iter::once(&layout.proj_common).chain(&layout.proj_decoupled) {
        let mut views = vec![project_forward(tape, bound, group.gin, graph)?];
        for &h in &cells {
            views.push(project_forward(tape, bound, group.cell, h)?);
        }
        groups.push(views);
    }
    let common = groups.remove(0);
    Ok(BatchViews {
        graph,
        cells,
        common,
        decoupled: groups,
    })
}

/// Full objective for the samples `idx`.
pub fn batch_objective<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    bound: &BoundParams,
    data: &PreparedData<T>,
    idx: &[usize],
    loss: &LossConfig,
    omega: &OmegaMode<T>,
) -> Result<ObjectiveOutput<T>> {
    let views = project_batch(tape, params, bound, data, idx)?;
    objective_forward(tape, &views.common, &views.decoupled, loss, omega)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Directory receiving `checkpoint.bin` and `losses.csv` after every epoch.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint up to `config.epochs`.
    pub resume: Option<Checkpoint>,
}

pub fn train(dataset: &GraphDataset, cache: &ComplexCache, config: &TrainConfig) -> Result<Checkpoint> {
    train_with(dataset, cache, config, &TrainOptions::default())
}

fn write_outputs(dir: &Path, ck: &Checkpoint) -> Result<()> {
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    let csv = losses_csv(&ck.history, ck.config.granularities.len());
    let path = dir.join(LOSSES_FILE);
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

pub fn train_with(
    dataset: &GraphDataset,
    cache: &ComplexCache,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<Checkpoint> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let data: PreparedData<f64> = PreparedData::new(dataset, cache, &config.granularities)?;
    let hash = dataset_hash(dataset);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let mut ck = match &opts.resume {
        Some(prev) => {
            let mut same = prev.config.clone();
            same.epochs = config.epochs;
            if &same != config || prev.dataset_hash != hash {
                return Err(Error::Config(
                    "resume checkpoint was trained with a different configuration or dataset".into(),
                ));
            }
            rng.set_word_pos(prev.rng_word_pos);
            let mut ck = prev.clone();
            ck.config = config.clone();
            ck
        }
        None => {
            let params = init_params(
                config.seed,
                &config.encoder,
                ModelDims {
                    in_features: data.feature_dim,
                    n_granularities: config.granularities.len(),
                },
            )?;
            Checkpoint {
                dataset: dataset.name.clone(),
                dataset_hash: hash,
                config: config.clone(),
                epoch: 0,
                rng_word_pos: rng.get_word_pos(),
                history: Vec::new(),
                adam: AdamState::new(&params),
                params,
            }
        }
    };
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let hp = AdamHyper::with_lr(config.lr);
    let n_m = config.granularities.len();
    for epoch in ck.epoch..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut omega_sum = vec![0.0; n_m];
        let mut batches = 0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            if idx.len() < 2 {
                log::info!("epoch {}: dropping final batch of size {}", epoch + 1, idx.len());
                continue;
            }
            let mut tape = Tape::new();
            let bound = ck.params.bind(&mut tape);
            let out = batch_objective(&mut tape, &ck.params, &bound, &data, idx, &config.loss, &OmegaMode::Compute)?;
            let loss = tape.value(out.total).item()?;
            if !loss.is_finite() {
                return Err(Error::Numerics(format!("non-finite loss at epoch {} batch {b}", epoch + 1)));
            }
            let grads = tape.backward(out.total)?;
            let g: Vec<Tensor<f64>> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
            adam_step(&mut ck.params, &g, &mut ck.adam, &hp)?;
            loss_sum += loss;
            for (s, w) in omega_sum.iter_mut().zip(&out.omegas) {
                *s += w;
            }
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Contract("no batch with at least two samples".into()));
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            omega: omega_sum.iter().map(|s| s / batches as f64).collect(),
            batches,
        };
        log::info!(
            "epoch {}/{}: mean loss {:.6}, omega {:?}",
            record.epoch,
            config.epochs,
            record.mean_loss,
            record.omega
        );
        ck.history.push(record);
        ck.epoch = epoch + 1;
        ck.rng_word_pos = rng.get_word_pos();
        if let Some(dir) = &opts.out_dir {
            write_outputs(dir, &ck)?;
        }
    }
    Ok(ck)
}

/// Final embeddings: GIN output concatenated with the CCNN output of every
/// granularity, `(N_m + 1) * H` columns, rows in dataset order.
pub fn embed_all(checkpoint: &Checkpoint, dataset: &GraphDataset, cache: &ComplexCache) -> Result<EmbeddingTable> {
    let config = &checkpoint.config;
    if checkpoint.params.dims.in_features != dataset.feature_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} input features, dataset has {}",
            checkpoint.params.dims.in_features,
            dataset.feature_dim()
        )));
    }
    let data: PreparedData<f64> = PreparedData::new(dataset, cache, &config.granularities)?;
    let params = &checkpoint.params;
    let order: Vec<usize> = (0..data.len()).collect();
    let mut rows: Vec<Tensor<f64>> = Vec::new();
    for idx in order.chunks(config.batch_size.max(1)) {
        let mut tape = Tape::new();
        let bound = params.bind_frozen(&mut tape);
        let (graph, cells) = encode_batch(&mut tape, params, &bound, &data, idx)?;
        let parts: Vec<&Tensor<f64>> = std::iter::once(graph).chain(cells).map(|v| tape.value(v)).collect();
        rows.push(Tensor::hstack(&parts)?);
    }
    let refs: Vec<&Tensor<f64>> = rows.iter().collect();
    let embeddings = if refs.is_empty() {
        Tensor::zeros(0, (config.granularities.len() + 1) * config.encoder.hidden)
    } else {
        Tensor::vstack(&refs)?
    };
    EmbeddingTable::new(dataset.name.clone(), config.seed, dataset.n_classes, dataset.labels(), embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::build_complex;
    use crate::graph_io::{FeatureMode, Graph};

    pub(crate) fn toy() -> (GraphDataset, ComplexCache) {
        let mut graphs = Vec::new();
        for i in 0..7usize {
            let n = 4 + i % 4;
            let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|v| (v, v + 1)).collect();
            if i % 2 == 0 {
                edges.push((0, n - 1));
            }
            if i % 3 == 0 {
                edges.push((0, 2));
            }
            let feats = Tensor::from_vec(n, 2, (0..2 * n).map(|k| ((k + i) % 2) as f64).collect()).unwrap();
            graphs.push(Graph::new(n, edges, feats, i % 2).unwrap());
        }
        let complexes = [6usize, 9]
            .iter()
            .map(|&m| graphs.iter().map(|g| build_complex(g, m).unwrap()).collect())
            .collect();
        let ds = GraphDataset {
            name: "toy".into(),
            graphs,
            n_classes: 2,
            feature_mode: FeatureMode::NodeLabelsOnehot,
        };
        let cache = ComplexCache::new("toy".into(), vec![6, 9], complexes).unwrap();
        (ds, cache)
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            granularities: vec![6, 9],
            epochs: 3,
            batch_size: 3,
            encoder: EncoderConfig {
                gin_layers: 2,
                ccnn_layers: 1,
                hidden: 8,
                proj_dim: 4,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.batch_size = 1;
        assert!(matches!(c.validate(), Err(Error::Contract(_))));
        let mut c = cfg();
        c.granularities = vec![9, 6];
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn trains_and_drops_singleton_batch() {
        let (ds, cache) = toy();
        let ck = train(&ds, &cache, &cfg()).unwrap();
        assert_eq!(ck.history.len(), 3);
        // 7 samples in batches of 3: the last batch has one sample
        assert!(ck.history.iter().all(|r| r.batches == 2));
        assert!(ck.params.all_finite());
        for r in &ck.history {
            assert!(r.omega.iter().all(|&w| w > 0.0 && w < 1.0));
        }
    }

    #[test]
    fn deterministic_and_resumable() {
        let (ds, cache) = toy();
        let full = train(&ds, &cache, &cfg()).unwrap();
        assert_eq!(full, train(&ds, &cache, &cfg()).unwrap());
        let mut short = cfg();
        short.epochs = 1;
        let first = train(&ds, &cache, &short).unwrap();
        let bytes = first.to_bytes().unwrap();
        let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(reloaded, first);
        let resumed = train_with(
            &ds,
            &cache,
            &cfg(),
            &TrainOptions {
                out_dir: None,
                resume: Some(reloaded),
            },
        )
        .unwrap();
        assert_eq!(resumed.to_bytes().unwrap(), full.to_bytes().unwrap());
    }

    #[test]
    fn embedding_width_and_mismatch() {
        let (ds, cache) = toy();
        let ck = train(&ds, &cache, &cfg()).unwrap();
        let table = embed_all(&ck, &ds, &cache).unwrap();
        assert_eq!(table.embeddings.shape(), [7, 24]);
        let other = cache.select(&[6]).unwrap();
        assert!(matches!(embed_all(&ck, &ds, &other), Err(Error::Config(_))));
    }

    #[test]
    fn empty_dataset_rejected() {
        let (mut ds, _) = toy();
        ds.graphs.clear();
        let cache = ComplexCache::new("toy".into(), vec![6, 9], vec![vec![], vec![]]).unwrap();
        assert!(matches!(train(&ds, &cache, &cfg()), Err(Error::Contract(_))));
    }
}
