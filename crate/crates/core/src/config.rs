//! Plain-text `key = value` run configuration.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph_io::{FeatureMode, DEFAULT_BASE_URL, DEFAULT_MAX_DEGREE};
use crate::objectives::{AssignmentRule, NegativesMode, OmegaReduction};
use crate::training::TrainConfig;

pub const CACHE_ENV: &str = "RINGFORGE_CACHE";

/// Every accepted key, in the order used when echoing a configuration.
pub const KEYS: [&str; 26] = [
    "dataset",
    "data_dir",
    "cache_dir",
    "out_dir",
    "base_url",
    "feature_mode",
    "max_degree",
    "granularities",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "tau",
    "alpha",
    "beta",
    "mu",
    "omega_reduction",
    "negatives",
    "assignment",
    "gin_layers",
    "ccnn_layers",
    "hidden",
    "proj_dim",
    "folds",
    "eval_seeds",
    "label_fraction",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub base_url: String,
    /// `None` picks node labels when present, else degree one-hot.
    pub feature_mode: Option<FeatureMode>,
    pub max_degree: usize,
    pub train: TrainConfig,
    pub folds: usize,
    pub eval_seeds: Vec<u64>,
    pub label_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: "MUTAG".into(),
            data_dir: "data".into(),
            cache_dir: "cache".into(),
            out_dir: "runs".into(),
            base_url: DEFAULT_BASE_URL.into(),
            feature_mode: None,
            max_degree: DEFAULT_MAX_DEGREE,
            train: TrainConfig::default(),
            folds: 10,
            eval_seeds: vec![0],
            label_fraction: 0.1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        let t = &mut self.train;
        match key {
            "dataset" => self.dataset = v.into(),
            "data_dir" => self.data_dir = v.into(),
            "cache_dir" => self.cache_dir = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "base_url" => self.base_url = v.into(),
            "feature_mode" => {
                self.feature_mode = if v == "auto" { None } else { Some(FeatureMode::parse(v)?) };
            }
            "max_degree" => self.max_degree = num(key, v)?,
            "granularities" => t.granularities = list(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "batch_size" => t.batch_size = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "tau" => t.loss.tau = num(key, v)?,
            "alpha" => t.loss.alpha = num(key, v)?,
            "beta" => t.loss.beta = num(key, v)?,
            "mu" => t.loss.mu = num(key, v)?,
            "omega_reduction" => t.loss.omega_reduction = OmegaReduction::parse(v)?,
            "negatives" => t.loss.negatives = NegativesMode::parse(v)?,
            "assignment" => t.loss.assignment = AssignmentRule::parse(v)?,
            "gin_layers" => t.encoder.gin_layers = num(key, v)?,
            "ccnn_layers" => t.encoder.ccnn_layers = num(key, v)?,
            "hidden" => t.encoder.hidden = num(key, v)?,
            "proj_dim" => t.encoder.proj_dim = num(key, v)?,
            "folds" => self.folds = num(key, v)?,
            "eval_seeds" => self.eval_seeds = list(key, v)?,
            "label_fraction" => self.label_fraction = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "dataset" => self.dataset.clone(),
            "data_dir" => self.data_dir.display().to_string(),
            "cache_dir" => self.cache_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "base_url" => self.base_url.clone(),
            "feature_mode" => self.feature_mode.map_or("auto", FeatureMode::as_str).into(),
            "max_degree" => self.max_degree.to_string(),
            "granularities" => join(&t.granularities),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr" => t.lr.to_string(),
            "seed" => t.seed.to_string(),
            "tau" => t.loss.tau.to_string(),
            "alpha" => t.loss.alpha.to_string(),
            "beta" => t.loss.beta.to_string(),
            "mu" => t.loss.mu.to_string(),
            "omega_reduction" => t.loss.omega_reduction.as_str().into(),
            "negatives" => t.loss.negatives.as_str().into(),
            "assignment" => t.loss.assignment.as_str().into(),
            "gin_layers" => t.encoder.gin_layers.to_string(),
            "ccnn_layers" => t.encoder.ccnn_layers.to_string(),
            "hidden" => t.encoder.hidden.to_string(),
            "proj_dim" => t.encoder.proj_dim.to_string(),
            "folds" => self.folds.to_string(),
            "eval_seeds" => join(&self.eval_seeds),
            "label_fraction" => self.label_fraction.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines. `#` starts a comment; repeated keys are rejected.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut seen: Vec<String> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if seen.iter().any(|s| s == k) {
                return Err(Error::Config(format!("{origin}:{}: duplicate key `{k}`", n + 1)));
            }
            self.set(k, v)
                .map_err(|e| Error::Config(format!("{origin}:{}: {e}", n + 1)))?;
            seen.push(k.to_owned());
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        KEYS.iter().map(|&k| (k, self.get(k).expect("known key"))).collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Short hash over the keys that influence training.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.pairs() {
            if !matches!(k, "data_dir" | "cache_dir" | "out_dir" | "base_url") {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())[..10].to_owned()
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.eval_seeds.is_empty() {
            return Err(Error::Config("eval_seeds must not be empty".into()));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "label_fraction must be in (0, 1], got {}",
                self.label_fraction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut c = RunConfig::default();
        c.apply_text("epochs = 5\n# comment\nbeta=0 # inline\ngranularities = 6, 9\nnegatives = literal\n", "t")
            .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.loss.beta, 0.0);
        assert_eq!(c.train.granularities, vec![6, 9]);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "echo").unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash(), d.hash());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("nope = 1", "t"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("epochs = x", "t"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("epochs = 1\nepochs = 2", "t"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("epochs", "t"), Err(Error::Config(_))));
    }

    #[test]
    fn every_key_is_settable() {
        let mut c = RunConfig::default();
        for (k, v) in RunConfig::default().pairs() {
            c.set(k, &v).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }
}
