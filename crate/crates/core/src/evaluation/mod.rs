//! Linear-probe evaluation of frozen embeddings.

mod probe;
mod stats;

pub use probe::{Design, Probe, LAMBDA_GRID};
pub use stats::{mean_std, t_test_one_sided};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const INNER_FOLDS: usize = 3;
const MAX_RESTRATIFY: u64 = 16;

/// Graph-level embeddings with their labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dataset: String,
    /// Seed of the training run that produced the embeddings.
    pub seed: u64,
    pub n_classes: usize,
    pub labels: Vec<usize>,
    #[serde(with = "tensor_rows")]
    pub embeddings: Tensor<f64>,
}

mod tensor_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::autodiff::Tensor;

    #[derive(Serialize, Deserialize)]
    struct Rows {
        cols: usize,
        rows: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(t: &Tensor<f64>, s: S) -> Result<S::Ok, S::Error> {
        Rows {
            cols: t.cols(),
            rows: (0..t.rows()).map(|r| t.row(r).to_vec()).collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Tensor<f64>, D::Error> {
        let r = Rows::deserialize(d)?;
        if r.rows.is_empty() {
            return Ok(Tensor::zeros(0, r.cols));
        }
        Tensor::from_rows(&r.rows).map_err(serde::de::Error::custom)
    }
}

impl EmbeddingTable {
    pub fn new(dataset: String, seed: u64, n_classes: usize, labels: Vec<usize>, embeddings: Tensor<f64>) -> Result<Self> {
        if labels.len() != embeddings.rows() {
            return Err(Error::Contract(format!(
                "{} labels for {} embedding rows",
                labels.len(),
                embeddings.rows()
            )));
        }
        if !embeddings.is_finite() {
            return Err(Error::Numerics("embedding table contains non-finite values".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Contract(format!("label {l} outside 0..{n_classes}")));
        }
        Ok(EmbeddingTable {
            dataset,
            seed,
            n_classes,
            labels,
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let t: EmbeddingTable =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        EmbeddingTable::new(t.dataset, t.seed, t.n_classes, t.labels, t.embeddings)
    }

    /// Copy with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| self.embeddings.row(i).to_vec()).collect();
        let embeddings = if rows.is_empty() {
            Tensor::zeros(0, self.embeddings.cols())
        } else {
            Tensor::from_rows(&rows).expect("same width")
        };
        EmbeddingTable {
            embeddings,
            labels: perm.iter().map(|&i| self.labels[i]).collect(),
            ..self.clone()
        }
    }

    /// Rows sorted by a hash of their content, so that evaluation does not
    /// depend on the order rows were stored in.
    fn canonical(&self) -> EmbeddingTable {
        let keys: Vec<[u8; 32]> = (0..self.len())
            .map(|i| {
                let mut h = Sha256::new();
                h.update((self.labels[i] as u64).to_le_bytes());
                for v in self.embeddings.row(i) {
                    h.update(v.to_bits().to_le_bytes());
                }
                h.finalize().into()
            })
            .collect();
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
        self.permuted(&order)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: String,
    pub folds: usize,
    pub seeds: Vec<u64>,
    pub label_fraction: f64,
    /// Test accuracy per (seed, fold), seed-major.
    pub accuracies: Vec<f64>,
    /// Training-split accuracy of the final probe per (seed, fold).
    pub train_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `accuracies`.
    pub std: f64,
}

impl EvalResult {
    fn from_runs(protocol: &str, folds: usize, seeds: &[u64], label_fraction: f64, test: Vec<f64>, train: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&test);
        EvalResult {
            protocol: protocol.into(),
            folds,
            seeds: seeds.to_vec(),
            label_fraction,
            accuracies: test,
            train_accuracies: train,
            mean,
            std,
        }
    }
}

fn by_class(labels: &[usize], idx: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_classes];
    for &i in idx {
        out[labels[i]].push(i);
    }
    out
}

/// Fold id per position of `idx`: each class is shuffled and dealt round-robin.
fn deal_folds(labels: &[usize], idx: &[usize], n_classes: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in by_class(labels, idx, n_classes) {
        members.shuffle(rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn n_distinct(labels: &[usize], idx: &[usize]) -> usize {
    let mut seen: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Stratified `k` folds over all samples. Re-deals with a new stream when a
/// fold is empty or its training complement has a single class.
pub fn stratified_folds(labels: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let n = labels.len();
    if k < 2 || n < k {
        return Err(Error::Fold(format!("need 2 <= folds <= samples, got {k} folds for {n} samples")));
    }
    if n_distinct(labels, &(0..n).collect::<Vec<_>>()) < 2 {
        return Err(Error::Fold("at least two classes are required".into()));
    }
    let all: Vec<usize> = (0..n).collect();
    for attempt in 0..MAX_RESTRATIFY {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let folds = deal_folds(labels, &all, n_classes, k, &mut rng);
        let ok = folds.iter().all(|f| {
            let train = complement(n, f);
            !f.is_empty() && n_distinct(labels, &train) >= 2
        });
        if ok {
            return Ok(folds);
        }
        log::warn!("degenerate fold split, re-stratifying (attempt {})", attempt + 1);
    }
    Err(Error::Fold("could not build folds with two classes in every training split".into()))
}

fn complement(n: usize, sorted: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut j = 0;
    for i in 0..n {
        if j < sorted.len() && sorted[j] == i {
            j += 1;
        } else {
            out.push(i);
        }
    }
    out
}

struct Problem<'a> {
    data: Design<'a>,
    labels: &'a [usize],
    n_classes: usize,
}

impl Problem<'_> {
    /// Regularisation strength with the best inner cross-validated accuracy
    /// (first best in grid order). Inner splits without two training classes
    /// are skipped; if none remain the middle of the grid is used.
    fn select_lambda(&self, labels: &[usize], train: &[usize], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let k = INNER_FOLDS.min(train.len());
        let inner = deal_folds(labels, train, self.n_classes, k, &mut rng);
        let splits: Vec<(Vec<usize>, &Vec<usize>)> = inner
            .iter()
            .filter(|f| !f.is_empty())
            .map(|f| (train.iter().copied().filter(|i| f.binary_search(i).is_err()).collect::<Vec<_>>(), f))
            .filter(|(tr, _)| n_distinct(labels, tr) >= 2)
            .collect();
        if splits.is_empty() {
            return Ok(LAMBDA_GRID[1]);
        }
        let mut best = (f64::NEG_INFINITY, LAMBDA_GRID[0]);
        for &lambda in &LAMBDA_GRID {
            let mut acc = 0.0;
            for (tr, te) in &splits {
                let p = Probe::fit(&self.data, labels, tr, self.n_classes, lambda)?;
                acc += p.accuracy(&self.data, labels, te);
            }
            acc /= splits.len() as f64;
            if acc > best.0 {
                best = (acc, lambda);
            }
        }
        Ok(best.1)
    }
}

fn run_cv(
    table: &EmbeddingTable,
    folds: usize,
    seeds: &[u64],
    protocol: &str,
    label_fraction: f64,
) -> Result<EvalResult> {
    if seeds.is_empty() {
        return Err(Error::Contract("at least one evaluation seed is required".into()));
    }
    if !(label_fraction > 0.0 && label_fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction must be in (0, 1], got {label_fraction}")));
    }
    let t = table.canonical();
    let problem = Problem {
        data: Design {
            x: t.embeddings.data(),
            rows: t.len(),
            cols: t.embeddings.cols(),
        },
        labels: &t.labels,
        n_classes: t.n_classes,
    };
    let n = t.len();
    let mut test_acc = Vec::with_capacity(seeds.len() * folds);
    let mut train_acc = Vec::with_capacity(seeds.len() * folds);
    for &seed in seeds {
        let split = stratified_folds(&t.labels, t.n_classes, folds, seed)?;
        for (f, test) in split.iter().enumerate() {
            let train = complement(n, test);
            let fold_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(f as u64);
            let (probe, fitted_on, y) = if label_fraction >= 1.0 {
                let lambda = problem.select_lambda(problem.labels, &train, fold_seed)?;
                let p = Probe::fit(&problem.data, problem.labels, &train, t.n_classes, lambda)?;
                (p, train, problem.labels.to_vec())
            } else {
                pseudo_label_fit(&problem, &train, label_fraction, fold_seed)?
            };
            test_acc.push(probe.accuracy(&problem.data, problem.labels, test));
            train_acc.push(probe.accuracy(&problem.data, &y, &fitted_on));
        }
    }
    Ok(EvalResult::from_runs(protocol, folds, seeds, label_fraction, test_acc, train_acc))
}

/// Labelled slice of `train`: per-class counts by largest remainder of
/// `fraction * class size`, members drawn at random.
fn labelled_slice(problem: &Problem, train: &[usize], fraction: f64, seed: u64) -> Result<Vec<usize>> {
    let groups = by_class(problem.labels, train, problem.n_classes);
    let target = ((fraction * train.len() as f64).round() as usize).max(1);
    let quotas: Vec<f64> = groups.iter().map(|g| fraction * g.len() as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    for &c in order.iter().cycle().take(groups.len() * 2) {
        if assigned >= target {
            break;
        }
        if counts[c] < groups[c].len() {
            counts[c] += 1;
            assigned += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(assigned);
    for (c, (mut g, k)) in groups.into_iter().zip(counts).enumerate() {
        if !g.is_empty() && k == 0 {
            return Err(Error::Stratify(format!("class {c} has no labelled sample at fraction {fraction}")));
        }
        g.shuffle(&mut rng);
        out.extend_from_slice(&g[..k]);
    }
    out.sort_unstable();
    Ok(out)
}

fn pseudo_label_fit(problem: &Problem, train: &[usize], fraction: f64, seed: u64) -> Result<(Probe, Vec<usize>, Vec<usize>)> {
    let labelled = labelled_slice(problem, train, fraction, seed)?;
    let lambda = problem.select_lambda(problem.labels, &labelled, seed)?;
    let first = Probe::fit(&problem.data, problem.labels, &labelled, problem.n_classes, lambda)?;
    let unlabelled: Vec<usize> = train.iter().copied().filter(|i| labelled.binary_search(i).is_err()).collect();
    let mut y = problem.labels.to_vec();
    for (&i, p) in unlabelled.iter().zip(first.predict(&problem.data, &unlabelled)) {
        y[i] = p;
    }
    let probe = Probe::fit(&problem.data, &y, train, problem.n_classes, lambda)?;
    Ok((probe, train.to_vec(), y))
}

/// Stratified k-fold accuracy of a logistic-regression probe, repeated per seed.
pub fn linear_probe_cv(table: &EmbeddingTable, folds: usize, seeds: &[u64]) -> Result<EvalResult> {
    run_cv(table, folds, seeds, "probe", 1.0)
}

/// Per fold: fit on a stratified labelled fraction of the training split,
/// pseudo-label the rest of it, refit on everything, score the test fold.
pub fn semi_supervised_eval(table: &EmbeddingTable, label_fraction: f64, folds: usize, seeds: &[u64]) -> Result<EvalResult> {
    run_cv(table, folds, seeds, "semi", label_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n: usize, sep: f64, seed: u64) -> EmbeddingTable {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rows: Vec<Vec<f64>> = labels
            .iter()
            .map(|&l| (0..4).map(|_| rng.random_range(-1.0..1.0) + sep * l as f64).collect())
            .collect();
        EmbeddingTable::new("toy".into(), seed, 2, labels, Tensor::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn folds_are_stratified_and_cover() {
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 4 == 0)).collect();
        let folds = stratified_folds(&labels, 2, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
        for f in &folds {
            assert_eq!(f.len(), 8);
            assert_eq!(f.iter().filter(|&&i| labels[i] == 1).count(), 2);
        }
        assert!(matches!(stratified_folds(&[0, 0, 0], 2, 2, 1), Err(Error::Fold(_))));
        assert!(matches!(stratified_folds(&[0, 1], 2, 3, 1), Err(Error::Fold(_))));
    }

    #[test]
    fn separable_gets_full_accuracy() {
        let t = blobs(60, 10.0, 1);
        let r = linear_probe_cv(&t, 5, &[0, 1]).unwrap();
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.accuracies.len(), 10);
        let s = semi_supervised_eval(&t, 0.1, 5, &[0]).unwrap();
        assert_eq!(s.mean, 1.0);
    }

    #[test]
    fn deterministic_and_order_free() {
        let t = blobs(50, 1.0, 4);
        let a = linear_probe_cv(&t, 5, &[7]).unwrap();
        let b = linear_probe_cv(&t, 5, &[7]).unwrap();
        assert_eq!(a, b);
        let perm: Vec<usize> = (0..50).rev().collect();
        let c = linear_probe_cv(&t.permuted(&perm), 5, &[7]).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn full_fraction_matches_probe() {
        let t = blobs(40, 1.0, 9);
        let a = linear_probe_cv(&t, 4, &[2]).unwrap();
        let b = semi_supervised_eval(&t, 1.0, 4, &[2]).unwrap();
        assert_eq!(a.accuracies, b.accuracies);
    }

    #[test]
    fn std_is_population_std() {
        let t = blobs(40, 0.5, 2);
        let r = linear_probe_cv(&t, 4, &[1, 2]).unwrap();
        let m = r.accuracies.iter().sum::<f64>() / 8.0;
        let sd = (r.accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0).sqrt();
        assert!((r.std - sd).abs() < 1e-12);
    }

    #[test]
    fn table_validation() {
        assert!(EmbeddingTable::new("x".into(), 0, 2, vec![0, 2], Tensor::zeros(2, 1)).is_err());
        assert!(EmbeddingTable::new("x".into(), 0, 2, vec![0], Tensor::zeros(2, 1)).is_err());
        assert!(EmbeddingTable::new("x".into(), 0, 2, vec![0], Tensor::full(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = blobs(6, 1.0, 3);
        let p = dir.path().join("emb.json");
        t.save(&p).unwrap();
        assert_eq!(EmbeddingTable::load(&p).unwrap(), t);
    }
}
