mod common;

use rand::seq::SliceRandom;
use rand::Rng;
use ringforge::evaluation::{linear_probe_cv, semi_supervised_eval, EmbeddingTable};
use ringforge::Tensor64;

/// Box-Muller standard normal.
fn gaussian(r: &mut impl Rng) -> f64 {
    let u: f64 = r.random::<f64>().max(1e-300);
    let v: f64 = r.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

const N: usize = 188;

/// Three binomial standard deviations of an accuracy estimated on `n`
/// independent coin flips.
fn three_sigma(n: usize) -> f64 {
    3.0 * (0.25 / n as f64).sqrt()
}

fn table(labels: Vec<usize>, rows: Vec<Vec<f64>>) -> EmbeddingTable {
    EmbeddingTable::new("synthetic".into(), 0, 2, labels, Tensor64::from_f64_rows(&rows).unwrap()).unwrap()
}

fn clustered(seed: u64, dim: usize, gap: f64) -> (Vec<usize>, Vec<Vec<f64>>) {
    let mut r = common::rng(seed);
    let labels: Vec<usize> = (0..N).map(|i| i % 2).collect();
    let rows = labels
        .iter()
        .map(|&y| (0..dim).map(|_| gaussian(&mut r) + gap * y as f64).collect())
        .collect();
    (labels, rows)
}

#[test]
fn permuted_labels_give_chance_accuracy() {
    let (mut labels, rows) = clustered(1, 8, 3.0);
    labels.shuffle(&mut common::rng(2));
    let res = linear_probe_cv(&table(labels, rows), 10, &[0]).unwrap();
    assert!((res.mean - 0.5).abs() <= three_sigma(N), "mean {}", res.mean);
}

#[test]
fn semi_supervised_on_noise_is_chance() {
    let mut r = common::rng(3);
    let labels: Vec<usize> = (0..N).map(|i| i % 2).collect();
    let rows = (0..N).map(|_| (0..8).map(|_| gaussian(&mut r)).collect()).collect();
    let res = semi_supervised_eval(&table(labels, rows), 0.1, 10, &[0]).unwrap();
    assert!((res.mean - 0.5).abs() <= three_sigma(N), "mean {}", res.mean);
}

#[test]
fn separable_clusters_are_solved_by_both_protocols() {
    let (labels, rows) = clustered(4, 4, 10.0);
    let t = table(labels, rows);
    assert_eq!(linear_probe_cv(&t, 10, &[0]).unwrap().mean, 1.0);
    assert_eq!(semi_supervised_eval(&t, 0.1, 10, &[0]).unwrap().mean, 1.0);
}

#[test]
fn train_accuracy_dominates_test_accuracy() {
    let mut r = common::rng(5);
    let labels: Vec<usize> = (0..120).map(|_| r.random_range(0..2)).collect();
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..6).map(|_| gaussian(&mut r) + 0.6 * y as f64).collect())
        .collect();
    let t = EmbeddingTable::new("noisy".into(), 0, 2, labels, Tensor64::from_f64_rows(&rows).unwrap()).unwrap();
    let res = linear_probe_cv(&t, 5, &[0, 1, 2, 3, 4]).unwrap();
    let train = res.train_accuracies.iter().sum::<f64>() / res.train_accuracies.len() as f64;
    assert!(train >= res.mean, "train {train} < test {}", res.mean);
    assert_eq!(res.accuracies.len(), 25);
}

#[test]
fn row_shuffle_leaves_result_unchanged() {
    let (labels, rows) = clustered(6, 3, 1.2);
    let t = table(labels, rows);
    let mut perm: Vec<usize> = (0..N).collect();
    perm.shuffle(&mut common::rng(7));
    let a = linear_probe_cv(&t, 10, &[0, 1]).unwrap();
    let b = linear_probe_cv(&t.permuted(&perm), 10, &[0, 1]).unwrap();
    assert_eq!(a.accuracies, b.accuracies);
}
