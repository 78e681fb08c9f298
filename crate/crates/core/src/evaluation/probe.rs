//! Multinomial logistic regression on standardised features.

use crate::error::{Error, Result};

pub const LAMBDA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
const TOL: f64 = 1e-6;
const MAX_ITERS: usize = 5000;
const POWER_ITERS: usize = 100;

/// Row-major design matrix.
#[derive(Clone, Debug)]
pub struct Design<'a> {
    pub x: &'a [f64],
    pub rows: usize,
    pub cols: usize,
}

impl Design<'_> {
    fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Clone, Debug)]
pub struct Probe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `classes x cols`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    classes: usize,
    pub iterations: usize,
}

fn standardise(data: &Design, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = data.cols;
    let n = idx.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in idx {
        for (m, &x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for &i in idx {
        for ((v, &x), &m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Largest eigenvalue of `A^T A / n` for `A = [X 1]`, by power iteration.
fn lipschitz_base(x: &[f64], n: usize, d: usize) -> f64 {
    let mut v = vec![1.0 / ((d + 1) as f64).sqrt(); d + 1];
    let mut lambda = 0.0;
    let mut av = vec![0.0; n];
    for _ in 0..POWER_ITERS {
        for (r, o) in av.iter_mut().enumerate() {
            let row = &x[r * d..(r + 1) * d];
            *o = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[d];
        }
        let mut w = vec![0.0; d + 1];
        for (r, &a) in av.iter().enumerate() {
            let row = &x[r * d..(r + 1) * d];
            for (o, &xv) in w.iter_mut().zip(row) {
                *o += xv * a;
            }
            w[d] += a;
        }
        w.iter_mut().for_each(|o| *o /= n as f64);
        let norm = w.iter().map(|o| o * o).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = w.into_iter().map(|o| o / norm).collect();
    }
    lambda
}

impl Probe {
    /// Fits on rows `idx` of `data` with labels `y` (indexed like `data`).
    pub fn fit(data: &Design, y: &[usize], idx: &[usize], classes: usize, lambda: f64) -> Result<Probe> {
        if idx.is_empty() {
            return Err(Error::Fold("cannot fit a probe on an empty split".into()));
        }
        let (n, d, c) = (idx.len(), data.cols, classes);
        let (mean, scale) = standardise(data, idx);
        let mut x = Vec::with_capacity(n * d);
        for &i in idx {
            x.extend(data.row(i).iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s));
        }
        let step = 1.0 / (0.5 * lipschitz_base(&x, n, d) + lambda);
        let nf = n as f64;

        let mut w = vec![0.0; d * c];
        let mut b = vec![0.0; c];
        let mut logits = vec![0.0; c];
        let mut gw = vec![0.0; d * c];
        let mut gb = vec![0.0; c];
        let mut prev = f64::INFINITY;
        let mut iterations = 0;
        for it in 0..MAX_ITERS {
            iterations = it + 1;
            gw.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for (r, &i) in idx.iter().enumerate() {
                let row = &x[r * d..(r + 1) * d];
                for (q, l) in logits.iter_mut().enumerate() {
                    *l = b[q] + dot(row, &w[q * d..(q + 1) * d]);
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
                loss += m + z.ln() - logits[y[i]];
                for (q, l) in logits.iter().enumerate() {
                    let e = ((l - m).exp() / z - if q == y[i] { 1.0 } else { 0.0 }) / nf;
                    for (g, &xv) in gw[q * d..(q + 1) * d].iter_mut().zip(row) {
                        *g += e * xv;
                    }
                    gb[q] += e;
                }
            }
            loss = loss / nf + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
            if !loss.is_finite() {
                return Err(Error::Numerics("probe loss diverged".into()));
            }
            if (prev - loss).abs() < TOL {
                break;
            }
            prev = loss;
            for (wv, g) in w.iter_mut().zip(&gw) {
                *wv -= step * (g + lambda * *wv);
            }
            for (bv, g) in b.iter_mut().zip(&gb) {
                *bv -= step * g;
            }
        }
        Ok(Probe {
            mean,
            scale,
            weights: w,
            bias: b,
            classes,
            iterations,
        })
    }

    pub fn predict_row(&self, row: &[f64]) -> usize {
        let d = self.mean.len();
        let xs: Vec<f64> = row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let logits: Vec<f64> = (0..self.classes)
            .map(|q| self.bias[q] + dot(&xs, &self.weights[q * d..(q + 1) * d]))
            .collect();
        let mut best = 0;
        for (q, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = q;
            }
        }
        best
    }

    pub fn predict(&self, data: &Design, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.predict_row(data.row(i))).collect()
    }

    pub fn accuracy(&self, data: &Design, y: &[usize], idx: &[usize]) -> f64 {
        let hits = idx.iter().filter(|&&i| self.predict_row(data.row(i)) == y[i]).count();
        hits as f64 / idx.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_are_fit() {
        let x = [0.0, 0.1, 0.2, 0.15, 5.0, 5.1, 5.2, 4.9];
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        let data = Design { x: &x, rows: 8, cols: 1 };
        let idx: Vec<usize> = (0..8).collect();
        let p = Probe::fit(&data, &y, &idx, 2, 1e-3).unwrap();
        assert_eq!(p.accuracy(&data, &y, &idx), 1.0);
        assert!(p.iterations <= MAX_ITERS);
    }

    #[test]
    fn power_iteration_matches_closed_form() {
        // A = [x 1] with x = (1, -1): A^T A / 2 = I, largest eigenvalue 1
        assert!((lipschitz_base(&[1.0, -1.0], 2, 1) - 1.0).abs() < 1e-9);
    }
}
