use super::{check_view_shapes, NegativesMode, ProjectedViews};
use crate::autodiff::{CustomOp, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fused multi-view InfoNCE over views passed as separate `n x d` inputs.
///
/// For every sample `i` and (anchor, positive) view pair `(j, k)` the term is
/// `logsumexp(pos, negatives) - pos` on similarities divided by `tau`. The
/// loss is the sum of all terms. Rows are expected to be unit length, so the
/// dot product is the cosine similarity.
#[derive(Clone, Debug)]
pub struct NceOp<T: Scalar> {
    pairs: Vec<(usize, usize)>,
    tau: T,
    mode: NegativesMode,
}

impl<T: Scalar> NceOp<T> {
    pub fn new(pairs: Vec<(usize, usize)>, tau: T, mode: NegativesMode) -> Self {
        NceOp { pairs, tau, mode }
    }

    /// All ordered pairs `(j, k)`, `j != k`, over `n_views` views.
    pub fn common(n_views: usize, tau: T, mode: NegativesMode) -> Self {
        let pairs = (0..n_views)
            .flat_map(|j| (0..n_views).filter(move |&k| k != j).map(move |k| (j, k)))
            .collect();
        Self::new(pairs, tau, mode)
    }

    /// Anchor view 0 against views `1..n_views` except `a`.
    pub fn decoupled(n_views: usize, a: usize, tau: T, mode: NegativesMode) -> Self {
        let pairs = (1..n_views).filter(|&k| k != a).map(|k| (0, k)).collect();
        Self::new(pairs, tau, mode)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn evaluate(&self, inputs: &[&Tensor<T>], want_grad: bool) -> Result<(T, Option<Tensor<T>>)> {
        check_view_shapes(inputs.iter().map(|t| t.shape()))?;
        let n = inputs[0].rows();
        if n < 2 {
            return Err(Error::Contract(format!("contrastive loss needs n >= 2 samples, got {n}")));
        }
        let v = inputs.len();
        if let Some(&(j, k)) = self.pairs.iter().find(|&&(j, k)| j >= v || k >= v) {
            return Err(Error::Contract(format!("view pair ({j}, {k}) out of range for {v} views")));
        }
        let z = Tensor::vstack(inputs)?;
        let inv_tau = T::one() / self.tau;
        let s = z.matmul_t(&z)?.scale(inv_tau);
        let vn = v * n;
        let mut g = if want_grad { Some(Tensor::zeros(vn, vn)) } else { None };
        let mut loss = T::zero();

        // literal negatives: within-sample similarities of each sample
        let internal: Vec<Vec<(usize, usize)>> = match self.mode {
            NegativesMode::Cross => Vec::new(),
            NegativesMode::Literal => (0..n)
                .map(|i| {
                    (0..v)
                        .flat_map(|a| (0..v).map(move |b| (a * n + i, b * n + i)))
                        .collect()
                })
                .collect(),
        };

        let mut logits: Vec<T> = Vec::with_capacity(vn * v);
        let mut coords: Vec<(usize, usize)> = Vec::with_capacity(vn * v);
        for i in 0..n {
            for &(j, k) in &self.pairs {
                let r = j * n + i;
                let p = k * n + i;
                logits.clear();
                coords.clear();
                logits.push(s.get(r, p));
                coords.push((r, p));
                match self.mode {
                    NegativesMode::Cross => {
                        let row = s.row(r);
                        for (c, &x) in row.iter().enumerate() {
                            if c % n != i {
                                logits.push(x);
                                coords.push((r, c));
                            }
                        }
                    }
                    NegativesMode::Literal => {
                        for (i2, cells) in internal.iter().enumerate() {
                            if i2 != i {
                                for &(a, b) in cells {
                                    logits.push(s.get(a, b));
                                    coords.push((a, b));
                                }
                            }
                        }
                    }
                }
                let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
                let total: T = logits.iter().map(|&x| (x - m).exp()).sum();
                let lse = m + total.ln();
                loss += lse - logits[0];
                if let Some(g) = g.as_mut() {
                    for (&x, &(a, b)) in logits.iter().zip(&coords) {
                        let w = (x - m).exp() / total;
                        g.set(a, b, g.get(a, b) + w);
                    }
                    g.set(r, p, g.get(r, p) - T::one());
                }
            }
        }
        let grad = match g {
            None => None,
            Some(g) => Some(g.add(&g.transpose())?.matmul(&z)?.scale(inv_tau)),
        };
        Ok((loss, grad))
    }
}

impl<T: Scalar> CustomOp<T> for NceOp<T> {
    fn name(&self) -> &str {
        "info_nce"
    }

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(self.evaluate(inputs, false)?.0))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let g = grad_output.item()?;
        let dz = self.evaluate(inputs, true)?.1.expect("gradient requested");
        let (n, d) = (inputs[0].rows(), inputs[0].cols());
        Ok((0..inputs.len())
            .map(|j| {
                let data = dz.data()[j * n * d..(j + 1) * n * d].iter().map(|&x| x * g).collect();
                Tensor::from_vec(n, d, data).expect("sized")
            })
            .collect())
    }
}

pub fn common_loss_var<T: Scalar>(tape: &mut Tape<T>, views: &[Var], tau: T, mode: NegativesMode) -> Result<Var> {
    tape.custom(Box::new(NceOp::common(views.len(), tau, mode)), views)
}

pub fn decoupled_loss_var<T: Scalar>(
    tape: &mut Tape<T>,
    views: &[Var],
    a: usize,
    tau: T,
    mode: NegativesMode,
) -> Result<Var> {
    check_granularity_index(a, views.len())?;
    tape.custom(Box::new(NceOp::decoupled(views.len(), a, tau, mode)), views)
}

fn check_granularity_index(a: usize, n_views: usize) -> Result<()> {
    if a == 0 || a >= n_views {
        return Err(Error::Contract(format!(
            "granularity index must be in 1..={}, got {a}",
            n_views.saturating_sub(1)
        )));
    }
    Ok(())
}

fn eval_op<T: Scalar>(op: NceOp<T>, views: &ProjectedViews<T>) -> Result<T> {
    let refs: Vec<&Tensor<T>> = views.views().iter().collect();
    Ok(op.evaluate(&refs, false)?.0)
}

/// Common-space loss: every ordered view pair of a sample is a positive.
pub fn common_loss<T: Scalar>(views: &ProjectedViews<T>, tau: T, mode: NegativesMode) -> Result<T> {
    eval_op(NceOp::common(views.n_views(), tau, mode), views)
}

/// Decoupled loss in space `a`: anchor view 0, positives are the other
/// granularity views except `a`.
pub fn decoupled_loss<T: Scalar>(views: &ProjectedViews<T>, a: usize, tau: T, mode: NegativesMode) -> Result<T> {
    check_granularity_index(a, views.n_views())?;
    eval_op(NceOp::decoupled(views.n_views(), a, tau, mode), views)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_many;

    /// Direct transcription of the summed -log ratio, with explicit exp.
    fn oracle(views: &[Tensor<f64>], pairs: &[(usize, usize)], tau: f64, literal: bool) -> f64 {
        let n = views[0].rows();
        let v = views.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let s = |i: usize, j: usize, i2: usize, k: usize| (dot(views[j].row(i), views[k].row(i2)) / tau).exp();
        let mut total = 0.0;
        for i in 0..n {
            for &(j, k) in pairs {
                let pos = s(i, j, i, k);
                let mut neg = 0.0;
                for i2 in (0..n).filter(|&x| x != i) {
                    for a in 0..v {
                        if literal {
                            for b in 0..v {
                                neg += s(i2, a, i2, b);
                            }
                        } else {
                            neg += s(i, j, i2, a);
                        }
                    }
                }
                total -= (pos / (pos + neg)).ln();
            }
        }
        total
    }

    fn identical_orthogonal(n_views: usize) -> ProjectedViews<f64> {
        let rows = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        ProjectedViews::new(vec![Tensor::from_rows(&rows).unwrap(); n_views]).unwrap()
    }

    fn random_views(n: usize, v: usize, d: usize, seed: u64) -> Vec<Tensor<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..v)
            .map(|_| {
                let mut t = Tensor::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                for r in 0..n {
                    let norm = t.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    t.row_mut(r).iter_mut().for_each(|x| *x /= norm);
                }
                t
            })
            .collect()
    }

    #[test]
    fn common_example_value() {
        let views = identical_orthogonal(4);
        let per_term = -(2f64.exp() / (2f64.exp() + 4.0)).ln();
        assert!((per_term - 0.432_652_903).abs() < 1e-9);
        let l = common_loss(&views, 0.5, NegativesMode::Cross).unwrap();
        assert!((l - 24.0 * per_term).abs() < 1e-12);
        assert!((l - 10.383_669_67).abs() < 1e-8);
        let pairs = NceOp::<f64>::common(4, 0.5, NegativesMode::Cross).pairs;
        assert!((l - oracle(views.views(), &pairs, 0.5, false)).abs() < 1e-12);
    }

    #[test]
    fn large_tau_limit() {
        let views = identical_orthogonal(4);
        let l = common_loss(&views, 1e6, NegativesMode::Cross).unwrap();
        assert!((l / 24.0 - 5f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn decoupled_example_value() {
        let views = identical_orthogonal(4);
        assert_eq!(NceOp::<f64>::decoupled(4, 2, 0.5, NegativesMode::Cross).pairs, vec![(0, 1), (0, 3)]);
        let l = decoupled_loss(&views, 2, 0.5, NegativesMode::Cross).unwrap();
        assert!((l - 4.0 * 0.432_652_903).abs() < 1e-8);
        assert!(matches!(decoupled_loss(&views, 0, 0.5, NegativesMode::Cross), Err(Error::Contract(_))));
        assert!(matches!(decoupled_loss(&views, 4, 0.5, NegativesMode::Cross), Err(Error::Contract(_))));
    }

    #[test]
    fn single_granularity_decoupled_is_zero() {
        let views = identical_orthogonal(2);
        assert_eq!(decoupled_loss(&views, 1, 0.5, NegativesMode::Cross).unwrap(), 0.0);
    }

    #[test]
    fn matches_oracle_on_random_views() {
        let views = random_views(5, 4, 6, 3);
        let pv = ProjectedViews::new(views.clone()).unwrap();
        for (mode, literal) in [(NegativesMode::Cross, false), (NegativesMode::Literal, true)] {
            let common = NceOp::<f64>::common(4, 0.5, mode).pairs;
            let got = common_loss(&pv, 0.5, mode).unwrap();
            assert!((got - oracle(&views, &common, 0.5, literal)).abs() < 1e-9);
            let dec = NceOp::<f64>::decoupled(4, 3, 0.5, mode).pairs;
            let got = decoupled_loss(&pv, 3, 0.5, mode).unwrap();
            assert!((got - oracle(&views, &dec, 0.5, literal)).abs() < 1e-9);
        }
    }

    #[test]
    fn permutation_invariant() {
        let pv = ProjectedViews::new(random_views(6, 3, 4, 8)).unwrap();
        let perm = [3, 5, 0, 1, 4, 2];
        for mode in [NegativesMode::Cross, NegativesMode::Literal] {
            let a = common_loss(&pv, 0.5, mode).unwrap();
            let b = common_loss(&pv.permute_samples(&perm), 0.5, mode).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn needs_two_samples() {
        let pv = ProjectedViews::new(vec![Tensor::full(1, 2, 0.5); 3]).unwrap();
        assert!(matches!(common_loss(&pv, 0.5, NegativesMode::Cross), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let views = random_views(4, 3, 3, 1);
        for mode in [NegativesMode::Cross, NegativesMode::Literal] {
            let errs = finite_diff_check_many(
                |tape, xs| {
                    let c = common_loss_var(tape, xs, 0.7, mode)?;
                    let d = decoupled_loss_var(tape, xs, 1, 0.7, mode)?;
                    tape.add(c, d)
                },
                &views,
                1e-6,
            )
            .unwrap();
            for e in errs {
                assert!(e < 1e-6, "{mode:?}: {e}");
            }
        }
    }
}
