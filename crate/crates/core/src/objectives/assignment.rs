use serde::{Deserialize, Serialize};

use super::{OmegaReduction, ProjectedViews};
use crate::autodiff::{digamma, sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Embedding space whose views are being clustered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Common,
    /// Decoupled space of granularity `a` (1-based).
    Decoupled(usize),
}

/// How the hard cluster indicator is chosen per sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentRule {
    /// Most probable cluster, ties toward the smaller index.
    #[default]
    Argmax,
    /// Sample `i` belongs to cluster `i`.
    Identity,
}

impl AssignmentRule {
    pub fn as_str(self) -> &'static str {
        match self {
            AssignmentRule::Argmax => "argmax",
            AssignmentRule::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(AssignmentRule::Argmax),
            "identity" => Ok(AssignmentRule::Identity),
            _ => Err(Error::Config(format!("assignment must be argmax or identity, got {s:?}"))),
        }
    }
}

/// Soft cluster probabilities (`n x K`) and the chosen hard cluster per row.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix<T: Scalar> {
    pub p: Tensor<T>,
    pub hard: Vec<usize>,
}

/// Dirichlet view of an assignment: `d = p + 1`, beliefs `b = p / sum(d)`,
/// uncertainty `u = K / sum(d)` per sample, and the squashed weight.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyStats<T: Scalar> {
    pub d: Tensor<T>,
    pub b: Tensor<T>,
    pub u: Vec<T>,
    pub omega: T,
}

fn mean_of<T: Scalar>(views: &[&Tensor<T>]) -> Tensor<T> {
    let mut acc = Tensor::zeros(views[0].rows(), views[0].cols());
    for v in views {
        acc.add_assign(v);
    }
    acc.scale(T::one() / T::from_usize_lossy(views.len()))
}

/// Student-t kernel `(1 + |x - c|^2 / mu)^(-(mu + 1) / 2)` normalised over centroids.
pub fn student_t_probabilities<T: Scalar>(features: &Tensor<T>, centroids: &Tensor<T>, mu: T) -> Result<Tensor<T>> {
    if !(mu > T::zero()) {
        return Err(Error::Config(format!("mu must be positive, got {mu}")));
    }
    if features.cols() != centroids.cols() {
        return Err(Error::Shape {
            op: "student_t",
            left: features.shape(),
            right: centroids.shape(),
        });
    }
    let k = centroids.rows();
    let expo = -(mu + T::one()) / T::lit(2.0);
    let mut p = Tensor::zeros(features.rows(), k);
    let mut logk = vec![T::zero(); k];
    for i in 0..features.rows() {
        let x = features.row(i);
        for (q, lk) in logk.iter_mut().enumerate() {
            let dist: T = x.iter().zip(centroids.row(q)).map(|(&a, &b)| (a - b) * (a - b)).sum();
            *lk = expo * (dist / mu).ln_1p();
        }
        let m = logk.iter().copied().fold(T::neg_infinity(), T::max);
        let total: T = logk.iter().map(|&l| (l - m).exp()).sum();
        for (o, &l) in p.row_mut(i).iter_mut().zip(&logk) {
            *o = (l - m).exp() / total;
        }
    }
    Ok(p)
}

pub fn student_t_assignments<T: Scalar>(
    views: &ProjectedViews<T>,
    space: Space,
    mu: T,
) -> Result<AssignmentMatrix<T>> {
    student_t_assignments_with(views, space, mu, AssignmentRule::Argmax)
}

/// Clusters are the batch samples. In the common space each sample is
/// represented by the mean of its views and centroids average all views; in
/// decoupled space `a` the sample is its graph view and centroids average
/// every view except `a`.
pub fn student_t_assignments_with<T: Scalar>(
    views: &ProjectedViews<T>,
    space: Space,
    mu: T,
    rule: AssignmentRule,
) -> Result<AssignmentMatrix<T>> {
    let all: Vec<&Tensor<T>> = views.views().iter().collect();
    let (features, centroids) = match space {
        Space::Common => {
            let m = mean_of(&all);
            (m.clone(), m)
        }
        Space::Decoupled(a) => {
            if a == 0 || a >= all.len() {
                return Err(Error::Contract(format!(
                    "granularity index must be in 1..={}, got {a}",
                    all.len().saturating_sub(1)
                )));
            }
            let kept: Vec<&Tensor<T>> = all.iter().enumerate().filter(|&(j, _)| j != a).map(|(_, v)| *v).collect();
            (all[0].clone(), mean_of(&kept))
        }
    };
    let p = student_t_probabilities(&features, &centroids, mu)?;
    let hard = match rule {
        AssignmentRule::Identity => (0..p.rows()).collect(),
        AssignmentRule::Argmax => (0..p.rows())
            .map(|i| {
                let row = p.row(i);
                let mut best = 0;
                for (q, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = q;
                    }
                }
                best
            })
            .collect(),
    };
    Ok(AssignmentMatrix { p, hard })
}

pub fn uncertainty_stats<T: Scalar>(assign: &AssignmentMatrix<T>, reduction: OmegaReduction) -> Result<UncertaintyStats<T>> {
    let (n, k) = (assign.p.rows(), assign.p.cols());
    if assign.hard.len() != n || assign.hard.iter().any(|&q| q >= k) {
        return Err(Error::Contract("hard assignments do not match the probability matrix".into()));
    }
    let d = assign.p.map(|x| x + T::one());
    let mut b = Tensor::zeros(n, k);
    let mut u = Vec::with_capacity(n);
    let mut acc = T::zero();
    for i in 0..n {
        let strength: T = d.row(i).iter().copied().sum();
        for (o, &x) in b.row_mut(i).iter_mut().zip(assign.p.row(i)) {
            *o = x / strength;
        }
        u.push(T::from_usize_lossy(k) / strength);
        acc += digamma(d.get(i, assign.hard[i]))? - digamma(strength)?;
    }
    let reduced = match reduction {
        OmegaReduction::Sum => acc,
        OmegaReduction::Mean if n > 0 => acc / T::from_usize_lossy(n),
        OmegaReduction::Mean => T::zero(),
    };
    Ok(UncertaintyStats {
        d,
        b,
        u,
        omega: sigmoid(reduced),
    })
}

/// Trust weight of one space: sigmoid of the reduced per-sample
/// `digamma(d[i, q*]) - digamma(sum_q d[i, q])`.
pub fn granularity_weight<T: Scalar>(assign: &AssignmentMatrix<T>, reduction: OmegaReduction) -> Result<T> {
    Ok(uncertainty_stats(assign, reduction)?.omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_kernel_value() {
        let f = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![0.0, 0.0], vec![3f64.sqrt(), 0.0]]).unwrap();
        let p = student_t_probabilities(&f, &c, 1.0).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-12);
        assert!(matches!(student_t_probabilities(&f, &c, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_two_clusters_weight() {
        let a = AssignmentMatrix {
            p: Tensor::full(3, 2, 0.5),
            hard: vec![0, 0, 1],
        };
        let omega = granularity_weight(&a, OmegaReduction::Mean).unwrap();
        let term: f64 = 0.036_489_973_978_576_52 - 0.922_784_335_098_467_1;
        assert!((omega - 1.0 / (1.0 + (-term).exp())).abs() < 1e-12);
        assert!((omega - 0.2919).abs() < 1e-4);
        let summed = granularity_weight(&a, OmegaReduction::Sum).unwrap();
        assert!((summed - 1.0 / (1.0 + (-3.0 * term).exp())).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_weight_is_half() {
        let a = AssignmentMatrix {
            p: Tensor::full(1, 1, 1.0),
            hard: vec![0],
        };
        assert!((granularity_weight::<f64>(&a, OmegaReduction::Mean).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one_and_forced_uncertainty() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), 0.1]).collect();
        let v0 = Tensor::from_rows(&rows).unwrap();
        let v1 = v0.map(|x| x * 0.5 + 0.1);
        let v2 = v0.map(|x| -x);
        let views = ProjectedViews::new(vec![v0, v1, v2]).unwrap();
        for space in [Space::Common, Space::Decoupled(1), Space::Decoupled(2)] {
            let a = student_t_assignments(&views, space, 1.0).unwrap();
            let s = uncertainty_stats(&a, OmegaReduction::Mean).unwrap();
            for i in 0..5 {
                let row: f64 = a.p.row(i).iter().sum();
                assert!((row - 1.0).abs() < 1e-9);
                assert!((s.u[i] - 5.0 / 6.0).abs() < 1e-12);
                let mass: f64 = s.b.row(i).iter().sum::<f64>() + s.u[i];
                assert!((mass - 1.0).abs() < 1e-9);
            }
            assert!(s.omega > 0.0 && s.omega < 1.0);
        }
        assert!(matches!(
            student_t_assignments(&views, Space::Decoupled(3), 1.0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn isolated_sample_owns_its_cluster() {
        let v = Tensor::from_rows(&[vec![0.0, 0.0], vec![100.0, 0.0], vec![0.0, 100.0]]).unwrap();
        let views = ProjectedViews::new(vec![v.clone(), v]).unwrap();
        let a = student_t_assignments(&views, Space::Common, 1.0).unwrap();
        assert!(a.p.get(0, 0) > 0.999);
        assert_eq!(a.hard, vec![0, 1, 2]);
    }

    #[test]
    fn argmax_ties_go_to_smaller_index() {
        let v = Tensor::from_rows(&[vec![0.0], vec![0.0]]).unwrap();
        let views = ProjectedViews::new(vec![v.clone(), v]).unwrap();
        let a = student_t_assignments(&views, Space::Common, 1.0).unwrap();
        assert_eq!(a.hard, vec![0, 0]);
        let b = student_t_assignments_with(&views, Space::Common, 1.0, AssignmentRule::Identity).unwrap();
        assert_eq!(b.hard, vec![0, 1]);
    }
}
