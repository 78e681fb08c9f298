//! Contrastive losses, Student-t cluster assignments, Dirichlet uncertainty
//! and the weighted total objective.

mod assignment;
mod combine;
mod nce;

pub use assignment::{student_t_probabilities, 
    granularity_weight, student_t_assignments, student_t_assignments_with, uncertainty_stats, AssignmentMatrix,
    AssignmentRule, Space, UncertaintyStats,
};
pub use combine::{objective_forward, total_loss, total_loss_var, ObjectiveOutput, OmegaMode};
pub use nce::{common_loss, common_loss_var, decoupled_loss, decoupled_loss_var, NceOp};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// How the InfoNCE denominator collects negatives.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativesMode {
    /// Anchor view against every view of every other sample.
    #[default]
    Cross,
    /// Sum of within-sample pair similarities of every other sample.
    Literal,
}

impl NegativesMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NegativesMode::Cross => "cross",
            NegativesMode::Literal => "literal",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(NegativesMode::Cross),
            "literal" => Ok(NegativesMode::Literal),
            _ => Err(Error::Config(format!("negatives must be cross or literal, got {s:?}"))),
        }
    }
}

/// How per-sample digamma terms are reduced before the sigmoid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaReduction {
    #[default]
    Mean,
    Sum,
}

impl OmegaReduction {
    pub fn as_str(self) -> &'static str {
        match self {
            OmegaReduction::Mean => "mean",
            OmegaReduction::Sum => "sum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(OmegaReduction::Mean),
            "sum" => Ok(OmegaReduction::Sum),
            _ => Err(Error::Config(format!("omega_reduction must be mean or sum, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
    pub omega_reduction: OmegaReduction,
    pub negatives: NegativesMode,
    pub assignment: AssignmentRule,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.5,
            alpha: 1.0,
            beta: 0.01,
            mu: 1.0,
            omega_reduction: OmegaReduction::Mean,
            negatives: NegativesMode::Cross,
            assignment: AssignmentRule::Argmax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0 && self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Projected views in one embedding space: `views[0]` is the graph view,
/// `views[a]` granularity `a`. Every view is `n x proj_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedViews<T: Scalar> {
    views: Vec<Tensor<T>>,
}

impl<T: Scalar> ProjectedViews<T> {
    pub fn new(views: Vec<Tensor<T>>) -> Result<Self> {
        check_view_shapes(views.iter().map(Tensor::shape))?;
        Ok(ProjectedViews { views })
    }

    pub fn views(&self) -> &[Tensor<T>] {
        &self.views
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn n_samples(&self) -> usize {
        self.views.first().map_or(0, Tensor::rows)
    }

    /// Number of granularities, i.e. views minus the graph view.
    pub fn n_granularities(&self) -> usize {
        self.views.len().saturating_sub(1)
    }

    /// Reorders samples in every view.
    pub fn permute_samples(&self, perm: &[usize]) -> Self {
        let views = self
            .views
            .iter()
            .map(|v| {
                let rows: Vec<Vec<T>> = perm.iter().map(|&i| v.row(i).to_vec()).collect();
                Tensor::from_rows(&rows).expect("same width")
            })
            .collect();
        ProjectedViews { views }
    }
}

pub(crate) fn check_view_shapes(mut shapes: impl Iterator<Item = [usize; 2]>) -> Result<()> {
    let first = shapes
        .next()
        .ok_or_else(|| Error::Contract("at least one view is required".into()))?;
    for s in shapes {
        if s != first {
            return Err(Error::Shape {
                op: "projected views",
                left: first,
                right: s,
            });
        }
    }
    Ok(())
}
