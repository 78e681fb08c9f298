use super::{
    common_loss_var, decoupled_loss_var, student_t_assignments_with, uncertainty_stats, LossConfig, ProjectedViews,
    Space, UncertaintyStats,
};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `alpha * common + beta / N_m * sum_a omega_a * L_a`.
pub fn total_loss<T: Scalar>(common: T, decoupled: &[(T, T)], alpha: T, beta: T, n_m: usize) -> Result<T> {
    if decoupled.len() != n_m || n_m == 0 {
        return Err(Error::Contract(format!(
            "expected {n_m} decoupled terms, got {}",
            decoupled.len()
        )));
    }
    let mgdc: T = decoupled.iter().map(|&(w, l)| w * l).sum();
    Ok(alpha * common + beta / T::from_usize_lossy(n_m) * mgdc)
}

/// Tape form of [`total_loss`]; the weights are constants.
pub fn total_loss_var<T: Scalar>(tape: &mut Tape<T>, common: Var, decoupled: &[(T, Var)], alpha: T, beta: T) -> Result<Var> {
    if decoupled.is_empty() {
        return Err(Error::Contract("at least one decoupled term is required".into()));
    }
    let scale = beta / T::from_usize_lossy(decoupled.len());
    let mut total = tape.scale(common, alpha);
    for &(w, l) in decoupled {
        let term = tape.scale(l, scale * w);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Source of the per-granularity weights.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaMode<T> {
    /// Recompute from the current decoupled projections.
    Compute,
    /// Use the given weights, e.g. to hold them fixed across a gradient check.
    Frozen(Vec<T>),
}

#[derive(Debug)]
pub struct ObjectiveOutput<T: Scalar> {
    pub total: Var,
    pub common: T,
    pub decoupled: Vec<T>,
    pub omegas: Vec<T>,
    /// Index 0 is the common space, index `a` decoupled space `a`. Empty
    /// when the weights were frozen.
    pub stats: Vec<UncertaintyStats<T>>,
}

/// Builds the full objective on `tape`. `common_views` holds the `N_m + 1`
/// views projected into the common space; `decoupled_views[a - 1]` those
/// projected into decoupled space `a`. Weights never receive gradient.
pub fn objective_forward<T: Scalar>(
    tape: &mut Tape<T>,
    common_views: &[Var],
    decoupled_views: &[Vec<Var>],
    cfg: &LossConfig,
    omega: &OmegaMode<T>,
) -> Result<ObjectiveOutput<T>> {
    cfg.validate()?;
    let n_views = common_views.len();
    if n_views < 2 || decoupled_views.len() != n_views - 1 || decoupled_views.iter().any(|v| v.len() != n_views) {
        return Err(Error::Contract(format!(
            "expected {} decoupled spaces of {n_views} views each",
            n_views.saturating_sub(1)
        )));
    }
    let tau = T::lit(cfg.tau);
    let mu = T::lit(cfg.mu);
    let l_com = common_loss_var(tape, common_views, tau, cfg.negatives)?;

    let values = |tape: &Tape<T>, vars: &[Var]| ProjectedViews::new(vars.iter().map(|&v| tape.value(v).clone()).collect());

    let mut stats = Vec::new();
    let omegas = match omega {
        OmegaMode::Frozen(w) => {
            if w.len() != n_views - 1 {
                return Err(Error::Contract(format!("expected {} frozen weights, got {}", n_views - 1, w.len())));
            }
            w.clone()
        }
        OmegaMode::Compute => {
            let common = values(tape, common_views)?;
            let a = student_t_assignments_with(&common, Space::Common, mu, cfg.assignment)?;
            stats.push(uncertainty_stats(&a, cfg.omega_reduction)?);
            for (i, vars) in decoupled_views.iter().enumerate() {
                let pv = values(tape, vars)?;
                let a = student_t_assignments_with(&pv, Space::Decoupled(i + 1), mu, cfg.assignment)?;
                stats.push(uncertainty_stats(&a, cfg.omega_reduction)?);
            }
            stats[1..].iter().map(|s| s.omega).collect()
        }
    };

    let mut terms = Vec::with_capacity(n_views - 1);
    let mut decoupled = Vec::with_capacity(n_views - 1);
    for (i, vars) in decoupled_views.iter().enumerate() {
        let l = decoupled_loss_var(tape, vars, i + 1, tau, cfg.negatives)?;
        decoupled.push(tape.value(l).item()?);
        terms.push((omegas[i], l));
    }
    let total = total_loss_var(tape, l_com, &terms, T::lit(cfg.alpha), T::lit(cfg.beta))?;
    Ok(ObjectiveOutput {
        total,
        common: tape.value(l_com).item()?,
        decoupled,
        omegas,
        stats,
    })
}
