//! Imitation and value losses evaluated on network outputs.

use crate::error::{ExitError, Result};

/// Probabilities are clamped here before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_CLAMP).ln()
}

/// Chosen-action target: `-log pi(a*)`.
pub fn loss_cat(policy: &[f64], a_star: usize) -> f64 {
    -clamped_ln(policy[a_star])
}

/// Tree-policy target: cross-entropy `-sum_a target(a) log pi(a)`.
/// `legal` marks the cells the policy is defined on.
pub fn loss_tpt(policy: &[f64], target: &[f64], legal: &[bool]) -> Result<f64> {
    let mut loss = 0.0;
    for (cell, ((&p, &t), &ok)) in policy.iter().zip(target).zip(legal).enumerate() {
        if t == 0.0 {
            continue;
        }
        if !ok {
            return Err(ExitError::TargetSupport { cell });
        }
        loss -= t * clamped_ln(p);
    }
    Ok(loss)
}

/// Binary cross-entropy between the value output and the sampled result.
pub fn loss_value(v: f64, z: f64) -> f64 {
    -z * clamped_ln(v) - (1.0 - z) * clamped_ln(1.0 - v)
}

/// Unweighted sum of the tree-policy and value losses.
pub fn loss_multitask(policy: &[f64], target: &[f64], legal: &[bool], v: f64, z: Option<f64>) -> Result<f64> {
    let z = z.ok_or_else(|| ExitError::Config("multitask loss needs a value target".into()))?;
    Ok(loss_tpt(policy, target, legal)? + loss_value(v, z))
}
