//! Contrastive and Generalized Contrastive losses with analytic gradients.
//!
//! For a pair at descriptor distance `d` with graded similarity `psi`:
//!
//! ```text
//! L_gcl = psi * d^2 / 2 + (1 - psi) * max(tau - d, 0)^2 / 2
//! dL/dd = d + tau * (psi - 1)   if d < tau
//!       = d * psi               if d >= tau
//! ```
//!
//! The binary contrastive loss is the special case `psi ∈ {0, 1}`.

use serde::{Deserialize, Serialize};

use crate::embed::Descriptor;
use crate::error::{check_dims, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin_tau: f64,
    /// Pairs with `psi` strictly above this are positives for binary labels.
    pub positive_threshold: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_tau: 0.5,
            positive_threshold: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin_tau > 0.0 && self.margin_tau.is_finite()) {
            return Err(Error::invalid(format!(
                "margin must be positive, got {}",
                self.margin_tau
            )));
        }
        if !(self.positive_threshold > 0.0 && self.positive_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "positive threshold must lie in (0, 1), got {}",
                self.positive_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLossResult {
    pub loss: f64,
    /// Derivative of the loss with respect to the distance.
    pub dloss_dd: f64,
}

fn check_distance(d: f64) -> Result<()> {
    if !d.is_finite() {
        return Err(Error::NonFinite(format!("distance {d}")));
    }
    if d < 0.0 {
        return Err(Error::invalid(format!(
            "distance must be finite and non-negative, got {d}"
        )));
    }
    Ok(())
}

fn check_psi(psi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&psi) {
        return Err(Error::invalid(format!("psi must lie in [0, 1], got {psi}")));
    }
    Ok(())
}

/// Euclidean distance between two descriptors.
pub fn l2_distance(a: &Descriptor, b: &Descriptor) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Binary contrastive loss; `similar` is the label `y = 1`.
pub fn cl_loss(d: f64, similar: bool, cfg: &LossConfig) -> Result<PairLossResult> {
    check_distance(d)?;
    let tau = cfg.margin_tau;
    Ok(if similar {
        PairLossResult {
            loss: 0.5 * d * d,
            dloss_dd: d,
        }
    } else {
        let gap = (tau - d).max(0.0);
        PairLossResult {
            loss: 0.5 * gap * gap,
            dloss_dd: (d - tau).min(0.0),
        }
    })
}

pub fn gcl_loss(d: f64, psi: f64, cfg: &LossConfig) -> Result<PairLossResult> {
    check_distance(d)?;
    check_psi(psi)?;
    let tau = cfg.margin_tau;
    let gap = (tau - d).max(0.0);
    let loss = psi * 0.5 * d * d + (1.0 - psi) * 0.5 * gap * gap;
    let dloss_dd = if d < tau {
        d + tau * (psi - 1.0)
    } else {
        d * psi
    };
    Ok(PairLossResult { loss, dloss_dd })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorGradients {
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
    pub loss: f64,
    pub distance: f64,
}

/// Chain rule through `d = ‖a - b‖`. At `d = 0` both gradients are zero.
pub fn gcl_descriptor_gradients(
    a: &Descriptor,
    b: &Descriptor,
    psi: f64,
    cfg: &LossConfig,
) -> Result<DescriptorGradients> {
    let d = l2_distance(a, b)?;
    let r = gcl_loss(d, psi, cfg)?;
    let grad_a: Vec<f64> = if d > 0.0 {
        let s = r.dloss_dd / d;
        a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| s * (x - y))
            .collect()
    } else {
        vec![0.0; a.dim()]
    };
    let grad_b = grad_a.iter().map(|g| -g).collect();
    Ok(DescriptorGradients {
        grad_a,
        grad_b,
        loss: r.loss,
        distance: d,
    })
}

/// `1` iff `psi` is strictly above the configured threshold.
pub fn binary_label_from_psi(psi: f64, cfg: &LossConfig) -> bool {
    psi > cfg.positive_threshold
}
