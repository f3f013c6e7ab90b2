//! Training objectives evaluated on plain matrices. The tape counterparts
//! live in [`crate::autodiff`] and compute the same quantities.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

/// Loss values of one optimization step or evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub l_recon: Option<f64>,
    pub l_spar: Option<f64>,
    pub l_model: Option<f64>,
    pub l_mask: Option<f64>,
}

impl LossValues {
    pub fn with_model(l_recon: f64, l_spar: f64) -> Self {
        Self {
            l_recon: Some(l_recon),
            l_spar: Some(l_spar),
            l_model: Some(model_loss(l_recon, l_spar)),
            l_mask: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        [self.l_recon, self.l_spar, self.l_model, self.l_mask]
            .iter()
            .flatten()
            .all(|v| v.is_finite())
    }
}

/// `||V - V_hat||^2`, summed over every entry.
pub fn recon_loss(original: &Mat, reconstructed: &Mat) -> Result<f64> {
    if original.dim() != reconstructed.dim() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            original.dim(),
            reconstructed.dim()
        )));
    }
    Ok(original
        .iter()
        .zip(reconstructed.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// `|mean(p) - sigma|`.
pub fn spar_loss(scores: &[f64], sigma: f64) -> f64 {
    if scores.is_empty() {
        return sigma.abs();
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    (mean - sigma).abs()
}

/// Mean squared row distance over the masked indices only.
pub fn mask_loss(masked_input: &Mat, reconstructed: &Mat, masked: &[usize]) -> Result<f64> {
    if masked_input.dim() != reconstructed.dim() {
        return Err(Error::Input(format!(
            "shape mismatch: {:?} vs {:?}",
            masked_input.dim(),
            reconstructed.dim()
        )));
    }
    if masked.is_empty() {
        return Err(Error::Input("mask loss needs at least one masked frame".into()));
    }
    let n = masked_input.nrows();
    let mut total = 0.0;
    for &j in masked {
        if j >= n {
            return Err(Error::Input(format!("masked index {j} out of range for {n} frames")));
        }
        total += masked_input
            .row(j)
            .iter()
            .zip(reconstructed.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / masked.len() as f64)
}

pub fn model_loss(l_recon: f64, l_spar: f64) -> f64 {
    l_recon + l_spar
}
