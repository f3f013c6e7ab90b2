//! Unsupervised checkpoint selection.
//!
//! For every selector checkpoint, validation videos are summarized with the
//! hard (binary) summary, reconstructed by a fixed reference reconstructor,
//! and scored with the reconstruction and sparsity losses. The per-epoch
//! means are min-max scaled separately and the epoch maximizing
//! `recon_norm - spar_norm` is chosen.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{recon_loss, spar_loss};
use crate::networks::{hard_summary, MaskVector, Reconstructor, Selector};
use crate::summarizer::SegmentedVideo;

/// Per-epoch, per-video validation losses with their means and normalized means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    /// `[epoch][video]`
    pub recon: Vec<Vec<f64>>,
    /// `[epoch][video]`
    pub spar: Vec<Vec<f64>>,
    pub recon_mean: Vec<f64>,
    pub spar_mean: Vec<f64>,
    pub recon_norm: Vec<f64>,
    pub spar_norm: Vec<f64>,
}

fn row_means(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter()
        .map(|r| {
            if r.is_empty() {
                0.0
            } else {
                r.iter().sum::<f64>() / r.len() as f64
            }
        })
        .collect()
}

impl ValidationRecord {
    pub fn from_raw(recon: Vec<Vec<f64>>, spar: Vec<Vec<f64>>) -> Result<Self> {
        if recon.len() != spar.len() {
            return Err(Error::Input(format!(
                "{} recon epochs vs {} sparsity epochs",
                recon.len(),
                spar.len()
            )));
        }
        let recon_mean = row_means(&recon);
        let spar_mean = row_means(&spar);
        Ok(Self::from_means_with_raw(recon, spar, recon_mean, spar_mean))
    }

    /// A record built from per-epoch means only.
    pub fn from_means(recon_mean: Vec<f64>, spar_mean: Vec<f64>) -> Result<Self> {
        if recon_mean.len() != spar_mean.len() {
            return Err(Error::Input("mean arrays differ in length".into()));
        }
        Ok(Self::from_means_with_raw(Vec::new(), Vec::new(), recon_mean, spar_mean))
    }

    fn from_means_with_raw(
        recon: Vec<Vec<f64>>,
        spar: Vec<Vec<f64>>,
        recon_mean: Vec<f64>,
        spar_mean: Vec<f64>,
    ) -> Self {
        let recon_norm = normalize_losses(&recon_mean);
        let spar_norm = normalize_losses(&spar_mean);
        Self {
            recon,
            spar,
            recon_mean,
            spar_mean,
            recon_norm,
            spar_norm,
        }
    }

    pub fn epochs(&self) -> usize {
        self.recon_mean.len()
    }
}

/// Min-max scaling to `[0, 1]`; a constant array maps to all zeros.
// NaN ranges count as constant too.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn normalize_losses(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - min) / range).collect()
}

/// 1-based epoch maximizing `recon_norm - spar_norm`; ties go to the earliest.
pub fn select_epoch(record: &ValidationRecord) -> Result<usize> {
    select_epoch_from_norms(&record.recon_norm, &record.spar_norm)
}

pub fn select_epoch_from_norms(recon_norm: &[f64], spar_norm: &[f64]) -> Result<usize> {
    if recon_norm.is_empty() || recon_norm.len() != spar_norm.len() {
        return Err(Error::Input(
            "selection needs equally long, nonempty normalized arrays".into(),
        ));
    }
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, (r, s)) in recon_norm.iter().zip(spar_norm).enumerate() {
        let diff = r - s;
        if diff > best {
            best = diff;
            arg = i;
        }
    }
    Ok(arg + 1)
}

fn argmin_1based(values: &[f64]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::Input("cannot select from an empty list".into()));
    }
    let mut best = f64::INFINITY;
    let mut arg = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < best {
            best = v;
            arg = i;
        }
    }
    Ok(arg + 1)
}

/// For jointly trained models: the 1-based epoch whose own reconstructor has
/// the smallest mean validation reconstruction loss.
pub fn select_reconstructor_joint(recon_means: &[f64]) -> Result<usize> {
    argmin_1based(recon_means)
}

/// 1-based iteration whose selected model has the smallest validation
/// reconstruction loss.
pub fn select_iteration(val_recon: &[f64]) -> Result<usize> {
    argmin_1based(val_recon)
}

/// One row of the normalized loss curves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub epoch: usize,
    pub recon_mean: f64,
    pub spar_mean: f64,
    pub recon_norm: f64,
    pub spar_norm: f64,
    pub difference: f64,
}

pub fn selection_diagnostics(record: &ValidationRecord) -> Vec<DiagnosticRow> {
    (0..record.epochs())
        .map(|i| DiagnosticRow {
            epoch: i + 1,
            recon_mean: record.recon_mean[i],
            spar_mean: record.spar_mean[i],
            recon_norm: record.recon_norm[i],
            spar_norm: record.spar_norm[i],
            difference: record.recon_norm[i] - record.spar_norm[i],
        })
        .collect()
}

/// Validation outcome of one selector checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochValidation {
    pub recon: Vec<f64>,
    pub spar: Vec<f64>,
    /// Hard frame selections per validation video.
    pub frame_masks: Vec<Vec<bool>>,
}

/// Scores, summarizes and reconstructs every validation video for one selector.
pub fn validate_selector(
    selector: &Selector,
    reference: &Reconstructor,
    mask: &MaskVector,
    videos: &[SegmentedVideo],
    alpha: f64,
    sigma: f64,
) -> Result<EpochValidation> {
    let mut out = EpochValidation {
        recon: Vec::with_capacity(videos.len()),
        spar: Vec::with_capacity(videos.len()),
        frame_masks: Vec::with_capacity(videos.len()),
    };
    for video in videos {
        let scores = selector.scores(&video.features)?;
        let selection = video.summarize(&scores, alpha)?;
        out.spar.push(spar_loss(&scores, sigma));
        out.frame_masks.push(selection.frame_mask);
    }
    out.recon = reconstruction_losses(reference, mask, videos, &out.frame_masks)?;
    Ok(out)
}

/// `||rNet(SU) - V||^2` for given hard frame selections.
pub fn reconstruction_losses(
    reference: &Reconstructor,
    mask: &MaskVector,
    videos: &[SegmentedVideo],
    frame_masks: &[Vec<bool>],
) -> Result<Vec<f64>> {
    videos
        .iter()
        .zip(frame_masks)
        .map(|(video, fm)| {
            let summary = hard_summary(&video.features, fm, mask)?;
            let rec = reference.reconstruct(&summary)?;
            recon_loss(&video.features, &rec)
        })
        .collect()
}

/// Raw per-epoch losses of a sequence of selector checkpoints against one
/// reference reconstructor.
pub fn epoch_validation_losses<'a>(
    selectors: impl IntoIterator<Item = &'a Selector>,
    reference: &Reconstructor,
    mask: &MaskVector,
    videos: &[SegmentedVideo],
    alpha: f64,
    sigma: f64,
) -> Result<ValidationRecord> {
    let mut recon = Vec::new();
    let mut spar = Vec::new();
    for selector in selectors {
        let v = validate_selector(selector, reference, mask, videos, alpha, sigma)?;
        recon.push(v.recon);
        spar.push(v.spar);
    }
    if recon.is_empty() {
        return Err(Error::Input("no checkpoints to validate".into()));
    }
    ValidationRecord::from_raw(recon, spar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_losses(&[2.0, 4.0, 6.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_losses(&[3.0, 3.0, 3.0]), vec![0.0, 0.0, 0.0]);
        let a = normalize_losses(&[1.0, 5.0, 2.0]);
        let b = normalize_losses(&[3.0 * 1.0 + 7.0, 3.0 * 5.0 + 7.0, 3.0 * 2.0 + 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn select_epoch_worked_example() {
        assert_eq!(select_epoch_from_norms(&[0.1, 0.5, 0.9], &[0.9, 0.5, 0.0]).unwrap(), 3);
        assert_eq!(select_epoch_from_norms(&[0.2, 0.3, 0.4], &[0.2, 0.3, 0.4]).unwrap(), 1);
        assert!(select_epoch_from_norms(&[], &[]).is_err());
    }

    #[test]
    fn argmin_rules() {
        assert_eq!(select_reconstructor_joint(&[5.0, 3.0, 4.0]).unwrap(), 2);
        assert_eq!(select_reconstructor_joint(&[5.0]).unwrap(), 1);
        assert_eq!(select_iteration(&[4.2, 3.9, 4.0, 4.1, 4.3]).unwrap(), 2);
        assert_eq!(select_iteration(&[1.0, 1.0]).unwrap(), 1);
        assert!(select_iteration(&[]).is_err());
    }

    #[test]
    fn diagnostics_table() {
        let rec = ValidationRecord::from_means(vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]).unwrap();
        let rows = selection_diagnostics(&rec);
        assert_eq!(rows.len(), 3);
        for r in &rows {
            assert_eq!(r.difference, r.recon_norm - r.spar_norm);
        }
        assert!(rows.windows(2).all(|w| w[1].difference > w[0].difference));
    }

    #[test]
    fn record_means() {
        let rec = ValidationRecord::from_raw(
            vec![vec![1.0, 3.0], vec![2.0, 2.0], vec![0.0, 8.0]],
            vec![vec![0.0, 0.0]; 3],
        )
        .unwrap();
        assert_eq!(rec.recon_mean, vec![2.0, 2.0, 4.0]);
        assert_eq!(rec.spar_norm, vec![0.0; 3]);
        assert_eq!(select_epoch(&rec).unwrap(), 3);
    }
}
