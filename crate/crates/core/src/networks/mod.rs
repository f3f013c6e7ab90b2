//! Selector and reconstructor networks, the mask vector, and the summary
//! constructions that connect them.

mod layers;
mod reconstructor;
mod selector;

pub use layers::{BiLstm, BiLstmOutput, BiLstmVars, Linear, LinearVars, LstmCell, LstmCellVars, LstmState, Parameters};
pub use reconstructor::{Reconstructor, ReconstructorOutput, ReconstructorVars};
pub use selector::{Selector, SelectorVars};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mat;
use crate::error::{Error, Result};

/// Learned `d`-dimensional placeholder substituted for unselected frames.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVector {
    /// `1 x d`
    pub m: Mat,
    pub trainable: bool,
}

impl MaskVector {
    pub fn zeros(d: usize, trainable: bool) -> Self {
        Self {
            m: Mat::zeros((1, d)),
            trainable,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }
}

/// A sequence with some rows replaced by the mask vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSequence {
    pub sequence: Mat,
    /// Per-frame flag, `true` where the row was replaced by `m`.
    pub replaced: Vec<bool>,
    /// Indices `j` with `x'_j = m`.
    pub masked: Vec<usize>,
    pub kept: Vec<usize>,
}

pub(crate) fn check_dims(d: usize, d_h: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::Config("feature width d must be at least 1".into()));
    }
    if d_h < 2 || !d_h.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "hidden width d_h must be a positive even number, got {d_h}"
        )));
    }
    Ok(())
}

pub(crate) fn check_features(features: &Mat, d: usize) -> Result<()> {
    if features.ncols() != d {
        return Err(Error::Input(format!(
            "feature width {} does not match model width {d}",
            features.ncols()
        )));
    }
    if features.nrows() == 0 {
        return Err(Error::Input("empty feature sequence".into()));
    }
    if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite input at row {}, column {}",
            pos / d,
            pos % d
        )));
    }
    Ok(())
}

pub(crate) fn prefixed<'a>(prefix: &str, params: Vec<(String, &'a Mat)>) -> Vec<(String, &'a Mat)> {
    params
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

fn check_mask(features: &Mat, mask: &MaskVector) -> Result<()> {
    if mask.dim() != features.ncols() {
        return Err(Error::Input(format!(
            "mask width {} does not match feature width {}",
            mask.dim(),
            features.ncols()
        )));
    }
    Ok(())
}

/// Rows `p_i x_i + (1 - p_i) m`.
pub fn blend_summary(features: &Mat, scores: &[f64], mask: &MaskVector) -> Result<Mat> {
    check_mask(features, mask)?;
    if scores.len() != features.nrows() {
        return Err(Error::Input(format!(
            "{} scores for {} frames",
            scores.len(),
            features.nrows()
        )));
    }
    if let Some((i, p)) = scores.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Contract(format!("score {p} at frame {i} is outside [0, 1]")));
    }
    let mut out = features.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let p = scores[i];
        for (v, m) in row.iter_mut().zip(mask.m.row(0).iter()) {
            *v = p * *v + (1.0 - p) * m;
        }
    }
    Ok(out)
}

/// Rows `x_i` where `frame_mask[i]` is set, `m` elsewhere.
pub fn hard_summary(features: &Mat, frame_mask: &[bool], mask: &MaskVector) -> Result<Mat> {
    check_mask(features, mask)?;
    if frame_mask.len() != features.nrows() {
        return Err(Error::Input(format!(
            "frame mask of length {} for {} frames",
            frame_mask.len(),
            features.nrows()
        )));
    }
    let mut out = features.clone();
    for (i, &keep) in frame_mask.iter().enumerate() {
        if !keep {
            out.row_mut(i).assign(&mask.m.row(0));
        }
    }
    Ok(out)
}

/// Draws per-frame replacement flags: each frame is kept with probability `alpha`.
pub fn sample_replaced<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<bool> {
    (0..n).map(|_| rng.random::<f64>() >= alpha).collect()
}

/// Keeps each frame independently with probability `alpha` and replaces
/// the rest with `m`.
pub fn random_mask(features: &Mat, mask: &MaskVector, alpha: f64, seed: u64) -> Result<MaskedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_mask_with(features, mask, alpha, &mut rng)
}

pub fn random_mask_with<R: Rng + ?Sized>(
    features: &Mat,
    mask: &MaskVector,
    alpha: f64,
    rng: &mut R,
) -> Result<MaskedSequence> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let replaced = sample_replaced(features.nrows(), alpha, rng);
    let keep: Vec<bool> = replaced.iter().map(|r| !r).collect();
    let sequence = hard_summary(features, &keep, mask)?;
    let masked = (0..replaced.len()).filter(|&i| replaced[i]).collect();
    let kept = (0..replaced.len()).filter(|&i| !replaced[i]).collect();
    Ok(MaskedSequence {
        sequence,
        replaced,
        masked,
        kept,
    })
}
