//! Turning frame importance scores into a length-budgeted keyshot summary.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::dataset::VideoRecord;
use crate::error::{Error, Result};
use crate::segmentation::{native_intervals, segmentation_from_annotation, KtsConfig, ShotSegmentation};

/// A video paired with its shot segmentation, ready for summarization.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedVideo {
    pub video_id: String,
    pub features: Mat,
    pub picks: Vec<usize>,
    pub n_frames_original: usize,
    pub segmentation: ShotSegmentation,
}

impl SegmentedVideo {
    /// Uses the record's own change points when present, KTS otherwise.
    pub fn prepare(record: &VideoRecord, kts: &KtsConfig) -> Result<Self> {
        let seq = &record.sequence;
        let segmentation = match &record.change_points {
            Some(cps) => segmentation_from_annotation(cps, &seq.picks, seq.n_frames_original)?,
            None => kts.segment(&seq.features, &seq.picks, seq.n_frames_original)?,
        };
        Ok(Self {
            video_id: seq.video_id.clone(),
            features: seq.features.clone(),
            picks: seq.picks.clone(),
            n_frames_original: seq.n_frames_original,
            segmentation,
        })
    }

    pub fn prepare_all(records: &[&VideoRecord], kts: &KtsConfig) -> Result<Vec<Self>> {
        records.iter().map(|r| Self::prepare(r, kts)).collect()
    }

    pub fn summarize(&self, scores: &[f64], alpha: f64) -> Result<ShotSelection> {
        summarize(scores, &self.segmentation, &self.picks, self.n_frames_original, alpha)
    }
}

/// Result of shot-level selection for one video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotSelection {
    pub shot_scores: Vec<f64>,
    pub selected: Vec<bool>,
    /// Selection expanded to subsampled frames.
    pub frame_mask: Vec<bool>,
    /// Selection expanded to original frames.
    pub native_mask: Vec<bool>,
    pub total_value: f64,
    /// Native frames covered by the selected shots.
    pub total_length: usize,
    pub budget: usize,
}

/// Mean frame score of every shot.
pub fn shot_scores(scores: &[f64], segmentation: &ShotSegmentation) -> Result<Vec<f64>> {
    if segmentation.num_frames() != scores.len() {
        return Err(Error::Input(format!(
            "segmentation covers {} frames but {} scores were given",
            segmentation.num_frames(),
            scores.len()
        )));
    }
    Ok(segmentation
        .shot_ranges()
        .into_iter()
        .map(|(a, b)| scores[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect())
}

/// Exact 0/1 knapsack: maximizes the summed shot score under a length budget.
///
/// Among optimal selections the one with the smaller total length wins, then
/// the lexicographically smallest selection vector. The value of a selection
/// is accumulated from the last selected shot to the first.
pub fn knapsack_select(values: &[f64], lengths: &[usize], budget: usize) -> Result<Vec<bool>> {
    if values.len() != lengths.len() {
        return Err(Error::Input(format!(
            "{} values for {} lengths",
            values.len(),
            lengths.len()
        )));
    }
    if lengths.contains(&0) {
        return Err(Error::Input("shot lengths must be positive".into()));
    }
    let n = values.len();
    let w = budget + 1;
    // best[i][c]: optimum over shots i.. with capacity c, as (value, length).
    let mut best = vec![(0.0f64, 0usize); (n + 1) * w];
    for i in (0..n).rev() {
        for c in 0..=budget {
            let skip = best[(i + 1) * w + c];
            let mut cell = skip;
            if lengths[i] <= c {
                let rest = best[(i + 1) * w + c - lengths[i]];
                let take = (values[i] + rest.0, lengths[i] + rest.1);
                if better(take, skip) {
                    cell = take;
                }
            }
            best[i * w + c] = cell;
        }
    }
    let mut selected = vec![false; n];
    let mut c = budget;
    for i in 0..n {
        if best[i * w + c] != best[(i + 1) * w + c] {
            selected[i] = true;
            c -= lengths[i];
        }
    }
    Ok(selected)
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Native-frame budget `floor(alpha * L)`.
pub fn budget_for(alpha: f64, n_frames_original: usize) -> usize {
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    (alpha * n_frames_original as f64 + 1e-9).floor() as usize
}

/// Shot scoring, knapsack selection and mask expansion for one video.
pub fn summarize(
    scores: &[f64],
    segmentation: &ShotSegmentation,
    picks: &[usize],
    n_frames_original: usize,
    alpha: f64,
) -> Result<ShotSelection> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if picks.len() != scores.len() {
        return Err(Error::Input(format!(
            "{} picks for {} scores",
            picks.len(),
            scores.len()
        )));
    }
    let shot_scores = shot_scores(scores, segmentation)?;
    let budget = budget_for(alpha, n_frames_original);
    let selected = knapsack_select(&shot_scores, &segmentation.shot_lengths_native, budget)?;

    let mut frame_mask = vec![false; scores.len()];
    for ((a, b), &sel) in segmentation.shot_ranges().into_iter().zip(&selected) {
        if sel {
            frame_mask[a..b].iter_mut().for_each(|f| *f = true);
        }
    }
    let intervals = native_intervals(picks, n_frames_original)?;
    let mut native_mask = vec![false; n_frames_original];
    for (t, &(a, b)) in intervals.iter().enumerate() {
        if frame_mask[t] {
            native_mask[a..b].iter_mut().for_each(|f| *f = true);
        }
    }
    let total_value = selected
        .iter()
        .zip(&shot_scores)
        .rev()
        .filter(|(s, _)| **s)
        .fold(0.0, |acc, (_, v)| v + acc);
    let total_length = native_mask.iter().filter(|v| **v).count();
    Ok(ShotSelection {
        shot_scores,
        selected,
        frame_mask,
        native_mask,
        total_value,
        total_length,
        budget,
    })
}

/// `[start, end)` runs of set entries.
pub fn mask_spans(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &v) in mask.iter().enumerate() {
        match (v, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, mask.len()));
    }
    spans
}
