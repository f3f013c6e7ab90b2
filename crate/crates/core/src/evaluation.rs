//! Keyshot F-score protocol and its aggregations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{AggregationMode, ReferenceSummaries};
use crate::error::{Error, Result};
use crate::networks::Selector;
use crate::summarizer::SegmentedVideo;

/// F-score (0-100) between two binary masks of equal length. Zero when
/// the overlap or either mask is empty.
pub fn fscore(pred: &[bool], reference: &[bool]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Input(format!(
            "mask length mismatch: {} vs {}",
            pred.len(),
            reference.len()
        )));
    }
    let overlap = pred.iter().zip(reference).filter(|(a, b)| **a && **b).count();
    let n_pred = pred.iter().filter(|v| **v).count();
    let n_ref = reference.iter().filter(|v| **v).count();
    if overlap == 0 || n_pred == 0 || n_ref == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / n_pred as f64;
    let recall = overlap as f64 / n_ref as f64;
    Ok(2.0 * precision * recall / (precision + recall) * 100.0)
}

/// Per-user F-scores reduced by the reference set's aggregation mode.
pub fn video_fscore(pred: &[bool], refs: &ReferenceSummaries) -> Result<f64> {
    video_fscore_with(pred, refs, refs.aggregation_mode)
}

pub fn video_fscore_with(pred: &[bool], refs: &ReferenceSummaries, mode: AggregationMode) -> Result<f64> {
    if refs.per_user_masks.is_empty() {
        return Err(Error::Data("no reference summaries".into()));
    }
    let scores = refs
        .per_user_masks
        .iter()
        .map(|r| fscore(pred, r))
        .collect::<Result<Vec<_>>>()?;
    reduce_fscores(&scores, mode)
}

/// Reduces per-user F-scores to one video score.
pub fn reduce_fscores(scores: &[f64], mode: AggregationMode) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Data("no per-user scores to reduce".into()));
    }
    Ok(match mode {
        AggregationMode::MaxOverUsers => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        AggregationMode::MeanOverUsers => scores.iter().sum::<f64>() / scores.len() as f64,
        AggregationMode::Single => {
            if scores.len() != 1 {
                return Err(Error::Data(format!(
                    "single-reference mode with {} reference masks",
                    scores.len()
                )));
            }
            scores[0]
        }
    })
}

/// Scores, summarizes and evaluates every test video of a split.
/// `mode` overrides each video's own aggregation mode when given.
pub fn evaluate_split(
    selector: &Selector,
    videos: &[(&SegmentedVideo, &ReferenceSummaries)],
    alpha: f64,
    mode: Option<AggregationMode>,
) -> Result<EvalResult> {
    let mut per_video_f = BTreeMap::new();
    for (video, refs) in videos {
        if refs.per_user_masks.is_empty() {
            return Err(Error::Data(format!(
                "video {} has no reference summaries",
                video.video_id
            )));
        }
        let scores = selector.scores(&video.features)?;
        let selection = video.summarize(&scores, alpha)?;
        let f = video_fscore_with(&selection.native_mask, refs, mode.unwrap_or(refs.aggregation_mode))?;
        per_video_f.insert(video.video_id.clone(), f);
    }
    Ok(EvalResult::from_videos(per_video_f))
}

/// Scores of one evaluated split (or an aggregate over seeds).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_video_f: BTreeMap<String, f64>,
    pub split_mean: f64,
    pub per_seed_means: Vec<f64>,
    pub seed_std: f64,
}

impl EvalResult {
    pub fn from_videos(per_video_f: BTreeMap<String, f64>) -> Self {
        let split_mean = mean(per_video_f.values().copied());
        Self {
            per_video_f,
            split_mean,
            per_seed_means: vec![split_mean],
            seed_std: 0.0,
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values.iter().copied());
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Mean of the per-seed split means and their population standard deviation.
pub fn aggregate_seeds(results: &[EvalResult]) -> EvalResult {
    let per_seed_means: Vec<f64> = results.iter().map(|r| r.split_mean).collect();
    EvalResult {
        per_video_f: BTreeMap::new(),
        split_mean: mean(per_seed_means.iter().copied()),
        seed_std: population_std(&per_seed_means),
        per_seed_means,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(len: usize, on: impl Fn(usize) -> bool) -> Vec<bool> {
        (0..len).map(on).collect()
    }

    #[test]
    fn fscore_cases() {
        let a = mask(10, |i| i < 4);
        assert_eq!(fscore(&a, &a).unwrap(), 100.0);
        let b = mask(10, |i| i >= 4);
        assert_eq!(fscore(&a, &b).unwrap(), 0.0);
        assert_eq!(fscore(&[false; 10], &a).unwrap(), 0.0);
        assert!(fscore(&a, &[true; 3]).is_err());
    }

    #[test]
    fn fscore_worked_example() {
        // |pred| = 30, |ref| = 20, overlap = 15 -> P = 0.5, R = 0.75, F = 60
        let pred = mask(100, |i| i < 30);
        let reference = mask(100, |i| (15..35).contains(&i));
        assert!((fscore(&pred, &reference).unwrap() - 60.0).abs() < 1e-9);
    }

    fn refs_with_scores(mode: AggregationMode) -> (Vec<bool>, ReferenceSummaries) {
        // pred covers [0, 10); user masks give F = 40, 70 (approx) and 10 (approx)
        let pred = mask(100, |i| i < 10);
        let users = vec![
            mask(100, |i| i < 40),
            mask(100, |i| i < 10),
            mask(100, |i| (9..28).contains(&i)),
        ];
        (
            pred,
            ReferenceSummaries {
                per_user_masks: users,
                aggregation_mode: mode,
            },
        )
    }

    #[test]
    fn max_mode_dominates_mean_mode() {
        let (pred, refs) = refs_with_scores(AggregationMode::MaxOverUsers);
        let max = video_fscore(&pred, &refs).unwrap();
        let mean = video_fscore_with(&pred, &refs, AggregationMode::MeanOverUsers).unwrap();
        assert_eq!(max, 100.0);
        let expected =
            (fscore(&pred, &refs.per_user_masks[0]).unwrap() + 100.0 + fscore(&pred, &refs.per_user_masks[2]).unwrap())
                / 3.0;
        assert!((mean - expected).abs() < 1e-12);
        assert!(max >= mean);
    }

    #[test]
    fn single_mode_passthrough() {
        let pred = mask(20, |i| i < 5);
        let r = mask(20, |i| i < 10);
        let refs = ReferenceSummaries {
            per_user_masks: vec![r.clone()],
            aggregation_mode: AggregationMode::Single,
        };
        assert_eq!(video_fscore(&pred, &refs).unwrap(), fscore(&pred, &r).unwrap());
    }

    #[test]
    fn aggregation_arithmetic() {
        let mut per_video = BTreeMap::new();
        per_video.insert("a".to_string(), 50.0);
        per_video.insert("b".to_string(), 70.0);
        assert_eq!(EvalResult::from_videos(per_video).split_mean, 60.0);

        let seeds: Vec<EvalResult> = [58.0, 62.0]
            .iter()
            .map(|&m| EvalResult {
                split_mean: m,
                ..Default::default()
            })
            .collect();
        let agg = aggregate_seeds(&seeds);
        assert_eq!(agg.split_mean, 60.0);
        assert_eq!(agg.seed_std, 2.0);

        let flat: Vec<EvalResult> = (0..5)
            .map(|_| EvalResult {
                split_mean: 60.0,
                ..Default::default()
            })
            .collect();
        assert_eq!(aggregate_seeds(&flat).seed_std, 0.0);
    }

    #[test]
    fn reduce_modes() {
        let s = [40.0, 70.0, 10.0];
        assert_eq!(reduce_fscores(&s, AggregationMode::MaxOverUsers).unwrap(), 70.0);
        assert_eq!(reduce_fscores(&s, AggregationMode::MeanOverUsers).unwrap(), 40.0);
        assert!(reduce_fscores(&s, AggregationMode::Single).is_err());
        assert_eq!(reduce_fscores(&[55.0], AggregationMode::Single).unwrap(), 55.0);
        assert!(reduce_fscores(&[], AggregationMode::MeanOverUsers).is_err());
    }

    #[test]
    fn split_mean_of_two() {
        let per: BTreeMap<String, f64> = [("a".to_string(), 50.0), ("b".to_string(), 70.0)].into();
        assert_eq!(EvalResult::from_videos(per).split_mean, 60.0);
    }
}
