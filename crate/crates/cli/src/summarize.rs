//! `summarize`: scores one video with a stored selector and emits its shot selection.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sumsr_core::checkpoint::read_checkpoint;
use sumsr_core::dataset::load_dataset;
use sumsr_core::segmentation::KtsConfig;
use sumsr_core::summarizer::{SegmentedVideo, ShotSelection};
use sumsr_core::Error;

use crate::config::RunRecord;

#[derive(Debug, Serialize)]
pub struct SummaryExport {
    pub video_id: String,
    pub alpha: f64,
    #[serde(flatten)]
    pub selection: ShotSelection,
}

/// Segmentation settings of the run that produced `model`, when it sits in a
/// run directory; defaults otherwise.
fn kts_for(model: &Path) -> KtsConfig {
    model
        .parent()
        .and_then(|dir| fs::read_to_string(dir.join("run.json")).ok())
        .and_then(|text| serde_json::from_str::<RunRecord>(&text).ok())
        .map(|r| r.training.kts)
        .unwrap_or_default()
}

pub fn summarize(model: &Path, manifest: &Path, video_id: &str, alpha: f64) -> anyhow::Result<SummaryExport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")).into());
    }
    let (_, state) = read_checkpoint(model)?;
    let selector = state
        .selector
        .ok_or_else(|| Error::Data(format!("{} holds no selector", model.display())))?;
    let dataset = load_dataset(manifest)?;
    let record = dataset
        .videos
        .iter()
        .find(|v| v.sequence.video_id == video_id)
        .ok_or_else(|| Error::Lookup(format!("video {video_id} not in {}", manifest.display())))?;
    let video = SegmentedVideo::prepare(record, &kts_for(model))?;
    let scores = selector.scores(&video.features)?;
    Ok(SummaryExport {
        video_id: video_id.to_string(),
        alpha,
        selection: video.summarize(&scores, alpha)?,
    })
}
