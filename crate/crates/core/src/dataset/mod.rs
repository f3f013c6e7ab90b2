//! On-disk dataset container, video/annotation types, split generation and
//! the synthetic planted-event generator.
//!
//! A dataset directory holds `manifest.json` plus, per video, a binary
//! feature blob and a JSON annotation. Feature blobs are a 16-byte header
//! (`SUMSRF1\0`, then `n` and `d` as little-endian `u32`) followed by
//! `n * d` little-endian `f32` values in row-major order.

mod split;
mod synth;

pub use split::{load_splits, make_splits, save_splits, SplitSpec};
pub use synth::{synth_generate, synth_generate_with, SynthConfig, SynthDataset, SynthTruth};

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

pub const CONTAINER_VERSION: &str = "1";
pub const FEATURE_MAGIC: &[u8; 8] = b"SUMSRF1\0";

/// A video as a sequence of frame embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    /// `n x d`
    pub features: Mat,
    pub n_frames_original: usize,
    /// Original-frame index of each subsampled frame.
    pub picks: Vec<usize>,
}

impl FrameFeatureSequence {
    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.video_id;
        if self.n() < 2 || self.d() < 1 {
            return Err(Error::Data(format!(
                "video {id}: need n >= 2 and d >= 1, got {}x{}",
                self.n(),
                self.d()
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "video {id}: non-finite feature at row {}, column {}",
                pos / self.d(),
                pos % self.d()
            )));
        }
        if self.picks.len() != self.n() {
            return Err(Error::Data(format!(
                "video {id}: {} picks for {} frames",
                self.picks.len(),
                self.n()
            )));
        }
        if self.picks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(format!("video {id}: picks are not strictly increasing")));
        }
        if self.picks[self.n() - 1] >= self.n_frames_original {
            return Err(Error::Data(format!(
                "video {id}: last pick {} beyond original length {}",
                self.picks[self.n() - 1],
                self.n_frames_original
            )));
        }
        Ok(())
    }
}

/// How per-user F-scores are reduced to one number per video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    MaxOverUsers,
    MeanOverUsers,
    Single,
}

impl FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" | "max_over_users" => Ok(Self::MaxOverUsers),
            "mean" | "mean_over_users" => Ok(Self::MeanOverUsers),
            "single" => Ok(Self::Single),
            other => Err(Error::Config(format!("unknown aggregation mode '{other}'"))),
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::MaxOverUsers => "max",
            Self::MeanOverUsers => "mean",
            Self::Single => "single",
        })
    }
}

/// User or ground-truth keyframe indicators at the native frame rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceSummaries {
    pub per_user_masks: Vec<Vec<bool>>,
    pub aggregation_mode: AggregationMode,
}

impl ReferenceSummaries {
    pub fn validate(&self, n_frames_original: usize) -> Result<()> {
        if self.per_user_masks.is_empty() {
            return Err(Error::Data("no reference masks".into()));
        }
        if let Some(m) = self.per_user_masks.iter().find(|m| m.len() != n_frames_original) {
            return Err(Error::Data(format!(
                "reference mask of length {} for a video of {n_frames_original} frames",
                m.len()
            )));
        }
        Ok(())
    }
}

/// A video together with its references and optional provided shot boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub sequence: FrameFeatureSequence,
    pub references: ReferenceSummaries,
    pub change_points: Option<Vec<usize>>,
}

impl VideoRecord {
    pub fn id(&self) -> &str {
        &self.sequence.video_id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub video_id: String,
    pub features: PathBuf,
    pub annotation: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub container_version: String,
    pub d: usize,
    #[serde(default)]
    pub notes: String,
    pub videos: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Annotation {
    picks: Vec<usize>,
    n_frames_original: usize,
    aggregation_mode: AggregationMode,
    /// Per user, `[start, end)` spans of selected original frames.
    per_user_masks: Vec<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    change_points: Option<Vec<usize>>,
}

/// An in-memory dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d: usize,
    pub notes: String,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id().to_string()).collect()
    }

    pub fn get(&self, video_id: &str) -> Result<&VideoRecord> {
        self.videos
            .iter()
            .find(|v| v.id() == video_id)
            .ok_or_else(|| Error::Lookup(format!("unknown video id '{video_id}'")))
    }

    pub fn subset(&self, ids: &[String]) -> Result<Vec<&VideoRecord>> {
        ids.iter().map(|id| self.get(id)).collect()
    }
}

fn spans_from_mask(mask: &[bool]) -> Vec<(usize, usize)> {
    crate::summarizer::mask_spans(mask)
}

fn mask_from_spans(spans: &[(usize, usize)], len: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; len];
    for &(a, b) in spans {
        if a >= b || b > len {
            return Err(Error::Schema(format!("invalid span [{a}, {b}) for length {len}")));
        }
        mask[a..b].iter_mut().for_each(|v| *v = true);
    }
    Ok(mask)
}

/// Serializes an `n x d` matrix as a feature blob.
pub fn encode_features(features: &Mat) -> Vec<u8> {
    let (n, d) = features.dim();
    let mut out = Vec::with_capacity(16 + 4 * n * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for v in features.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Mat> {
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::Schema("feature blob has a bad header".into()));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::Schema(format!(
            "feature blob of {} bytes, expected {expected} for {n}x{d}",
            bytes.len()
        )));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Mat::from_shape_vec((n, d), values).expect("length checked"))
}

fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "video id '{id}' must be non-empty and use only [A-Za-z0-9_.-]"
        )))
    }
}

/// Writes a dataset directory (created if absent).
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("features")).map_err(|e| Error::io(dir, e))?;
    fs::create_dir_all(dir.join("annotations")).map_err(|e| Error::io(dir, e))?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(dataset.videos.len());
    for video in &dataset.videos {
        let id = video.id();
        check_id(id)?;
        if !seen.insert(id.to_string()) {
            return Err(Error::Config(format!("duplicate video id '{id}'")));
        }
        if video.sequence.d() != dataset.d {
            return Err(Error::Schema(format!(
                "video {id} has width {} but the dataset declares {}",
                video.sequence.d(),
                dataset.d
            )));
        }
        let feat_rel = PathBuf::from("features").join(format!("{id}.feat"));
        let ann_rel = PathBuf::from("annotations").join(format!("{id}.json"));
        let feat_path = dir.join(&feat_rel);
        fs::write(&feat_path, encode_features(&video.sequence.features)).map_err(|e| Error::io(&feat_path, e))?;
        let ann = Annotation {
            picks: video.sequence.picks.clone(),
            n_frames_original: video.sequence.n_frames_original,
            aggregation_mode: video.references.aggregation_mode,
            per_user_masks: video
                .references
                .per_user_masks
                .iter()
                .map(|m| spans_from_mask(m))
                .collect(),
            change_points: video.change_points.clone(),
        };
        let ann_path = dir.join(&ann_rel);
        let text = serde_json::to_string_pretty(&ann).expect("annotation serializes");
        fs::write(&ann_path, text).map_err(|e| Error::io(&ann_path, e))?;
        entries.push(ManifestEntry {
            video_id: id.to_string(),
            features: feat_rel,
            annotation: ann_rel,
        });
    }
    let manifest = DatasetManifest {
        container_version: CONTAINER_VERSION.to_string(),
        d: dataset.d,
        notes: dataset.notes.clone(),
        videos: entries,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads and validates a dataset from its manifest. Videos keep manifest order.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", manifest_path.display())))?;
    if manifest.container_version != CONTAINER_VERSION {
        return Err(Error::Schema(format!(
            "unsupported container version '{}'",
            manifest.container_version
        )));
    }
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut seen = HashSet::new();
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        let id = &entry.video_id;
        if !seen.insert(id.clone()) {
            return Err(Error::Schema(format!("duplicate video id '{id}' in manifest")));
        }
        let load_err = |reason: String| Error::Load {
            video_id: id.clone(),
            reason,
        };
        let feat_path = root.join(&entry.features);
        let bytes = fs::read(&feat_path).map_err(|e| load_err(format!("{}: {e}", feat_path.display())))?;
        let features = decode_features(&bytes).map_err(|e| load_err(e.to_string()))?;
        if features.ncols() != manifest.d {
            return Err(Error::Schema(format!(
                "video {id}: feature width {} does not match manifest d = {}",
                features.ncols(),
                manifest.d
            )));
        }
        let ann_path = root.join(&entry.annotation);
        let ann_text = fs::read_to_string(&ann_path).map_err(|e| load_err(format!("{}: {e}", ann_path.display())))?;
        let ann: Annotation =
            serde_json::from_str(&ann_text).map_err(|e| Error::Schema(format!("video {id} annotation: {e}")))?;
        let sequence = FrameFeatureSequence {
            video_id: id.clone(),
            features,
            n_frames_original: ann.n_frames_original,
            picks: ann.picks,
        };
        sequence.validate()?;
        let per_user_masks = ann
            .per_user_masks
            .iter()
            .map(|spans| mask_from_spans(spans, ann.n_frames_original))
            .collect::<Result<Vec<_>>>()?;
        let references = ReferenceSummaries {
            per_user_masks,
            aggregation_mode: ann.aggregation_mode,
        };
        references
            .validate(sequence.n_frames_original)
            .map_err(|e| Error::Data(format!("video {id}: {e}")))?;
        videos.push(VideoRecord {
            sequence,
            references,
            change_points: ann.change_points,
        });
    }
    Ok(Dataset {
        d: manifest.d,
        notes: manifest.notes,
        videos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_blob_header_layout() {
        let m = Mat::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let bytes = encode_features(&m);
        assert_eq!(&bytes[..8], b"SUMSRF1\0");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &3u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(decode_features(&bytes).unwrap(), m);
        assert!(decode_features(&bytes[..20]).is_err());
    }

    #[test]
    fn aggregation_mode_parsing() {
        assert_eq!("max".parse::<AggregationMode>().unwrap(), AggregationMode::MaxOverUsers);
        assert_eq!(
            "mean".parse::<AggregationMode>().unwrap(),
            AggregationMode::MeanOverUsers
        );
        assert!("median".parse::<AggregationMode>().is_err());
    }

    #[test]
    fn ids_must_be_path_safe() {
        assert!(check_id("video_01").is_ok());
        assert!(check_id("../x").is_err());
        assert!(check_id("").is_err());
    }
}
