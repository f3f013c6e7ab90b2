//! Synthetic planted-event videos.
//!
//! Each video is a piecewise-constant walk through a few base embeddings
//! (all at distance `base_spread` from a base center shared by the whole
//! dataset) with a
//! handful of short event segments whose embeddings sit at exactly
//! `event_distance` from that center, plus isotropic Gaussian noise. The
//! reference summary marks exactly the event frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{AggregationMode, Dataset, FrameFeatureSequence, ReferenceSummaries, VideoRecord};
use crate::autodiff::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub n: usize,
    pub d: usize,
    pub n_events: usize,
    pub noise_scale: f64,
    pub seed: u64,
    /// Frames per event; defaults to `max(1, round(0.05 n))`.
    pub event_length: Option<usize>,
    /// Number of base blocks; defaults to about one block per two event lengths.
    pub base_segments: Option<usize>,
    pub base_spread: f64,
    /// Defaults to `max(4, 10 * noise_scale)`.
    pub event_distance: Option<f64>,
}

impl SynthConfig {
    pub fn new(n_videos: usize, n: usize, d: usize, n_events: usize, noise_scale: f64, seed: u64) -> Self {
        Self {
            n_videos,
            n,
            d,
            n_events,
            noise_scale,
            seed,
            event_length: None,
            base_segments: None,
            base_spread: 1.0,
            event_distance: None,
        }
    }

    pub fn event_length(&self) -> usize {
        self.event_length
            .unwrap_or_else(|| ((0.05 * self.n as f64).round() as usize).max(1))
    }

    pub fn base_segments(&self) -> usize {
        self.base_segments.unwrap_or_else(|| {
            let free = self.n.saturating_sub(self.n_events * self.event_length());
            (free / (2 * self.event_length())).max(1)
        })
    }

    pub fn event_distance(&self) -> f64 {
        self.event_distance
            .unwrap_or_else(|| (10.0 * self.noise_scale).max(4.0))
    }
}

/// Planted geometry of one synthetic video.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthTruth {
    pub base_center: Vec<f64>,
    pub base_embeddings: Vec<Vec<f64>>,
    pub event_embeddings: Vec<Vec<f64>>,
    /// `[start, end)` frame spans of the events.
    pub event_spans: Vec<(usize, usize)>,
    /// Index into `base_embeddings` or `event_embeddings` for every frame.
    pub frame_source: Vec<FrameSource>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameSource {
    Base(usize),
    Event(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub dataset: Dataset,
    pub truths: Vec<SynthTruth>,
}

/// Shorthand for [`synth_generate_with`] with default geometry.
pub fn synth_generate(
    n_videos: usize,
    n: usize,
    d: usize,
    n_events: usize,
    noise_scale: f64,
    seed: u64,
) -> Result<SynthDataset> {
    synth_generate_with(&SynthConfig::new(n_videos, n, d, n_events, noise_scale, seed))
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn offset(center: &[f64], dir: &[f64], dist: f64) -> Vec<f64> {
    center.iter().zip(dir).map(|(c, u)| c + dist * u).collect()
}

pub fn synth_generate_with(cfg: &SynthConfig) -> Result<SynthDataset> {
    let event_length = cfg.event_length();
    let n_events = cfg.n_events;
    if cfg.d < 2 {
        return Err(Error::Config(format!("synthetic data needs d >= 2, got {}", cfg.d)));
    }
    if cfg.n_videos == 0 || cfg.n < 2 {
        return Err(Error::Config("need at least one video of at least 2 frames".into()));
    }
    if !(cfg.noise_scale >= 0.0 && cfg.noise_scale.is_finite()) {
        return Err(Error::Config(format!(
            "noise scale must be non-negative, got {}",
            cfg.noise_scale
        )));
    }
    // events need one separating frame between neighbours
    let occupied = n_events * event_length + n_events.saturating_sub(1);
    if n_events * event_length >= cfg.n || occupied > cfg.n {
        return Err(Error::Config(format!(
            "{n_events} events of length {event_length} do not fit in {} frames",
            cfg.n
        )));
    }
    let slack = cfg.n - occupied;
    let base_segments = cfg.base_segments().min(cfg.n);
    let distance = cfg.event_distance();
    let noise = Normal::new(0.0, cfg.noise_scale).map_err(|e| Error::Config(e.to_string()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut videos = Vec::with_capacity(cfg.n_videos);
    let mut truths = Vec::with_capacity(cfg.n_videos);
    // One base cluster shared by every video; events are private to a video.
    let base_center: Vec<f64> = (0..cfg.d)
        .map(|_| StandardNormal.sample(&mut rng))
        .map(|x: f64| x / (cfg.d as f64).sqrt())
        .collect();
    for v in 0..cfg.n_videos {
        let base_embeddings: Vec<Vec<f64>> = (0..base_segments)
            .map(|_| {
                let u = random_direction(&mut rng, cfg.d);
                offset(&base_center, &u, cfg.base_spread)
            })
            .collect();
        let event_embeddings: Vec<Vec<f64>> = (0..n_events)
            .map(|_| {
                let u = random_direction(&mut rng, cfg.d);
                offset(&base_center, &u, distance)
            })
            .collect();

        let mut offsets: Vec<usize> = (0..n_events).map(|_| rng.random_range(0..=slack)).collect();
        offsets.sort_unstable();
        let event_spans: Vec<(usize, usize)> = offsets
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let start = r + j * (event_length + 1);
                (start, start + event_length)
            })
            .collect();

        let mut frame_source: Vec<FrameSource> = (0..cfg.n)
            .map(|t| FrameSource::Base(t * base_segments / cfg.n))
            .collect();
        for (j, &(a, b)) in event_spans.iter().enumerate() {
            frame_source[a..b].iter_mut().for_each(|s| *s = FrameSource::Event(j));
        }

        let mut features = Mat::zeros((cfg.n, cfg.d));
        for (t, src) in frame_source.iter().enumerate() {
            let emb = match src {
                FrameSource::Base(k) => &base_embeddings[*k],
                FrameSource::Event(j) => &event_embeddings[*j],
            };
            for (k, e) in emb.iter().enumerate() {
                let value = e + if cfg.noise_scale > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                // stored values are exactly representable in the f32 blob format
                features[[t, k]] = value as f32 as f64;
            }
        }

        let mask: Vec<bool> = frame_source
            .iter()
            .map(|s| matches!(s, FrameSource::Event(_)))
            .collect();
        videos.push(VideoRecord {
            sequence: FrameFeatureSequence {
                video_id: format!("synth_{v:03}"),
                features,
                n_frames_original: cfg.n,
                picks: (0..cfg.n).collect(),
            },
            references: ReferenceSummaries {
                per_user_masks: vec![mask],
                aggregation_mode: AggregationMode::Single,
            },
            change_points: None,
        });
        truths.push(SynthTruth {
            base_center: base_center.clone(),
            base_embeddings,
            event_embeddings,
            event_spans,
            frame_source,
        });
    }
    Ok(SynthDataset {
        dataset: Dataset {
            d: cfg.d,
            notes: format!(
                "synthetic planted events: n_videos={} n={} d={} n_events={} event_length={} noise_scale={} seed={}",
                cfg.n_videos, cfg.n, cfg.d, n_events, event_length, cfg.noise_scale, cfg.seed
            ),
            videos,
        },
        truths,
    })
}
