//! Kernel temporal segmentation with a linear kernel.
//!
//! The within-segment scatter `sum_t ||x_t - mu||^2` of every candidate
//! segment is read off a cumulative Gram matrix in O(1); an exact dynamic
//! program then finds the minimum-scatter segmentation for every number of
//! change points, and the number of change points is chosen by the
//! penalized criterion `J(k) + w k (ln(n / k) + 1)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};

/// Shot boundaries of a video.
///
/// Segment `j` spans `[cp_{j-1}, cp_j)` with `cp_0 = 0` and `cp_K = n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSegmentation {
    pub change_points: Vec<usize>,
    /// Shot lengths in subsampled frames.
    pub shot_lengths: Vec<usize>,
    /// Shot lengths in original frames.
    pub shot_lengths_native: Vec<usize>,
}

impl ShotSegmentation {
    pub fn num_shots(&self) -> usize {
        self.shot_lengths.len()
    }

    pub fn num_frames(&self) -> usize {
        self.shot_lengths.iter().sum()
    }

    /// `[start, end)` ranges of each shot in subsampled frames.
    pub fn shot_ranges(&self) -> Vec<(usize, usize)> {
        let mut start = 0;
        self.shot_lengths
            .iter()
            .map(|&l| {
                let r = (start, start + l);
                start += l;
                r
            })
            .collect()
    }
}

/// Original-frame interval `[start, end)` owned by each subsampled frame.
///
/// Frame `t` owns `[picks[t], picks[t + 1])`; the first frame also owns
/// everything before `picks[1]` and the last frame owns everything through
/// the end of the video.
pub fn native_intervals(picks: &[usize], n_frames_original: usize) -> Result<Vec<(usize, usize)>> {
    if picks.is_empty() {
        return Err(Error::Input("picks must not be empty".into()));
    }
    if picks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Input("picks must be strictly increasing".into()));
    }
    if *picks.last().unwrap() >= n_frames_original {
        return Err(Error::Input(format!(
            "last pick {} is beyond the original length {n_frames_original}",
            picks.last().unwrap()
        )));
    }
    let n = picks.len();
    Ok((0..n)
        .map(|t| {
            let start = if t == 0 { 0 } else { picks[t] };
            let end = if t + 1 == n { n_frames_original } else { picks[t + 1] };
            (start, end)
        })
        .collect())
}

/// Builds a segmentation from known change points.
pub fn segmentation_from_annotation(
    change_points: &[usize],
    picks: &[usize],
    n_frames_original: usize,
) -> Result<ShotSegmentation> {
    let n = picks.len();
    if n == 0 {
        return Err(Error::Input("empty video".into()));
    }
    for (i, &cp) in change_points.iter().enumerate() {
        if cp == 0 || cp >= n {
            return Err(Error::Input(format!("change point {cp} outside (0, {n})")));
        }
        if i > 0 && change_points[i - 1] >= cp {
            return Err(Error::Input("change points must be strictly increasing".into()));
        }
    }
    let intervals = native_intervals(picks, n_frames_original)?;
    let mut bounds = Vec::with_capacity(change_points.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(change_points);
    bounds.push(n);
    let shot_lengths = bounds.windows(2).map(|w| w[1] - w[0]).collect();
    let shot_lengths_native = bounds
        .windows(2)
        .map(|w| intervals[w[1] - 1].1 - intervals[w[0]].0)
        .collect();
    Ok(ShotSegmentation {
        change_points: change_points.to_vec(),
        shot_lengths,
        shot_lengths_native,
    })
}

/// Segment scatter lookups backed by a cumulative linear-kernel Gram matrix.
pub struct ScatterTable {
    n: usize,
    /// `(n + 1) x (n + 1)` two-dimensional prefix sums of `X X^T`.
    block: Vec<f64>,
    /// Prefix sums of the Gram diagonal.
    diag: Vec<f64>,
}

impl ScatterTable {
    pub fn new(features: &Mat) -> Self {
        let n = features.nrows();
        let gram = features.dot(&features.t());
        let w = n + 1;
        let mut block = vec![0.0; w * w];
        for i in 0..n {
            let mut row_acc = 0.0;
            for j in 0..n {
                row_acc += gram[[i, j]];
                block[(i + 1) * w + (j + 1)] = block[i * w + (j + 1)] + row_acc;
            }
        }
        let mut diag = vec![0.0; w];
        for i in 0..n {
            diag[i + 1] = diag[i] + gram[[i, i]];
        }
        Self { n, block, diag }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Scatter of frames `[a, b)`, `a < b`.
    pub fn cost(&self, a: usize, b: usize) -> f64 {
        debug_assert!(a < b && b <= self.n);
        let w = self.n + 1;
        let s = self.block[b * w + b] - self.block[a * w + b] - self.block[b * w + a] + self.block[a * w + a];
        (self.diag[b] - self.diag[a]) - s / (b - a) as f64
    }
}

/// Minimum total scatter for each number of change points `0..=max_change_points`,
/// together with the corresponding change points.
#[allow(clippy::needless_range_loop)]
pub fn kts_optimal_by_count(features: &Mat, max_change_points: usize) -> Result<Vec<(f64, Vec<usize>)>> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Input(format!("segmentation needs at least 2 frames, got {n}")));
    }
    let table = ScatterTable::new(features);
    let kmax = max_change_points.min(n - 1);
    // cost[k][t]: best scatter of [0, t) using k change points; back[k][t]: last boundary.
    let mut cost = vec![vec![f64::INFINITY; n + 1]; kmax + 1];
    let mut back = vec![vec![0usize; n + 1]; kmax + 1];
    for t in 1..=n {
        cost[0][t] = table.cost(0, t);
    }
    for k in 1..=kmax {
        for t in (k + 1)..=n {
            let mut best = f64::INFINITY;
            let mut arg = k;
            for s in k..t {
                let c = cost[k - 1][s] + table.cost(s, t);
                if c < best {
                    best = c;
                    arg = s;
                }
            }
            cost[k][t] = best;
            back[k][t] = arg;
        }
    }
    Ok((0..=kmax)
        .map(|k| {
            let mut cps = Vec::with_capacity(k);
            let mut t = n;
            for kk in (1..=k).rev() {
                t = back[kk][t];
                cps.push(t);
            }
            cps.reverse();
            (cost[k][n], cps)
        })
        .collect())
}

/// `w k (ln(n / k) + 1)`, zero for `k = 0`.
pub fn kts_penalty(n: usize, k: usize, penalty_weight: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        penalty_weight * k as f64 * ((n as f64 / k as f64).ln() + 1.0)
    }
}

/// Change points chosen by the penalized criterion; ties go to fewer change points.
pub fn kts_change_points(features: &Mat, max_change_points: usize, penalty_weight: f64) -> Result<Vec<usize>> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Input(format!("segmentation needs at least 2 frames, got {n}")));
    }
    if !(penalty_weight >= 0.0 && penalty_weight.is_finite()) {
        return Err(Error::Input(format!(
            "penalty weight must be non-negative, got {penalty_weight}"
        )));
    }
    if n == 2 {
        return Ok(Vec::new());
    }
    let by_count = kts_optimal_by_count(features, max_change_points)?;
    let mut best = f64::INFINITY;
    let mut chosen = Vec::new();
    for (k, (j, cps)) in by_count.into_iter().enumerate() {
        let score = j + kts_penalty(n, k, penalty_weight);
        if score < best {
            best = score;
            chosen = cps;
        }
    }
    Ok(chosen)
}

/// KTS over a sequence whose frames map one-to-one onto original frames.
pub fn kts_segment(features: &Mat, max_change_points: usize, penalty_weight: f64) -> Result<ShotSegmentation> {
    let cps = kts_change_points(features, max_change_points, penalty_weight)?;
    let picks: Vec<usize> = (0..features.nrows()).collect();
    segmentation_from_annotation(&cps, &picks, features.nrows())
}

/// KTS parameters; `max_change_points = None` means `floor(n / 10)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KtsConfig {
    pub max_change_points: Option<usize>,
    pub penalty_weight: f64,
}

impl Default for KtsConfig {
    fn default() -> Self {
        Self {
            max_change_points: None,
            penalty_weight: 1.0,
        }
    }
}

impl KtsConfig {
    pub fn max_change_points_for(&self, n: usize) -> usize {
        self.max_change_points.unwrap_or(n / 10)
    }

    /// Segments a video, expanding shot lengths through its picks.
    pub fn segment(&self, features: &Mat, picks: &[usize], n_frames_original: usize) -> Result<ShotSegmentation> {
        let n = features.nrows();
        let cps = kts_change_points(features, self.max_change_points_for(n), self.penalty_weight)?;
        segmentation_from_annotation(&cps, picks, n_frames_original)
    }
}
