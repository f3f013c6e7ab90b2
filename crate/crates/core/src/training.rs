//! Staged training: the mask, reconstructor, selector and joint stages, and
//! the per-variant schedules that chain them into iterations.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Mat, Tape, Var};
use crate::checkpoint::{decode_checkpoint, encode_checkpoint, CheckpointKey, CheckpointStore, ModelState, StageKind};
use crate::dataset::{Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::recon_loss;
use crate::networks::{random_mask, sample_replaced, MaskVector, Parameters, Reconstructor, Selector};
use crate::optim::{Adam, AdamConfig};
use crate::segmentation::KtsConfig;
use crate::selection::{
    reconstruction_losses, select_epoch, select_iteration, select_reconstructor_joint, validate_selector,
    ValidationRecord,
};
use crate::summarizer::SegmentedVideo;

/// Training schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Selector and reconstructor trained together; `m` stays zero.
    #[serde(rename = "joint")]
    Joint,
    /// Reconstructor stage with `m` frozen at zero, then selector stage.
    #[serde(rename = "sep")]
    Sep,
    /// Reconstructor stage that also trains `m`, then selector stage.
    #[serde(rename = "sepMa")]
    SepMa,
    /// Isolated mask stage, reconstructor stage, selector stage.
    #[serde(rename = "sep-Ma")]
    SepMinusMa,
    /// `SepMa` first, then further reconstructor/selector pairs with `m` frozen.
    #[serde(rename = "iter")]
    Iter,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Self::Joint, Self::Sep, Self::SepMa, Self::SepMinusMa, Self::Iter];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::Sep => "sep",
            Self::SepMa => "sepMa",
            Self::SepMinusMa => "sep-Ma",
            Self::Iter => "iter",
        }
    }

    /// Iterations actually run: only `Iter` repeats.
    pub fn iterations(&self, configured: usize) -> usize {
        if *self == Self::Iter {
            configured
        } else {
            1
        }
    }

    /// Whether `m` is updated in the reconstructor stage of `iteration`.
    pub fn mask_trainable_in_reconstructor(&self, iteration: usize) -> bool {
        matches!(self, Self::SepMa | Self::Iter) && iteration == 1
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown variant {s:?}; expected joint, sep, sepMa, sep-Ma or iter"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub iterations: usize,
    pub epochs_per_stage: usize,
    pub learning_rate: f64,
    pub grad_clip: (f64, f64),
    pub sigma: f64,
    pub tau: f64,
    pub alpha: f64,
    pub d: usize,
    pub d_h: usize,
    pub seed: u64,
    pub kts: KtsConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Iter,
            iterations: 5,
            epochs_per_stage: 100,
            learning_rate: 1e-4,
            grad_clip: (-5.0, 5.0),
            sigma: 0.7,
            tau: 0.5,
            alpha: 0.15,
            d: 1024,
            d_h: 512,
            seed: 0,
            kts: KtsConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.epochs_per_stage == 0 {
            return bad("epochs_per_stage must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        let (lo, hi) = self.grad_clip;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return bad(format!("grad_clip must be an increasing finite pair, got [{lo}, {hi}]"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma must lie in (0, 1), got {}", self.sigma));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.d == 0 {
            return bad("feature width d must be positive".into());
        }
        if self.d_h == 0 || !self.d_h.is_multiple_of(2) {
            return bad(format!("d_h must be a positive even number, got {}", self.d_h));
        }
        if !(self.kts.penalty_weight >= 0.0 && self.kts.penalty_weight.is_finite()) {
            return bad("kts.penalty_weight must be non-negative".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.learning_rate, self.grad_clip)
    }
}

/// Derives an independent stream seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const VALIDATION_STREAM: u64 = 0x5641_4C49_4441_5445;

/// Seed of the fixed validation mask for validation video `index`.
pub fn validation_mask_seed(seed: u64, index: usize) -> u64 {
    mix_seed(mix_seed(seed, VALIDATION_STREAM), index as u64)
}

/// Generator for iteration `iteration` (1-based).
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, iteration as u64))
}

/// One row of `metrics.csv`. Training losses are means over the epoch's steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub iteration: usize,
    pub stage: StageKind,
    pub epoch: usize,
    pub l_recon: Option<f64>,
    pub l_spar: Option<f64>,
    pub l_model: Option<f64>,
    pub l_mask: Option<f64>,
    pub val_l_recon: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,stage,epoch,l_recon,l_spar,l_model,l_mask,val_l_recon";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.stage,
            self.epoch,
            f(self.l_recon),
            f(self.l_spar),
            f(self.l_model),
            f(self.l_mask),
            f(self.val_l_recon)
        )
    }
}

/// What one stage did, for auditing schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct StageLog {
    pub iteration: usize,
    pub stage: StageKind,
    /// Parameter groups updated: any of `selector`, `reconstructor`, `mask`.
    pub trainable: Vec<&'static str>,
    pub epochs: Vec<EpochMetrics>,
    pub mask_before: Mat,
    pub mask_after: Mat,
}

impl StageLog {
    fn new(iteration: usize, stage: StageKind, trainable: Vec<&'static str>, mask: &MaskVector) -> Self {
        Self {
            iteration,
            stage,
            trainable,
            epochs: Vec::new(),
            mask_before: mask.m.clone(),
            mask_after: mask.m.clone(),
        }
    }
}

struct Running {
    sum: f64,
    count: usize,
}

impl Running {
    fn new() -> Self {
        Self { sum: 0.0, count: 0 }
    }

    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

fn training_error(iteration: usize, stage: StageKind, epoch: usize, reason: impl Into<String>) -> Error {
    Error::Training {
        iteration,
        stage: stage.as_str().to_string(),
        epoch,
        reason: reason.into(),
    }
}

fn annotate(err: Error, iteration: usize, stage: StageKind, epoch: usize) -> Error {
    match err {
        e @ Error::Training { .. } => e,
        other => training_error(iteration, stage, epoch, other.to_string()),
    }
}

fn check_finite(value: f64, what: &str, iteration: usize, stage: StageKind, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(training_error(
            iteration,
            stage,
            epoch,
            format!("non-finite {what}: {value}"),
        ))
    }
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn collect_grads(grads: &mut Gradients, tape: &Tape, vars: &[Var]) -> Vec<Mat> {
    vars.iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Mat::zeros(tape.shape(v))))
        .collect()
}

fn check_train_videos(train: &[Mat], d: usize) -> Result<()> {
    if train.is_empty() {
        return Err(Error::Precondition("training needs at least one video".into()));
    }
    if let Some(v) = train.iter().find(|v| v.ncols() != d || v.nrows() == 0) {
        return Err(Error::Input(format!(
            "training video of shape {:?} does not fit d = {d}",
            v.dim()
        )));
    }
    Ok(())
}

/// Context shared by the stage functions.
#[derive(Clone, Copy, Debug)]
pub struct StageContext<'a> {
    pub config: &'a TrainingConfig,
    pub iteration: usize,
}

/// Output of the isolated mask stage. Callers discard `helper`; it is
/// returned only so its effect can be inspected.
#[derive(Clone, Debug)]
pub struct MaskStageOutput {
    pub mask: MaskVector,
    pub helper: Reconstructor,
    pub log: StageLog,
}

/// Trains `m` (starting from zero) together with a throwaway reconstructor on
/// the masked-frame loss.
pub fn train_mask_stage(ctx: StageContext<'_>, train: &[Mat], rng: &mut ChaCha8Rng) -> Result<MaskStageOutput> {
    let cfg = ctx.config;
    if cfg.variant != Variant::SepMinusMa {
        return Err(Error::Precondition(format!(
            "the isolated mask stage belongs to sep-Ma, not {}",
            cfg.variant
        )));
    }
    check_train_videos(train, cfg.d)?;
    let stage = StageKind::Mask;
    let mut helper = Reconstructor::new(rng, cfg.d, cfg.d_h)?;
    let mut mask = MaskVector::zeros(cfg.d, true);
    let mut log = StageLog::new(ctx.iteration, stage, vec!["mask"], &mask);

    let mut shapes: Vec<(usize, usize)> = helper.named_params().iter().map(|(_, t)| t.dim()).collect();
    shapes.push(mask.m.dim());
    let mut adam = Adam::new(cfg.adam(), &shapes);

    for epoch in 1..=cfg.epochs_per_stage {
        let mut l_mask = Running::new();
        for j in shuffled(train.len(), rng) {
            let x_val = &train[j];
            let mut replaced = sample_replaced(x_val.nrows(), cfg.alpha, rng);
            while !replaced.iter().any(|&r| r) {
                replaced = sample_replaced(x_val.nrows(), cfg.alpha, rng);
            }
            let masked: Vec<usize> = (0..replaced.len()).filter(|&i| replaced[i]).collect();

            let mut tape = Tape::new();
            let rv = helper.bind(&mut tape, true);
            let m = tape.param(mask.m.clone());
            let x = tape.constant(x_val.clone());
            let v_prime = tape.replace_rows(x, m, &replaced);
            let out = helper.forward(&mut tape, &rv, v_prime).output;
            let loss = tape.masked_mean_squared_diff(v_prime, out, &masked);
            l_mask.push(check_finite(
                tape.scalar(loss),
                "mask loss",
                ctx.iteration,
                stage,
                epoch,
            )?);

            let mut grads = tape.backward(loss);
            let mut vars = rv.vars();
            vars.push(m);
            let mut g = collect_grads(&mut grads, &tape, &vars);
            let mut params = helper.params_mut();
            params.push(&mut mask.m);
            adam.step(params, &mut g);
        }
        if !mask.is_finite() || !helper.all_finite() {
            return Err(training_error(ctx.iteration, stage, epoch, "parameters diverged"));
        }
        log.epochs.push(EpochMetrics {
            iteration: ctx.iteration,
            stage,
            epoch,
            l_recon: None,
            l_spar: None,
            l_model: None,
            l_mask: l_mask.mean(),
            val_l_recon: None,
        });
    }
    mask.trainable = false;
    log.mask_after = mask.m.clone();
    Ok(MaskStageOutput { mask, helper, log })
}

/// Mean reconstruction loss over validation videos under fixed seeded masks.
pub fn fixed_mask_validation_loss(
    reconstructor: &Reconstructor,
    mask: &MaskVector,
    val: &[Mat],
    alpha: f64,
    seed: u64,
) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for (j, x) in val.iter().enumerate() {
        let masked = random_mask(x, mask, alpha, validation_mask_seed(seed, j))?;
        let rec = reconstructor.reconstruct(&masked.sequence)?;
        total += recon_loss(x, &rec)?;
    }
    Ok(Some(total / val.len() as f64))
}

/// Result of a reconstructor stage.
#[derive(Clone, Debug)]
pub struct ReconstructorStageOutput {
    pub log: StageLog,
    /// 1-based epoch with the smallest fixed-mask validation loss (earliest on
    /// ties); the last epoch when there is no validation data.
    pub reference_epoch: usize,
    /// Weights at `reference_epoch`.
    pub reference: Reconstructor,
}

/// Trains `reconstructor` (and `mask` when `mask_trainable`) on randomly
/// masked videos. `on_epoch` sees the state after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_reconstructor_stage(
    ctx: StageContext<'_>,
    train: &[Mat],
    val: &[Mat],
    reconstructor: &mut Reconstructor,
    mask: &mut MaskVector,
    mask_trainable: bool,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, &Reconstructor, &MaskVector) -> Result<()>,
) -> Result<ReconstructorStageOutput> {
    let cfg = ctx.config;
    check_train_videos(train, cfg.d)?;
    let stage = StageKind::Reconstructor;
    let trainable = if mask_trainable {
        vec!["reconstructor", "mask"]
    } else {
        vec!["reconstructor"]
    };
    mask.trainable = mask_trainable;
    let mut log = StageLog::new(ctx.iteration, stage, trainable, mask);

    let mut shapes: Vec<(usize, usize)> = reconstructor.named_params().iter().map(|(_, t)| t.dim()).collect();
    if mask_trainable {
        shapes.push(mask.m.dim());
    }
    let mut adam = Adam::new(cfg.adam(), &shapes);
    let mut best: Option<(f64, usize, Reconstructor)> = None;

    for epoch in 1..=cfg.epochs_per_stage {
        let mut l_recon = Running::new();
        for j in shuffled(train.len(), rng) {
            let x_val = &train[j];
            let replaced = sample_replaced(x_val.nrows(), cfg.alpha, rng);

            let mut tape = Tape::new();
            let rv = reconstructor.bind(&mut tape, true);
            let m = if mask_trainable {
                tape.param(mask.m.clone())
            } else {
                tape.constant(mask.m.clone())
            };
            let x = tape.constant(x_val.clone());
            let v_prime = tape.replace_rows(x, m, &replaced);
            let out = reconstructor.forward(&mut tape, &rv, v_prime).output;
            let loss = tape.sum_squared_diff(out, x);
            l_recon.push(check_finite(
                tape.scalar(loss),
                "reconstruction loss",
                ctx.iteration,
                stage,
                epoch,
            )?);

            let mut grads = tape.backward(loss);
            let mut vars = rv.vars();
            if mask_trainable {
                vars.push(m);
            }
            let mut g = collect_grads(&mut grads, &tape, &vars);
            let mut params = reconstructor.params_mut();
            if mask_trainable {
                params.push(&mut mask.m);
            }
            adam.step(params, &mut g);
        }
        if !reconstructor.all_finite() || !mask.is_finite() {
            return Err(training_error(ctx.iteration, stage, epoch, "parameters diverged"));
        }
        let val_loss = fixed_mask_validation_loss(reconstructor, mask, val, cfg.alpha, cfg.seed)
            .map_err(|e| annotate(e, ctx.iteration, stage, epoch))?;
        if let Some(v) = val_loss {
            check_finite(v, "validation reconstruction loss", ctx.iteration, stage, epoch)?;
            if best.as_ref().is_none_or(|(b, _, _)| v < *b) {
                best = Some((v, epoch, reconstructor.clone()));
            }
        }
        on_epoch(epoch, reconstructor, mask).map_err(|e| annotate(e, ctx.iteration, stage, epoch))?;
        log.epochs.push(EpochMetrics {
            iteration: ctx.iteration,
            stage,
            epoch,
            l_recon: l_recon.mean(),
            l_spar: None,
            l_model: None,
            l_mask: None,
            val_l_recon: val_loss,
        });
    }
    mask.trainable = false;
    log.mask_after = mask.m.clone();
    let (reference_epoch, reference) = match best {
        Some((_, e, r)) => (e, r),
        None => (cfg.epochs_per_stage, reconstructor.clone()),
    };
    Ok(ReconstructorStageOutput {
        log,
        reference_epoch,
        reference,
    })
}

struct StepLosses {
    recon: f64,
    spar: f64,
}

/// Builds the blended-summary loss graph; returns the loss node and its parts.
#[allow(clippy::too_many_arguments)]
fn model_graph(
    tape: &mut Tape,
    selector: &Selector,
    sv: &crate::networks::SelectorVars,
    reconstructor: &Reconstructor,
    rv: &crate::networks::ReconstructorVars,
    m: Var,
    x: Var,
    sigma: f64,
) -> (Var, StepLosses) {
    let p = selector.forward(tape, sv, x);
    let su = tape.blend(x, p, m);
    let out = reconstructor.forward(tape, rv, su).output;
    let lr = tape.sum_squared_diff(out, x);
    let ls = tape.abs_mean_deviation(p, sigma);
    let loss = tape.add(lr, ls);
    let parts = StepLosses {
        recon: tape.scalar(lr),
        spar: tape.scalar(ls),
    };
    (loss, parts)
}

/// Trains only the selector against a frozen reconstructor and mask.
/// `on_epoch` returns the epoch's validation reconstruction loss, if any.
pub fn train_selector_stage(
    ctx: StageContext<'_>,
    train: &[Mat],
    selector: &mut Selector,
    reconstructor: &Reconstructor,
    mask: &MaskVector,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, &Selector) -> Result<Option<f64>>,
) -> Result<StageLog> {
    let cfg = ctx.config;
    check_train_videos(train, cfg.d)?;
    let stage = StageKind::Selector;
    let mut log = StageLog::new(ctx.iteration, stage, vec!["selector"], mask);
    let shapes: Vec<(usize, usize)> = selector.named_params().iter().map(|(_, t)| t.dim()).collect();
    let mut adam = Adam::new(cfg.adam(), &shapes);

    for epoch in 1..=cfg.epochs_per_stage {
        let (mut lr, mut ls, mut lm) = (Running::new(), Running::new(), Running::new());
        for j in shuffled(train.len(), rng) {
            let mut tape = Tape::new();
            let sv = selector.bind(&mut tape, true);
            let rv = reconstructor.bind(&mut tape, false);
            let m = tape.constant(mask.m.clone());
            let x = tape.constant(train[j].clone());
            let (loss, parts) = model_graph(&mut tape, selector, &sv, reconstructor, &rv, m, x, cfg.sigma);
            let total = check_finite(tape.scalar(loss), "model loss", ctx.iteration, stage, epoch)?;
            lr.push(parts.recon);
            ls.push(parts.spar);
            lm.push(total);

            let mut grads = tape.backward(loss);
            let mut g = collect_grads(&mut grads, &tape, &sv.vars());
            adam.step(selector.params_mut(), &mut g);
        }
        if !selector.all_finite() {
            return Err(training_error(ctx.iteration, stage, epoch, "parameters diverged"));
        }
        let val = on_epoch(epoch, selector).map_err(|e| annotate(e, ctx.iteration, stage, epoch))?;
        log.epochs.push(EpochMetrics {
            iteration: ctx.iteration,
            stage,
            epoch,
            l_recon: lr.mean(),
            l_spar: ls.mean(),
            l_model: lm.mean(),
            l_mask: None,
            val_l_recon: val,
        });
    }
    Ok(log)
}

/// Trains selector and reconstructor together on the blended-summary loss
/// with `m` held at zero. `on_epoch` returns the validation reconstruction loss.
pub fn train_joint(
    ctx: StageContext<'_>,
    train: &[Mat],
    selector: &mut Selector,
    reconstructor: &mut Reconstructor,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(usize, &Selector, &Reconstructor) -> Result<Option<f64>>,
) -> Result<StageLog> {
    let cfg = ctx.config;
    if cfg.variant != Variant::Joint {
        return Err(Error::Precondition(format!(
            "joint training requested for variant {}",
            cfg.variant
        )));
    }
    check_train_videos(train, cfg.d)?;
    let stage = StageKind::Joint;
    let mask = MaskVector::zeros(cfg.d, false);
    let mut log = StageLog::new(ctx.iteration, stage, vec!["selector", "reconstructor"], &mask);
    let mut shapes: Vec<(usize, usize)> = selector.named_params().iter().map(|(_, t)| t.dim()).collect();
    shapes.extend(reconstructor.named_params().iter().map(|(_, t)| t.dim()));
    let mut adam = Adam::new(cfg.adam(), &shapes);

    for epoch in 1..=cfg.epochs_per_stage {
        let (mut lr, mut ls, mut lm) = (Running::new(), Running::new(), Running::new());
        for j in shuffled(train.len(), rng) {
            let mut tape = Tape::new();
            let sv = selector.bind(&mut tape, true);
            let rv = reconstructor.bind(&mut tape, true);
            let m = tape.constant(mask.m.clone());
            let x = tape.constant(train[j].clone());
            let (loss, parts) = model_graph(&mut tape, selector, &sv, reconstructor, &rv, m, x, cfg.sigma);
            let total = check_finite(tape.scalar(loss), "model loss", ctx.iteration, stage, epoch)?;
            lr.push(parts.recon);
            ls.push(parts.spar);
            lm.push(total);

            let mut grads = tape.backward(loss);
            let mut vars = sv.vars();
            vars.extend(rv.vars());
            let mut g = collect_grads(&mut grads, &tape, &vars);
            let mut params = selector.params_mut();
            params.extend(reconstructor.params_mut());
            adam.step(params, &mut g);
        }
        if !selector.all_finite() || !reconstructor.all_finite() {
            return Err(training_error(ctx.iteration, stage, epoch, "parameters diverged"));
        }
        let val = on_epoch(epoch, selector, reconstructor).map_err(|e| annotate(e, ctx.iteration, stage, epoch))?;
        log.epochs.push(EpochMetrics {
            iteration: ctx.iteration,
            stage,
            epoch,
            l_recon: lr.mean(),
            l_spar: ls.mean(),
            l_model: lm.mean(),
            l_mask: None,
            val_l_recon: val,
        });
    }
    Ok(log)
}

/// The model picked within one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationOutcome {
    pub iteration: usize,
    /// Stage whose checkpoints were ranked (`selector` or `joint`).
    pub stage: StageKind,
    /// Epoch chosen by the normalized-loss rule.
    pub selected_epoch: usize,
    /// Epoch of the reference reconstructor used for ranking.
    pub reference_epoch: usize,
    /// Mean validation reconstruction loss of the chosen epoch.
    pub val_recon: f64,
    pub record: ValidationRecord,
}

impl IterationOutcome {
    pub fn key(&self) -> CheckpointKey {
        CheckpointKey::new(self.iteration, self.stage, self.selected_epoch)
    }
}

/// Everything a run produced besides the checkpoints themselves.
#[derive(Clone, Debug)]
pub struct TrainingRunRecord {
    pub config: TrainingConfig,
    pub stages: Vec<StageLog>,
    pub iterations: Vec<IterationOutcome>,
    /// 1-based iteration whose model was chosen last.
    pub final_iteration: usize,
    pub final_key: CheckpointKey,
    /// Selected model as stored (tensors rounded to `f32`).
    pub final_model: ModelState,
}

impl TrainingRunRecord {
    pub fn metrics(&self) -> impl Iterator<Item = &EpochMetrics> {
        self.stages.iter().flat_map(|s| s.epochs.iter())
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for m in self.metrics() {
            out.push_str(&m.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn outcome(&self, iteration: usize) -> Option<&IterationOutcome> {
        self.iterations.iter().find(|o| o.iteration == iteration)
    }
}

fn put_state(
    store: &mut dyn CheckpointStore,
    variant: Variant,
    key: CheckpointKey,
    state: &ModelState,
) -> Result<ModelState> {
    store.put(key, encode_checkpoint(variant.as_str(), &key, state))?;
    Ok(state.quantized())
}

fn load_state(store: &dyn CheckpointStore, key: CheckpointKey) -> Result<ModelState> {
    decode_checkpoint(&store.get(key)?).map(|(_, s)| s)
}

/// Loads a video split and runs the configured schedule.
pub fn run_variant(
    config: &TrainingConfig,
    dataset: &Dataset,
    split: &SplitSpec,
    store: &mut dyn CheckpointStore,
) -> Result<TrainingRunRecord> {
    config.validate()?;
    if dataset.d != config.d {
        return Err(Error::Config(format!(
            "dataset feature width {} differs from configured d = {}",
            dataset.d, config.d
        )));
    }
    let train: Vec<Mat> = dataset
        .subset(&split.train_ids)?
        .into_iter()
        .map(|r| r.sequence.features.clone())
        .collect();
    let val = SegmentedVideo::prepare_all(&dataset.subset(&split.val_ids)?, &config.kts)?;
    run_variant_prepared(config, &train, &val, store)
}

/// Runs the configured schedule on prepared training and validation videos.
pub fn run_variant_prepared(
    config: &TrainingConfig,
    train: &[Mat],
    val: &[SegmentedVideo],
    store: &mut dyn CheckpointStore,
) -> Result<TrainingRunRecord> {
    config.validate()?;
    check_train_videos(train, config.d)?;
    if val.is_empty() {
        return Err(Error::Precondition(
            "model selection needs at least one validation video".into(),
        ));
    }
    let variant = config.variant;
    let val_features: Vec<Mat> = val.iter().map(|v| v.features.clone()).collect();
    let mut stages = Vec::new();
    let mut outcomes = Vec::new();

    let mut init_rng = iteration_rng(config.seed, 1);
    let mut selector = Selector::new(&mut init_rng, config.d, config.d_h, config.tau)?;
    let mut reconstructor = Reconstructor::new(&mut init_rng, config.d, config.d_h)?;
    let mut mask = MaskVector::zeros(config.d, false);

    for iteration in 1..=variant.iterations(config.iterations) {
        let ctx = StageContext { config, iteration };
        let mut rng = if iteration == 1 {
            init_rng.clone()
        } else {
            iteration_rng(config.seed, iteration)
        };

        if variant == Variant::Joint {
            let mut validations = Vec::new();
            let mut best_recon: Option<(f64, Reconstructor)> = None;
            let log = train_joint(
                ctx,
                train,
                &mut selector,
                &mut reconstructor,
                &mut rng,
                |epoch, s, r| {
                    let key = CheckpointKey::new(iteration, StageKind::Joint, epoch);
                    let state = ModelState {
                        selector: Some(s.clone()),
                        reconstructor: Some(r.clone()),
                        mask: MaskVector::zeros(config.d, false),
                    };
                    // validate what was stored so selection can be recomputed from disk
                    let stored = put_state(store, variant, key, &state)?;
                    let (s, r) = (
                        stored.selector.as_ref().unwrap(),
                        stored.reconstructor.as_ref().unwrap(),
                    );
                    let v = validate_selector(s, r, &stored.mask, val, config.alpha, config.sigma)?;
                    let mean = v.recon.iter().sum::<f64>() / v.recon.len() as f64;
                    if best_recon.as_ref().is_none_or(|(b, _)| mean < *b) {
                        best_recon = Some((mean, r.clone()));
                    }
                    validations.push(v);
                    Ok(Some(mean))
                },
            )?;
            let own_means: Vec<f64> = log.epochs.iter().map(|e| e.val_l_recon.unwrap_or(f64::NAN)).collect();
            stages.push(log);
            let beta = select_reconstructor_joint(&own_means)?;
            let (_, reference) = best_recon.expect("at least one epoch");
            let zero = MaskVector::zeros(config.d, false);
            let mut recon = Vec::with_capacity(validations.len());
            let mut spar = Vec::with_capacity(validations.len());
            for v in &validations {
                recon.push(reconstruction_losses(&reference, &zero, val, &v.frame_masks)?);
                spar.push(v.spar.clone());
            }
            let record = ValidationRecord::from_raw(recon, spar)?;
            let selected_epoch = select_epoch(&record)?;
            outcomes.push(IterationOutcome {
                iteration,
                stage: StageKind::Joint,
                selected_epoch,
                reference_epoch: beta,
                val_recon: record.recon_mean[selected_epoch - 1],
                record,
            });
            continue;
        }

        if variant == Variant::SepMinusMa {
            let out = train_mask_stage(ctx, train, &mut rng)?;
            mask = out.mask;
            stages.push(out.log);
        }

        let mask_trainable = variant.mask_trainable_in_reconstructor(iteration);
        let recon_out = train_reconstructor_stage(
            ctx,
            train,
            &val_features,
            &mut reconstructor,
            &mut mask,
            mask_trainable,
            &mut rng,
            |epoch, r, m| {
                let key = CheckpointKey::new(iteration, StageKind::Reconstructor, epoch);
                let state = ModelState {
                    selector: None,
                    reconstructor: Some(r.clone()),
                    mask: m.clone(),
                };
                put_state(store, variant, key, &state).map(|_| ())
            },
        )?;
        stages.push(recon_out.log);
        let reference_key = CheckpointKey::new(iteration, StageKind::Reconstructor, recon_out.reference_epoch);
        let reference = load_state(store, reference_key)?
            .reconstructor
            .ok_or_else(|| Error::Data(format!("checkpoint {reference_key:?} lacks a reconstructor")))?;

        let mut recon = Vec::new();
        let mut spar = Vec::new();
        let frozen = reconstructor.clone();
        let log = train_selector_stage(ctx, train, &mut selector, &frozen, &mask, &mut rng, |epoch, s| {
            let key = CheckpointKey::new(iteration, StageKind::Selector, epoch);
            let state = ModelState {
                selector: Some(s.clone()),
                reconstructor: Some(frozen.clone()),
                mask: mask.clone(),
            };
            let stored = put_state(store, variant, key, &state)?;
            let s = stored.selector.as_ref().unwrap();
            let v = validate_selector(s, &reference, &stored.mask, val, config.alpha, config.sigma)?;
            let mean = v.recon.iter().sum::<f64>() / v.recon.len() as f64;
            recon.push(v.recon);
            spar.push(v.spar);
            Ok(Some(mean))
        })?;
        stages.push(log);
        let record = ValidationRecord::from_raw(recon, spar)?;
        let selected_epoch = select_epoch(&record)?;
        let outcome = IterationOutcome {
            iteration,
            stage: StageKind::Selector,
            selected_epoch,
            reference_epoch: recon_out.reference_epoch,
            val_recon: record.recon_mean[selected_epoch - 1],
            record,
        };
        // The next iteration starts from the chosen selector as stored.
        let chosen = load_state(store, outcome.key())?;
        selector = chosen
            .selector
            .ok_or_else(|| Error::Data(format!("checkpoint {:?} lacks a selector", outcome.key())))?;
        outcomes.push(outcome);
    }

    let vals: Vec<f64> = outcomes.iter().map(|o| o.val_recon).collect();
    let final_iteration = select_iteration(&vals)?;
    let final_key = outcomes[final_iteration - 1].key();
    let final_model = load_state(store, final_key)?;
    Ok(TrainingRunRecord {
        config: config.clone(),
        stages,
        iterations: outcomes,
        final_iteration,
        final_key,
        final_model,
    })
}
