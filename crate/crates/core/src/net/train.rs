use std::fmt;
use std::str::FromStr;

use log::debug;
use rand::seq::SliceRandom;

use super::backbone::{BackboneConfig, Mode, Tape};
use super::model::{batch_tensor, cross_entropy, softmax2, ModelParams, ScoreNorm, NONSURVIVOR};
use super::ops::Tensor;
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::imaging::{augment_to, center_crop, channel_stats, normalize_patch, ChannelStats, PatchStack};
use crate::seed::rng_for;

/// Scratch-training schedule: multiply by 0.9 every 5 epochs.
pub const LR_DECAY_FACTOR: f64 = 0.9;
pub const LR_DECAY_EVERY: usize = 5;
pub const SCRATCH_LEARNING_RATE: f64 = 1e-4;
pub const FINETUNE_LEARNING_RATE: f64 = 1e-5;
/// Default initial head rate of stage two. The new score column starts at
/// zero and would barely move at backbone rates within a few epochs.
pub const STAGE2_HEAD_LEARNING_RATE: f64 = 1e-2;

/// `initial · 0.9^⌊epoch / 5⌋`.
pub fn lr_schedule(initial: f64, epoch: usize) -> f64 {
    initial * LR_DECAY_FACTOR.powi((epoch / LR_DECAY_EVERY) as i32)
}

/// How the backbone is initialized and whether it is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Supplied backbone used as a fixed feature extractor; head only.
    PretrainedFrozen,
    /// Supplied backbone, everything trained at a small constant rate.
    Finetune,
    /// Random initialization, everything trained with the decaying rate.
    Scratch,
}

impl Strategy {
    pub fn code(self) -> u32 {
        match self {
            Strategy::PretrainedFrozen => 1,
            Strategy::Finetune => 2,
            Strategy::Scratch => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        [Strategy::PretrainedFrozen, Strategy::Finetune, Strategy::Scratch].into_iter().find(|s| s.code() == code)
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Strategy::Finetune => FINETUNE_LEARNING_RATE,
            Strategy::PretrainedFrozen | Strategy::Scratch => SCRATCH_LEARNING_RATE,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::PretrainedFrozen => "pretrained_frozen",
            Strategy::Finetune => "finetune",
            Strategy::Scratch => "scratch",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pretrained_frozen" => Ok(Strategy::PretrainedFrozen),
            "finetune" => Ok(Strategy::Finetune),
            "scratch" => Ok(Strategy::Scratch),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// 1 trains the image-only network, 2 adds the score input.
    pub stage: u8,
    pub learning_rate: f64,
    /// Initial rate of the fully connected head; `None` uses
    /// `learning_rate`. Follows the same decay as the backbone.
    pub head_learning_rate: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub scale_range: (f64, f64),
    /// Center-crop scale used whenever a deterministic view is needed.
    pub eval_scale: f64,
    pub bn_momentum: f64,
}

impl TrainConfig {
    pub fn new(strategy: Strategy, stage: u8) -> Self {
        TrainConfig {
            strategy,
            stage,
            learning_rate: strategy.default_learning_rate(),
            head_learning_rate: (stage == 2).then_some(STAGE2_HEAD_LEARNING_RATE),
            epochs: 30,
            batch_size: 16,
            seed: 0,
            scale_range: (0.6, 0.8),
            eval_scale: 0.7,
            bn_momentum: 0.1,
        }
    }

    /// Rate for `epoch`; only scratch training decays.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.decayed(self.learning_rate, epoch)
    }

    /// Head rate for `epoch`, decayed like the backbone rate.
    pub fn head_learning_rate_at(&self, epoch: usize) -> f64 {
        self.decayed(self.head_learning_rate.unwrap_or(self.learning_rate), epoch)
    }

    fn decayed(&self, initial: f64, epoch: usize) -> f64 {
        match self.strategy {
            Strategy::Scratch => lr_schedule(initial, epoch),
            _ => initial,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.stage == 1 && self.epochs == 0 {
            return Err(Error::Config("stage 1 needs at least one epoch".into()));
        }
        for lr in std::iter::once(self.learning_rate).chain(self.head_learning_rate) {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) || !(self.eval_scale > 0.0 && self.eval_scale <= 1.0) {
            return Err(Error::Config("crop scales must lie in (0, 1] with min <= max".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("batch-norm momentum must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One training subject: raw 161×161×3 HU patch, label and, for the
/// hybrid stage, its normalized score.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub patch: &'a PatchStack,
    pub label: u8,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss over deterministic center crops before the first update.
    pub initial_loss: f64,
    /// Same measurement after the first epoch (absent for zero epochs).
    pub loss_after_first_epoch: Option<f64>,
    /// Mean mini-batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

impl TrainReport {
    /// Mean mini-batch loss of the last epoch, or the initial loss.
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub params: ModelParams,
    pub report: TrainReport,
}

/// Stage one: image-only network. `pretrained` supplies backbone weights
/// for the two pretrained strategies and is ignored when training from
/// scratch.
pub fn train_stage1(
    examples: &[TrainExample<'_>],
    backbone: &BackboneConfig,
    config: &TrainConfig,
    pretrained: Option<&ModelParams>,
) -> Result<Trained> {
    config.validate()?;
    if config.stage != 1 {
        return Err(Error::Config("train_stage1 needs a stage 1 configuration".into()));
    }
    check_examples(examples, false)?;
    let mut init_rng = rng_for(config.seed, "train/init");
    let mut params = ModelParams::init(*backbone, false, &mut init_rng)?;
    if config.strategy != Strategy::Scratch {
        let source = pretrained.ok_or_else(|| {
            Error::Config(format!("strategy {} needs pretrained backbone weights", config.strategy))
        })?;
        if source.backbone != *backbone {
            return Err(Error::Config(format!(
                "pretrained weights are for {:?}, configuration asks for {:?}",
                source.backbone, backbone
            )));
        }
        let (head_w, _) = params.head_indices();
        params.set.params[..head_w].clone_from_slice(&source.set.params[..head_w]);
        params.set.buffers = source.set.buffers.clone();
    }
    params.stats = channel_stats(examples.iter().map(|e| e.patch))?;
    let report = fit(&mut params, examples, config)?;
    Ok(Trained { params, report })
}

/// Stage two: append the score input (zero-initialized column) to a stage
/// one model and keep training with scores. Zero epochs returns the
/// extended model unchanged.
pub fn train_stage2(
    stage1: &ModelParams,
    examples: &[TrainExample<'_>],
    norm: ScoreNorm,
    config: &TrainConfig,
) -> Result<Trained> {
    config.validate()?;
    if config.stage != 2 {
        return Err(Error::Config("train_stage2 needs a stage 2 configuration".into()));
    }
    check_examples(examples, true)?;
    let mut params = stage1.to_hybrid(norm)?;
    let report = fit(&mut params, examples, config)?;
    Ok(Trained { params, report })
}

fn check_examples(examples: &[TrainExample<'_>], with_scores: bool) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    for (i, e) in examples.iter().enumerate() {
        if e.label > 1 {
            return Err(Error::Argument(format!("example {i}: label {} is not 0/1", e.label)));
        }
        match (with_scores, e.score) {
            (true, None) => return Err(Error::Argument(format!("example {i} has no score"))),
            (true, Some(s)) if !(-1.0..=1.0).contains(&s) => {
                return Err(Error::Argument(format!("example {i}: score {s} outside [-1, 1]")))
            }
            _ => {}
        }
    }
    Ok(())
}

fn head_only(config: &TrainConfig) -> bool {
    config.strategy == Strategy::PretrainedFrozen
}

/// Normalized network input for a set of raw patches.
fn prepare(
    params: &ModelParams,
    raw: &[&PatchStack],
    stats: &ChannelStats,
    view: impl FnMut(&PatchStack) -> Result<PatchStack>,
) -> Result<Tensor> {
    let mut view = view;
    let views = raw
        .iter()
        .map(|p| view(p).and_then(|v| normalize_patch(&v, stats)))
        .collect::<Result<Vec<_>>>()?;
    batch_tensor(&views, params.backbone.input_side)
}

/// Loss and parameter gradients of one batch. Batch norm runs in the given
/// mode; the returned tape still holds the batch statistics.
pub fn loss_and_gradient(
    params: &ModelParams,
    x: &Tensor,
    labels: &[u8],
    scores: Option<&[f64]>,
    backbone_mode: Mode,
    backbone_grad: bool,
) -> (f64, Vec<Vec<f64>>, Tape) {
    let mut tape = Tape::default();
    let feats = if backbone_grad {
        params.net.forward(&params.set, x, backbone_mode, Some(&mut tape))
    } else {
        params.net.forward(&params.set, x, backbone_mode, None)
    };
    let logits = params.head_forward(&feats, scores);
    let (loss, dlogits) = cross_entropy(&logits, labels);
    let mut grads = params.set.zero_grads();
    let dfeat = params.head_backward(&feats, scores, &dlogits, &mut grads);
    let mut bn_tape = Tape::default();
    if backbone_grad {
        bn_tape.bn_stats = std::mem::take(&mut tape.bn_stats);
        params.net.backward(&params.set, &mut tape, &dfeat, &mut grads);
    }
    (loss, grads, bn_tape)
}

fn scores_of(examples: &[&TrainExample<'_>], hybrid: bool) -> Option<Vec<f64>> {
    hybrid.then(|| examples.iter().map(|e| e.score.expect("checked")).collect())
}

/// Loss over center crops in fixed batches, batch statistics as in
/// training, no parameter or buffer updates.
fn probe_loss(params: &ModelParams, examples: &[TrainExample<'_>], config: &TrainConfig) -> Result<f64> {
    let mode = if head_only(config) { Mode::Eval } else { Mode::Train };
    let side = params.backbone.input_side;
    let mut total = 0.0;
    for chunk in examples.chunks(config.batch_size) {
        let refs: Vec<&TrainExample<'_>> = chunk.iter().collect();
        let raw: Vec<&PatchStack> = refs.iter().map(|e| e.patch).collect();
        let x = prepare(params, &raw, &params.stats, |p| center_crop(p, config.eval_scale, side))?;
        let scores = scores_of(&refs, params.hybrid);
        let logits = params.logits(&x, scores.as_deref(), mode, None);
        let labels: Vec<u8> = refs.iter().map(|e| e.label).collect();
        total += cross_entropy(&logits, &labels).0 * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn fit(params: &mut ModelParams, examples: &[TrainExample<'_>], config: &TrainConfig) -> Result<TrainReport> {
    let frozen = head_only(config);
    let (head_w, head_b) = params.head_indices();
    let trainable: Vec<usize> = if frozen { vec![head_w, head_b] } else { (0..params.set.params.len()).collect() };
    let is_head = |i: usize| i == head_w || i == head_b;
    let mode = if frozen { Mode::Eval } else { Mode::Train };
    let side = params.backbone.input_side;
    let stats = params.stats.clone();
    let mut rng = rng_for(config.seed, &format!("train/stage{}/batches", config.stage));
    let mut adam = Adam::new(&params.set);
    let initial_loss = probe_loss(params, examples, config)?;
    let mut report = TrainReport { initial_loss, loss_after_first_epoch: None, epoch_losses: Vec::new(), steps: 0 };
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        let head_lr = config.head_learning_rate_at(epoch);
        let rates: Vec<(usize, f64)> =
            trainable.iter().map(|&i| (i, if is_head(i) { head_lr } else { lr })).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&TrainExample<'_>> = chunk.iter().map(|&i| &examples[i]).collect();
            let raw: Vec<&PatchStack> = refs.iter().map(|e| e.patch).collect();
            let x = prepare(params, &raw, &stats, |p| augment_to(p, &mut rng, config.scale_range, side))?;
            let labels: Vec<u8> = refs.iter().map(|e| e.label).collect();
            let scores = scores_of(&refs, params.hybrid);
            let (loss, grads, tape) = loss_and_gradient(params, &x, &labels, scores.as_deref(), mode, !frozen);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {}", report.steps)));
            }
            if !frozen {
                tape.update_running_stats(&mut params.set, config.bn_momentum);
            }
            adam.step(&mut params.set, &grads, &rates);
            report.steps += 1;
            epoch_loss += loss * chunk.len() as f64;
        }
        let mean = epoch_loss / examples.len() as f64;
        debug!("stage {} epoch {epoch}: lr {lr:e}, loss {mean:.5}", config.stage);
        report.epoch_losses.push(mean);
        if epoch == 0 {
            report.loss_after_first_epoch = Some(probe_loss(params, examples, config)?);
        }
    }
    if !params.set.all_finite() {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok(report)
}

/// Nonsurvival probabilities for raw 161×161×3 patches: centered crop at
/// `eval_scale`, model normalization, evaluation-mode batch norm.
pub fn predict(params: &ModelParams, patches: &[&PatchStack], scores: Option<&[f64]>, eval_scale: f64) -> Result<Vec<f64>> {
    params.check_scores(patches.len(), scores)?;
    let side = params.backbone.input_side;
    let mut out = Vec::with_capacity(patches.len());
    for (i, chunk) in patches.chunks(32).enumerate() {
        let x = prepare(params, chunk, &params.stats, |p| center_crop(p, eval_scale, side))?;
        let sc = scores.map(|s| &s[i * 32..i * 32 + chunk.len()]);
        let logits = params.logits(&x, sc, Mode::Eval, None);
        out.extend(logits.iter().map(|l| softmax2(*l)[NONSURVIVOR as usize]));
    }
    Ok(out)
}
