use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::backbone::{Backbone, BackboneConfig, Mode, ParamSet, Tape};
use super::ops::Tensor;
use crate::error::{Error, Result};
use crate::imaging::{ChannelStats, PatchStack};
use crate::scoring::{normalize_score, ScoreReport};

pub const SURVIVOR: u8 = 0;
pub const NONSURVIVOR: u8 = 1;

/// Which scalar feeds the hybrid head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScoreSource {
    SubjectiveGrade,
    Agatston,
    /// Fixed value for every subject; carries no information.
    Constant(f64),
}

impl ScoreSource {
    pub fn name(&self) -> String {
        match self {
            ScoreSource::SubjectiveGrade => "grade".into(),
            ScoreSource::Agatston => "agatston".into(),
            ScoreSource::Constant(v) => format!("constant({v})"),
        }
    }
}

impl fmt::Display for ScoreSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ScoreSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "grade" | "subjective_grade" => Ok(ScoreSource::SubjectiveGrade),
            "agatston" => Ok(ScoreSource::Agatston),
            other => other
                .strip_prefix("constant(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|v| v.parse::<f64>().ok())
                .map(ScoreSource::Constant)
                .ok_or_else(|| Error::Config(format!("unknown score source {other:?}"))),
        }
    }
}

/// Raw-score range mapped onto [-1, 1] for the hybrid input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreNorm {
    pub source: ScoreSource,
    pub min: f64,
    pub max: f64,
}

impl ScoreNorm {
    /// Unnormalized score of one subject.
    pub fn raw(source: ScoreSource, report: &ScoreReport) -> f64 {
        match source {
            ScoreSource::SubjectiveGrade => f64::from(report.subjective_grade.unwrap_or(0)),
            ScoreSource::Agatston => report.agatston,
            ScoreSource::Constant(v) => v,
        }
    }

    /// Range for a training set: the full 0..=3 scale for grades, zero to
    /// the largest training value for Agatston (later values clamp), and
    /// [-1, 1] for constants.
    pub fn fit<'a>(source: ScoreSource, train: impl IntoIterator<Item = &'a ScoreReport>) -> ScoreNorm {
        let (min, max) = match source {
            ScoreSource::SubjectiveGrade => (0.0, 3.0),
            ScoreSource::Agatston => {
                let top = train.into_iter().map(|r| r.agatston).fold(0.0, f64::max);
                (0.0, if top > 0.0 { top } else { 1.0 })
            }
            ScoreSource::Constant(_) => (-1.0, 1.0),
        };
        ScoreNorm { source, min, max }
    }

    /// Normalized hybrid input in [-1, 1].
    pub fn apply(&self, report: &ScoreReport) -> Result<f64> {
        normalize_score(Self::raw(self.source, report), self.min, self.max)
    }
}

/// Backbone and head weights with everything needed to reproduce inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub backbone: BackboneConfig,
    pub hybrid: bool,
    pub set: ParamSet,
    pub stats: ChannelStats,
    pub score_norm: Option<ScoreNorm>,
    pub(crate) net: Backbone,
    head_w: usize,
    head_b: usize,
}

/// Per-sample class scores `[survivor, nonsurvivor]` and nonsurvival
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskOutput {
    pub logits: Vec<[f64; 2]>,
    pub probability: Vec<f64>,
}

pub(crate) fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e0 = (l[0] - m).exp();
    let e1 = (l[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// Mean two-class cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[[f64; 2]], labels: &[u8]) -> (f64, Vec<[f64; 2]>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        let m = l[0].max(l[1]);
        let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
        loss += lse - l[y as usize];
        let p = softmax2(*l);
        let mut g = [p[0] / n, p[1] / n];
        g[y as usize] -= 1.0 / n;
        grad.push(g);
    }
    (loss / n, grad)
}

impl ModelParams {
    /// All-zero weights with batch-norm scales at one.
    pub fn empty(backbone: BackboneConfig, hybrid: bool) -> Result<Self> {
        let mut set = ParamSet::default();
        let net = Backbone::build(&backbone, &mut set)?;
        let width = backbone.feature_dim + usize::from(hybrid);
        set.params.push(super::backbone::NamedTensor {
            name: "head.weight".into(),
            shape: vec![2, width],
            data: vec![0.0; 2 * width],
        });
        set.params.push(super::backbone::NamedTensor { name: "head.bias".into(), shape: vec![2], data: vec![0.0; 2] });
        let head_w = set.params.len() - 2;
        Ok(ModelParams {
            backbone,
            hybrid,
            set,
            stats: ChannelStats::identity(3),
            score_norm: None,
            net,
            head_w,
            head_b: head_w + 1,
        })
    }

    /// Random initialization for training from scratch: Kaiming-normal
    /// convolutions, uniform ±1/√fan_in head weights, zero head bias.
    pub fn init<R: Rng + ?Sized>(backbone: BackboneConfig, hybrid: bool, rng: &mut R) -> Result<Self> {
        let mut p = Self::empty(backbone, hybrid)?;
        p.net.init(&mut p.set, rng);
        let bound = 1.0 / (p.head_width() as f64).sqrt();
        for v in p.set.params[p.head_w].data.iter_mut() {
            *v = rng.gen_range(-bound..bound);
        }
        Ok(p)
    }

    /// Input width of the fully connected head.
    pub fn head_width(&self) -> usize {
        self.set.params[self.head_w].shape[1]
    }

    pub fn head_weight(&self) -> &[f64] {
        &self.set.params[self.head_w].data
    }

    pub fn head_weight_mut(&mut self) -> &mut [f64] {
        &mut self.set.params[self.head_w].data
    }

    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        &mut self.set.params[self.head_b].data
    }

    pub(crate) fn head_indices(&self) -> (usize, usize) {
        (self.head_w, self.head_b)
    }

    /// Hybrid copy with one extra head column for the score, initialized to
    /// zero so the extended model starts with identical predictions.
    pub fn to_hybrid(&self, norm: ScoreNorm) -> Result<ModelParams> {
        if self.hybrid {
            return Err(Error::Argument("model already takes a score input".into()));
        }
        let mut out = ModelParams::empty(self.backbone, true)?;
        let n_backbone = self.head_w;
        out.set.params[..n_backbone].clone_from_slice(&self.set.params[..n_backbone]);
        out.set.buffers = self.set.buffers.clone();
        let d = self.backbone.feature_dim;
        let src = &self.set.params[self.head_w].data;
        let dst = &mut out.set.params[out.head_w].data;
        for j in 0..2 {
            dst[j * (d + 1)..j * (d + 1) + d].copy_from_slice(&src[j * d..(j + 1) * d]);
            dst[j * (d + 1) + d] = 0.0;
        }
        out.set.params[out.head_b].data = self.set.params[self.head_b].data.clone();
        out.stats = self.stats.clone();
        out.score_norm = Some(norm);
        Ok(out)
    }

    /// Image-only copy sharing every weight except the score column.
    pub fn without_score_input(&self) -> Result<ModelParams> {
        if !self.hybrid {
            return Err(Error::Argument("model has no score input".into()));
        }
        let mut out = ModelParams::empty(self.backbone, false)?;
        out.set.params[..self.head_w].clone_from_slice(&self.set.params[..self.head_w]);
        out.set.buffers = self.set.buffers.clone();
        let d = self.backbone.feature_dim;
        let src = &self.set.params[self.head_w].data;
        let dst = &mut out.set.params[out.head_w].data;
        for j in 0..2 {
            dst[j * d..(j + 1) * d].copy_from_slice(&src[j * (d + 1)..j * (d + 1) + d]);
        }
        out.set.params[out.head_b].data = self.set.params[self.head_b].data.clone();
        out.stats = self.stats.clone();
        Ok(out)
    }

    /// Short hash over the architecture, tensor layout, normalization
    /// statistics and score range.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.backbone.depth.code().to_le_bytes());
        h.update((self.backbone.feature_dim as u64).to_le_bytes());
        h.update((self.backbone.input_side as u64).to_le_bytes());
        h.update([u8::from(self.hybrid)]);
        for t in self.set.params.iter().chain(&self.set.buffers) {
            h.update(t.name.as_bytes());
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
        }
        for v in self.stats.mean.iter().chain(&self.stats.std) {
            h.update(v.to_le_bytes());
        }
        if let Some(n) = &self.score_norm {
            h.update(n.source.name().as_bytes());
            h.update(n.min.to_le_bytes());
            h.update(n.max.to_le_bytes());
        }
        h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Head logits from pooled features (and scores for the hybrid head).
    pub(crate) fn head_forward(&self, feats: &[f64], scores: Option<&[f64]>) -> Vec<[f64; 2]> {
        let d = self.backbone.feature_dim;
        let width = self.head_width();
        let w = &self.set.params[self.head_w].data;
        let b = &self.set.params[self.head_b].data;
        feats
            .chunks(d)
            .enumerate()
            .map(|(n, f)| {
                let mut out = [0.0; 2];
                for (j, o) in out.iter_mut().enumerate() {
                    let row = &w[j * width..(j + 1) * width];
                    let mut s: f64 = row[..d].iter().zip(f).map(|(a, x)| a * x).sum();
                    if let Some(sc) = scores {
                        s += row[d] * sc[n];
                    }
                    *o = s + b[j];
                }
                out
            })
            .collect()
    }

    /// Accumulates head gradients; returns `d loss / d features`.
    pub(crate) fn head_backward(
        &self,
        feats: &[f64],
        scores: Option<&[f64]>,
        dlogits: &[[f64; 2]],
        grads: &mut [Vec<f64>],
    ) -> Vec<f64> {
        let d = self.backbone.feature_dim;
        let width = self.head_width();
        let w = &self.set.params[self.head_w].data;
        let mut dfeat = vec![0.0; feats.len()];
        for (n, (f, dl)) in feats.chunks(d).zip(dlogits).enumerate() {
            for j in 0..2 {
                let g = dl[j];
                let gw = &mut grads[self.head_w][j * width..(j + 1) * width];
                for (gi, x) in gw[..d].iter_mut().zip(f) {
                    *gi += g * x;
                }
                if let Some(sc) = scores {
                    gw[d] += g * sc[n];
                }
                grads[self.head_b][j] += g;
                let row = &w[j * width..j * width + d];
                for (df, wi) in dfeat[n * d..(n + 1) * d].iter_mut().zip(row) {
                    *df += g * wi;
                }
            }
        }
        dfeat
    }

    /// Full forward pass on a prepared NCHW batch.
    pub fn logits(&self, x: &Tensor, scores: Option<&[f64]>, mode: Mode, tape: Option<&mut Tape>) -> Vec<[f64; 2]> {
        let feats = self.net.forward(&self.set, x, mode, tape);
        self.head_forward(&feats, scores)
    }

    pub(crate) fn check_scores(&self, n: usize, scores: Option<&[f64]>) -> Result<()> {
        match (self.hybrid, scores) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::Argument("image-only model does not take scores".into())),
            (true, None) => Err(Error::Argument("hybrid model needs one score per sample".into())),
            (true, Some(s)) => {
                if s.len() != n {
                    return Err(Error::Argument(format!("{} scores for {n} patches", s.len())));
                }
                if let Some(bad) = s.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                    return Err(Error::Argument(format!("normalized score {bad} outside [-1, 1]")));
                }
                Ok(())
            }
        }
    }
}

/// Packs `side×side×3` patches into an NCHW tensor.
pub fn batch_tensor(patches: &[PatchStack], side: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros([patches.len(), 3, side, side]);
    let plane = side * side;
    for (n, p) in patches.iter().enumerate() {
        let (h, w, c) = p.pixels.dim();
        if (h, w, c) != (side, side, 3) {
            return Err(Error::shape(format!("{side}x{side}x3"), format!("{h}x{w}x{c}")));
        }
        for ((r, col, k), v) in p.pixels.indexed_iter() {
            t.data[(n * 3 + k) * plane + r * side + col] = *v;
        }
    }
    Ok(t)
}

fn run(params: &ModelParams, batch: &[PatchStack], scores: Option<&[f64]>) -> Result<RiskOutput> {
    params.check_scores(batch.len(), scores)?;
    let x = batch_tensor(batch, params.backbone.input_side)?;
    let logits = params.logits(&x, scores, Mode::Eval, None);
    let probability = logits.iter().map(|l| softmax2(*l)[NONSURVIVOR as usize]).collect();
    Ok(RiskOutput { logits, probability })
}

/// Image-only prediction on prepared (augmented or center-cropped,
/// normalized) input patches. Evaluation-mode batch norm.
pub fn forward_risknet(params: &ModelParams, batch: &[PatchStack]) -> Result<RiskOutput> {
    if params.hybrid {
        return Err(Error::Argument("hybrid model needs forward_hyrisknet".into()));
    }
    run(params, batch, None)
}

/// Hybrid prediction: backbone features concatenated with one normalized
/// score per sample.
pub fn forward_hyrisknet(params: &ModelParams, batch: &[PatchStack], scores: &[f64]) -> Result<RiskOutput> {
    if !params.hybrid {
        return Err(Error::Argument("image-only model needs forward_risknet".into()));
    }
    run(params, batch, Some(scores))
}
