use rand::seq::SliceRandom;

use super::backbone::{Mode, Tape};
use super::model::{cross_entropy, ModelParams};
use super::ops::Tensor;
use super::train::loss_and_gradient;
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is zero compare on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: Vec<CoordinateCheck>,
    /// Coordinates dropped because `w ± eps` switched a ReLU or max-pool
    /// branch, where the loss is not differentiable.
    pub skipped: usize,
    pub loss: f64,
    pub gradient_norm: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checked.iter().max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Analytic loss gradient against central finite differences on at least
/// `coordinates` weight entries sampled from every parameter tensor.
/// Batch norm uses batch statistics, as during training.
pub fn gradient_check(
    params: &ModelParams,
    x: &Tensor,
    labels: &[u8],
    scores: Option<&[f64]>,
    epsilon: f64,
    coordinates: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    gradient_check_with(params, x, labels, scores, epsilon, coordinates, seed, |_| {})
}

/// As [`gradient_check`], with a hook that may alter the analytic gradient
/// before comparison (used to confirm that the check detects a broken
/// backward pass).
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_with(
    params: &ModelParams,
    x: &Tensor,
    labels: &[u8],
    scores: Option<&[f64]>,
    epsilon: f64,
    coordinates: usize,
    seed: u64,
    tamper: impl FnOnce(&mut [Vec<f64>]),
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Argument(format!("epsilon {epsilon:e} outside [1e-7, 1e-3]")));
    }
    if coordinates == 0 {
        return Err(Error::Argument("need at least one coordinate".into()));
    }
    if labels.len() != x.batch() {
        return Err(Error::Argument(format!("{} labels for a batch of {}", labels.len(), x.batch())));
    }
    params.check_scores(labels.len(), scores)?;

    let (loss, mut grads, _) = loss_and_gradient(params, x, labels, scores, Mode::Train, true);
    let gradient_norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    tamper(&mut grads);

    let base_signature = signature(params, x);
    let mut rng = rng_for(seed, "gradcheck/coordinates");
    let picks = sample_coordinates(params, coordinates, &mut rng);
    let mut probe = params.clone();
    let mut checked = Vec::with_capacity(picks.len());
    let mut skipped = 0;
    for (t, i) in picks {
        let w0 = probe.set.params[t].data[i];
        probe.set.params[t].data[i] = w0 + epsilon;
        let (plus, sig_plus) = eval_loss(&probe, x, labels, scores);
        probe.set.params[t].data[i] = w0 - epsilon;
        let (minus, sig_minus) = eval_loss(&probe, x, labels, scores);
        probe.set.params[t].data[i] = w0;
        if sig_plus != base_signature || sig_minus != base_signature {
            skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads[t][i];
        checked.push(CoordinateCheck {
            tensor: params.set.params[t].name.clone(),
            index: i,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    if checked.is_empty() {
        return Err(Error::Numeric("every sampled coordinate crossed a non-differentiable point".into()));
    }
    let max_relative_error = checked.iter().map(|c| c.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_relative_error, checked, skipped, loss, gradient_norm })
}

fn signature(params: &ModelParams, x: &Tensor) -> u64 {
    let mut tape = Tape::default();
    params.net.forward(&params.set, x, Mode::Train, Some(&mut tape));
    tape.branch_signature()
}

fn eval_loss(params: &ModelParams, x: &Tensor, labels: &[u8], scores: Option<&[f64]>) -> (f64, u64) {
    let mut tape = Tape::default();
    let logits = params.logits(x, scores, Mode::Train, Some(&mut tape));
    (cross_entropy(&logits, labels).0, tape.branch_signature())
}

/// Every tensor contributes `ceil(n / tensors)` distinct coordinates (or
/// all of its entries if it is smaller); the remainder is topped up from
/// the largest tensors so the total reaches `n` whenever possible.
fn sample_coordinates(params: &ModelParams, n: usize, rng: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    let tensors = &params.set.params;
    let per = n.div_ceil(tensors.len());
    let mut taken: Vec<Vec<usize>> = tensors
        .iter()
        .map(|t| {
            let len = t.data.len();
            if len <= per {
                (0..len).collect()
            } else {
                rand::seq::index::sample(rng, len, per).into_vec()
            }
        })
        .collect();
    let mut total: usize = taken.iter().map(Vec::len).sum();
    let mut by_size: Vec<usize> = (0..tensors.len()).collect();
    by_size.sort_by_key(|&t| std::cmp::Reverse(tensors[t].data.len()));
    for &t in by_size.iter().cycle().take(4 * n) {
        if total >= n {
            break;
        }
        let len = tensors[t].data.len();
        if taken[t].len() < len {
            let i = rng.gen_range(0..len);
            if !taken[t].contains(&i) {
                taken[t].push(i);
                total += 1;
            }
        }
    }
    let mut out: Vec<(usize, usize)> =
        taken.into_iter().enumerate().flat_map(|(t, idx)| idx.into_iter().map(move |i| (t, i))).collect();
    out.shuffle(rng);
    out
}
