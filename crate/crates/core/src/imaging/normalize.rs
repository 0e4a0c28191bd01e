use ndarray::Axis;

use super::patch::PatchStack;
use crate::error::{Error, Result};

/// Per-channel intensity statistics used to standardize network input.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn identity(channels: usize) -> Self {
        ChannelStats { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::shape(
                format!("{channels} channel statistics"),
                format!("{} means / {} stds", self.mean.len(), self.std.len()),
            ));
        }
        if let Some(s) = self.std.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Argument(format!("channel std must be > 0, got {s}")));
        }
        Ok(())
    }
}

/// Population mean and standard deviation per channel over every pixel of
/// every patch. A zero spread is floored at `1e-12` so the result is always
/// usable by [`normalize_patch`].
pub fn channel_stats<'a>(patches: impl IntoIterator<Item = &'a PatchStack>) -> Result<ChannelStats> {
    let mut sum: Vec<f64> = Vec::new();
    let mut sum_sq: Vec<f64> = Vec::new();
    let mut count = 0usize;
    let patches: Vec<&PatchStack> = patches.into_iter().collect();
    for p in &patches {
        let c = p.channels();
        if sum.is_empty() {
            sum = vec![0.0; c];
        } else if sum.len() != c {
            return Err(Error::shape(format!("{} channels", sum.len()), format!("{c} channels")));
        }
        for (k, plane) in p.pixels.axis_iter(Axis(2)).enumerate() {
            sum[k] += plane.sum();
        }
        count += p.pixels.dim().0 * p.pixels.dim().1;
    }
    if count == 0 {
        return Err(Error::Argument("cannot compute channel statistics of an empty set".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
    // second pass for numerical stability
    sum_sq.resize(mean.len(), 0.0);
    for p in &patches {
        for (k, plane) in p.pixels.axis_iter(Axis(2)).enumerate() {
            sum_sq[k] += plane.iter().map(|v| (v - mean[k]).powi(2)).sum::<f64>();
        }
    }
    let std = sum_sq.iter().map(|s| (s / count as f64).sqrt().max(1e-12)).collect();
    Ok(ChannelStats { mean, std })
}

/// `out[i, j, c] = (in[i, j, c] - mean[c]) / std[c]`.
pub fn normalize_patch(patch: &PatchStack, stats: &ChannelStats) -> Result<PatchStack> {
    stats.check(patch.channels())?;
    let mut out = patch.clone();
    for (k, mut plane) in out.pixels.axis_iter_mut(Axis(2)).enumerate() {
        let (m, s) = (stats.mean[k], stats.std[k]);
        plane.mapv_inplace(|v| (v - m) / s);
    }
    Ok(out)
}

pub fn denormalize_patch(patch: &PatchStack, stats: &ChannelStats) -> Result<PatchStack> {
    stats.check(patch.channels())?;
    let mut out = patch.clone();
    for (k, mut plane) in out.pixels.axis_iter_mut(Axis(2)).enumerate() {
        let (m, s) = (stats.mean[k], stats.std[k]);
        plane.mapv_inplace(|v| v * s + m);
    }
    Ok(out)
}
