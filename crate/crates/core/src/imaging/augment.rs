use ndarray::{s, Array3, ArrayView3};
use rand::Rng;

use super::patch::{PatchStack, NETWORK_PATCH_SIDE};
use crate::error::{Error, Result};

/// Side of the augmented network input.
pub const NETWORK_INPUT_SIDE: usize = 224;

/// Crop side used for scale `s` on a patch of side `side`.
pub fn crop_side(side: usize, scale: f64) -> usize {
    ((side as f64 * scale).floor() as usize).clamp(1, side)
}

fn check_scale_range(scale_range: (f64, f64)) -> Result<()> {
    let (lo, hi) = scale_range;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::Argument(format!("scale range ({lo}, {hi}) must satisfy 0 < min <= max <= 1")));
    }
    Ok(())
}

fn check_input(patch: &PatchStack) -> Result<()> {
    let (h, w, c) = patch.pixels.dim();
    if (h, w, c) != (NETWORK_PATCH_SIDE, NETWORK_PATCH_SIDE, 3) {
        return Err(Error::shape(
            format!("{NETWORK_PATCH_SIDE}x{NETWORK_PATCH_SIDE}x3"),
            format!("{h}x{w}x{c}"),
        ));
    }
    Ok(())
}

/// Random scaled crop resized to 224×224; see [`augment_to`].
pub fn augment<R: Rng + ?Sized>(patch: &PatchStack, rng: &mut R, scale_range: (f64, f64)) -> Result<PatchStack> {
    augment_to(patch, rng, scale_range, NETWORK_INPUT_SIDE)
}

/// Draws a scale uniformly from `scale_range`, crops a square of side
/// `⌊161·scale⌋` at a uniformly random in-bounds offset and resizes it to
/// `out_side` with bilinear interpolation. All channels share the transform.
pub fn augment_to<R: Rng + ?Sized>(
    patch: &PatchStack,
    rng: &mut R,
    scale_range: (f64, f64),
    out_side: usize,
) -> Result<PatchStack> {
    check_input(patch)?;
    check_scale_range(scale_range)?;
    let scale = if scale_range.0 == scale_range.1 {
        scale_range.0
    } else {
        rng.gen_range(scale_range.0..=scale_range.1)
    };
    let side = crop_side(NETWORK_PATCH_SIDE, scale);
    let slack = NETWORK_PATCH_SIDE - side;
    let row = rng.gen_range(0..=slack);
    let col = rng.gen_range(0..=slack);
    let window = patch.pixels.slice(s![row..row + side, col..col + side, ..]);
    Ok(PatchStack { pixels: resize_bilinear(window, out_side), provenance: patch.provenance.clone() })
}

/// Deterministic centered crop at `scale`, resized to `out_side`. Used at
/// evaluation time in place of the random crop.
pub fn center_crop(patch: &PatchStack, scale: f64, out_side: usize) -> Result<PatchStack> {
    check_input(patch)?;
    check_scale_range((scale, scale))?;
    let side = crop_side(NETWORK_PATCH_SIDE, scale);
    let off = (NETWORK_PATCH_SIDE - side) / 2;
    let window = patch.pixels.slice(s![off..off + side, off..off + side, ..]);
    Ok(PatchStack { pixels: resize_bilinear(window, out_side), provenance: patch.provenance.clone() })
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of a square `(row, col, channel)` image, half-pixel
/// centers (align-corners off), edge-clamped.
pub fn resize_bilinear(src: ArrayView3<'_, f64>, out_side: usize) -> Array3<f64> {
    let (h, w, c) = src.dim();
    let taps = |n_in: usize| -> Vec<(usize, usize, f64)> {
        let ratio = n_in as f64 / out_side as f64;
        (0..out_side)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = pos.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, pos - i0 as f64)
            })
            .collect()
    };
    let ys = taps(h);
    let xs = taps(w);
    let mut out = Array3::<f64>::zeros((out_side, out_side, c));
    for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
            for k in 0..c {
                let top = lerp(src[[y0, x0, k]], src[[y0, x1, k]], tx);
                let bottom = lerp(src[[y1, x0, k]], src[[y1, x1, k]], tx);
                out[[oy, ox, k]] = lerp(top, bottom, ty);
            }
        }
    }
    out
}
