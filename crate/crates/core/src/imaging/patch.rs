use ndarray::Array3;

use super::volume::{CtVolume, Spacing};
use crate::error::{Error, Result};

/// In-plane side of the calcium scoring window.
pub const SCORING_PATCH_SIDE: usize = 65;
/// Slices in the calcium scoring window.
pub const SCORING_PATCH_SLICES: usize = 5;
/// In-plane side of the raw network patch, before augmentation.
pub const NETWORK_PATCH_SIDE: usize = 161;

/// What to do when an extraction window leaves the volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPolicy {
    Reject,
    /// Replicate the nearest edge voxel along every axis.
    Clamp,
}

/// A 65×65×5 HU sub-volume around a heart-region center.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringPatch {
    /// `(slice, row, col)`.
    voxels: Array3<i16>,
    spacing: Spacing,
}

impl ScoringPatch {
    pub fn new(voxels: Array3<i16>, spacing: Spacing) -> Result<Self> {
        let want = (SCORING_PATCH_SLICES, SCORING_PATCH_SIDE, SCORING_PATCH_SIDE);
        if voxels.dim() != want {
            return Err(Error::shape(format!("{want:?}"), format!("{:?}", voxels.dim())));
        }
        spacing.validate()?;
        Ok(ScoringPatch { voxels, spacing })
    }

    /// HU at `(row, col, slice)`.
    pub fn at(&self, row: usize, col: usize, slice: usize) -> i16 {
        self.voxels[[slice, row, col]]
    }

    pub fn voxels(&self) -> &Array3<i16> {
        &self.voxels
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }
}

/// Where a patch came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Provenance {
    pub subject: String,
    pub center_row: usize,
    pub center_col: usize,
    pub center_slice: usize,
}

/// H×W×C real-valued image stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchStack {
    /// `(row, col, channel)`.
    pub pixels: Array3<f64>,
    pub provenance: Provenance,
}

impl PatchStack {
    pub fn side(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }
}

fn resolve(
    axis: &'static str,
    center: usize,
    half: usize,
    len: usize,
    policy: BoundaryPolicy,
) -> Result<Vec<usize>> {
    let lo = center as i64 - half as i64;
    let hi = center as i64 + half as i64;
    if policy == BoundaryPolicy::Reject && (lo < 0 || hi >= len as i64) {
        return Err(Error::Range {
            axis,
            detail: format!("window [{lo}, {hi}] does not fit in [0, {}]", len as i64 - 1),
        });
    }
    if center >= len {
        return Err(Error::Range { axis, detail: format!("center {center} outside [0, {len})") });
    }
    Ok((lo..=hi).map(|i| i.clamp(0, len as i64 - 1) as usize).collect())
}

/// Copies the 65×65 window on slices `center_slice-2 ..= center_slice+2`.
pub fn extract_scoring_patch(
    volume: &CtVolume,
    center: (usize, usize),
    center_slice: usize,
    policy: BoundaryPolicy,
) -> Result<ScoringPatch> {
    let half = SCORING_PATCH_SIDE / 2;
    let rows = resolve("row", center.0, half, volume.rows(), policy)?;
    let cols = resolve("col", center.1, half, volume.cols(), policy)?;
    let slices = resolve("slice", center_slice, SCORING_PATCH_SLICES / 2, volume.slices(), policy)?;
    let src = volume.voxels();
    let voxels = Array3::from_shape_fn(
        (SCORING_PATCH_SLICES, SCORING_PATCH_SIDE, SCORING_PATCH_SIDE),
        |(s, r, c)| src[[slices[s], rows[r], cols[c]]],
    );
    Ok(ScoringPatch { voxels, spacing: volume.spacing() })
}

/// Stacks slices `slice_index-1`, `slice_index`, `slice_index+1` as the three
/// channels of a 161×161 window.
pub fn extract_network_patch(
    volume: &CtVolume,
    center: (usize, usize),
    slice_index: usize,
    policy: BoundaryPolicy,
) -> Result<PatchStack> {
    let half = NETWORK_PATCH_SIDE / 2;
    let rows = resolve("row", center.0, half, volume.rows(), policy)?;
    let cols = resolve("col", center.1, half, volume.cols(), policy)?;
    let slices = resolve("slice", slice_index, 1, volume.slices(), policy)?;
    let src = volume.voxels();
    let pixels = Array3::from_shape_fn((NETWORK_PATCH_SIDE, NETWORK_PATCH_SIDE, 3), |(r, c, k)| {
        f64::from(src[[slices[k], rows[r], cols[c]]])
    });
    Ok(PatchStack {
        pixels,
        provenance: Provenance {
            subject: volume.id().to_string(),
            center_row: center.0,
            center_col: center.1,
            center_slice: slice_index,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn volume_from(dim: (usize, usize, usize), f: impl Fn(usize, usize, usize) -> i16) -> CtVolume {
        let v = Array3::from_shape_fn(dim, |(s, r, c)| f(s, r, c));
        CtVolume::new("t", v, Spacing::new(0.7, 0.7, 3.0).unwrap()).unwrap()
    }

    #[test]
    fn scoring_patch_is_centered() {
        let vol = volume_from((100, 512, 512), |s, r, c| ((s * 7 + r * 3 + c) % 2000) as i16);
        let p = extract_scoring_patch(&vol, (256, 256), 50, BoundaryPolicy::Reject).unwrap();
        assert_eq!(p.voxels().dim(), (5, 65, 65));
        assert_eq!(p.at(32, 32, 2), vol.at(256, 256, 50));
        assert_eq!(p.at(0, 0, 0), vol.at(224, 224, 48));
        assert_eq!(p.at(64, 64, 4), vol.at(288, 288, 52));
    }

    #[test]
    fn scoring_patch_rejects_off_edge_centers() {
        let vol = volume_from((9, 200, 200), |_, _, _| 0);
        match extract_scoring_patch(&vol, (10, 10), 4, BoundaryPolicy::Reject) {
            Err(Error::Range { axis, .. }) => assert_eq!(axis, "row"),
            other => panic!("expected range error, got {other:?}"),
        }
        match extract_scoring_patch(&vol, (100, 100), 1, BoundaryPolicy::Reject) {
            Err(Error::Range { axis, .. }) => assert_eq!(axis, "slice"),
            other => panic!("expected range error, got {other:?}"),
        }
        assert!(extract_scoring_patch(&vol, (10, 10), 1, BoundaryPolicy::Clamp).is_ok());
    }

    #[test]
    fn constant_volume_gives_constant_patch() {
        let vol = volume_from((9, 200, 200), |_, _, _| 0);
        let p = extract_scoring_patch(&vol, (100, 100), 4, BoundaryPolicy::Reject).unwrap();
        assert!(p.voxels().iter().all(|&v| v == 0));
    }

    #[test]
    fn network_patch_channels_follow_slices() {
        let vol = volume_from((9, 200, 200), |s, _, _| (s as i16) * 10 - 40);
        let p = extract_network_patch(&vol, (100, 100), 4, BoundaryPolicy::Clamp).unwrap();
        assert_eq!(p.pixels.dim(), (161, 161, 3));
        for k in 0..3 {
            let want = f64::from((3 + k) as i16 * 10 - 40);
            assert!(p.pixels.index_axis(ndarray::Axis(2), k).iter().all(|&v| v == want));
        }
        assert_eq!(p.provenance.center_slice, 4);
    }

    #[test]
    fn first_slice_clamps_to_duplicate_channel() {
        let vol = volume_from((9, 200, 200), |s, r, c| (s * 100 + (r + c) % 50) as i16);
        let p = extract_network_patch(&vol, (100, 100), 0, BoundaryPolicy::Clamp).unwrap();
        let c0 = p.pixels.index_axis(ndarray::Axis(2), 0).to_owned();
        let c1 = p.pixels.index_axis(ndarray::Axis(2), 1).to_owned();
        assert_eq!(c0, c1);
        assert!(extract_network_patch(&vol, (100, 100), 0, BoundaryPolicy::Reject).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn extraction_shapes_and_purity(
            rows in 65usize..120, cols in 65usize..120, slices in 5usize..9,
            r_off in 0usize..1000, c_off in 0usize..1000, s_off in 0usize..1000,
        ) {
            let vol = volume_from((slices, rows, cols), |s, r, c| ((s * 31 + r * 7 + c * 3) % 900) as i16 - 100);
            let before = vol.clone();
            let r = 32 + r_off % (rows - 64);
            let c = 32 + c_off % (cols - 64);
            let s = 2 + s_off % (slices - 4);
            let a = extract_scoring_patch(&vol, (r, c), s, BoundaryPolicy::Reject).unwrap();
            let b = extract_scoring_patch(&vol, (r, c), s, BoundaryPolicy::Reject).unwrap();
            prop_assert_eq!(a.voxels().dim(), (5, 65, 65));
            prop_assert_eq!(&a, &b);
            let n = extract_network_patch(&vol, (r, c), s, BoundaryPolicy::Clamp).unwrap();
            prop_assert_eq!(n.pixels.dim(), (161, 161, 3));
            prop_assert_eq!(&vol, &before);
        }
    }
}
