use ndarray::Array3;

use crate::imaging::{ScoringPatch, Spacing};

pub const DEFAULT_THRESHOLD_HU: i16 = 130;

/// Voxels at or above the calcium threshold. Keeps the source HU values so
/// lesion peaks can be read back without the patch.
#[derive(Debug, Clone, PartialEq)]
pub struct CalciumMask {
    /// `(slice, row, col)`; `true` iff `hu >= threshold_hu`.
    pub mask: Array3<bool>,
    pub hu: Array3<i16>,
    pub spacing: Spacing,
    pub threshold_hu: i16,
}

impl CalciumMask {
    /// Builds the mask of an arbitrary `(slice, row, col)` HU grid.
    pub fn from_hu(hu: Array3<i16>, spacing: Spacing, threshold_hu: i16) -> Self {
        let mask = hu.mapv(|v| v >= threshold_hu);
        CalciumMask { mask, hu, spacing, threshold_hu }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn detect_calcium(patch: &ScoringPatch, threshold_hu: i16) -> CalciumMask {
    CalciumMask::from_hu(patch.voxels().clone(), patch.spacing(), threshold_hu)
}
