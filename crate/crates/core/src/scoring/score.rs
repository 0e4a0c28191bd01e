use std::fmt;

use super::lesion::{find_lesions, Lesion};
use super::mask::{detect_calcium, CalciumMask, DEFAULT_THRESHOLD_HU};
use crate::error::{Error, Result};
use crate::imaging::{ScoringPatch, Spacing};

pub const DEFAULT_MIN_AREA_MM2: f64 = 1.0;

/// Reference slice thickness of the Agatston method.
const AGATSTON_SLICE_MM: f64 = 3.0;

/// Density weight from a lesion's peak HU on one slice.
pub fn agatston_weight(peak_hu: i16) -> u64 {
    match peak_hu {
        i16::MIN..=129 => 0,
        130..=199 => 1,
        200..=299 => 2,
        300..=399 => 3,
        _ => 4,
    }
}

/// Σ over lesions and slices of `area × weight(slice peak)`, scaled by
/// `z / 3 mm`. The weighted pixel count is accumulated as an integer so
/// the result does not depend on lesion order.
pub fn agatston_score(lesions: &[Lesion], spacing: Spacing) -> f64 {
    let weighted: u64 = lesions
        .iter()
        .flat_map(|l| l.slice_counts.iter().zip(&l.slice_peaks))
        .filter_map(|(&n, peak)| peak.map(|p| n as u64 * agatston_weight(p)))
        .sum();
    weighted as f64 * spacing.pixel_area() * (spacing.z / AGATSTON_SLICE_MM)
}

/// Calcified volume in mm³: voxel count × x × y × z.
pub fn volume_score(mask: &CalciumMask) -> f64 {
    mask.count() as f64 * mask.spacing.x * mask.spacing.y * mask.spacing.z
}

pub fn sqrt_volume_score(volume_mm3: f64) -> Result<f64> {
    if !(volume_mm3 >= 0.0) {
        return Err(Error::Argument(format!("volume must be >= 0, got {volume_mm3}")));
    }
    Ok(volume_mm3.sqrt())
}

/// Conventional Agatston risk groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RiskCategory {
    Zero,
    I,
    II,
    III,
    IV,
}

impl RiskCategory {
    pub fn index(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for RiskCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RiskCategory::Zero => "0",
            RiskCategory::I => "I",
            RiskCategory::II => "II",
            RiskCategory::III => "III",
            RiskCategory::IV => "IV",
        };
        f.write_str(s)
    }
}

/// 0 → `Zero`, (0, 10] → I, (10, 100] → II, (100, 400] → III, above → IV.
pub fn risk_category(agatston: f64) -> RiskCategory {
    if agatston <= 0.0 {
        RiskCategory::Zero
    } else if agatston <= 10.0 {
        RiskCategory::I
    } else if agatston <= 100.0 {
        RiskCategory::II
    } else if agatston <= 400.0 {
        RiskCategory::III
    } else {
        RiskCategory::IV
    }
}

/// Affine map of `[min, max]` onto `[-1, 1]`; inputs outside are clamped.
pub fn normalize_score(score: f64, min: f64, max: f64) -> Result<f64> {
    if !(min < max) || !min.is_finite() || !max.is_finite() {
        return Err(Error::Argument(format!("normalization range needs min < max, got ({min}, {max})")));
    }
    if score.is_nan() {
        return Err(Error::Argument("cannot normalize NaN score".into()));
    }
    let s = score.clamp(min, max);
    if s == min {
        return Ok(-1.0);
    }
    if s == max {
        return Ok(1.0);
    }
    Ok((2.0 * (s - min) / (max - min) - 1.0).clamp(-1.0, 1.0))
}

/// Every calcium quantity reported for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub agatston: f64,
    pub risk_category: RiskCategory,
    pub volume_mm3: f64,
    pub sqrt_volume: f64,
    pub subjective_grade: Option<u8>,
}

impl ScoreReport {
    pub fn with_grade(mut self, grade: Option<u8>) -> Result<Self> {
        if let Some(g) = grade {
            if g > 3 {
                return Err(Error::Argument(format!("subjective grade must be 0..=3, got {g}")));
            }
        }
        self.subjective_grade = grade;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoringParams {
    pub threshold_hu: i16,
    pub min_area_mm2: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams { threshold_hu: DEFAULT_THRESHOLD_HU, min_area_mm2: DEFAULT_MIN_AREA_MM2 }
    }
}

/// Runs detection, labeling and all scores on one patch.
pub fn score_patch(patch: &ScoringPatch, params: &ScoringParams) -> ScoreReport {
    score_mask(&detect_calcium(patch, params.threshold_hu), params.min_area_mm2)
}

/// Volume counts only voxels of retained lesions, so specks below the
/// minimum area contribute to neither score.
pub(crate) fn score_mask(mask: &CalciumMask, min_area_mm2: f64) -> ScoreReport {
    let lesions = find_lesions(mask, min_area_mm2);
    let agatston = agatston_score(&lesions, mask.spacing);
    let mut retained = mask.clone();
    retained.mask.fill(false);
    {
        let flags = retained.mask.as_slice_mut().expect("standard layout");
        for idx in lesions.iter().flat_map(|l| l.voxels.iter()) {
            flags[*idx] = true;
        }
    }
    let volume_mm3 = volume_score(&retained);
    ScoreReport {
        agatston,
        risk_category: risk_category(agatston),
        volume_mm3,
        sqrt_volume: volume_mm3.sqrt(),
        subjective_grade: None,
    }
}
