use crate::error::{Error, Result};
use crate::imaging::{Spacing, NETWORK_PATCH_SIDE, SCORING_PATCH_SIDE, SCORING_PATCH_SLICES};
use crate::scoring::ScoringParams;

/// Risk model generating survival labels:
/// `p = sigmoid(a · agatston_norm + b · latent + bias)` with
/// `agatston_norm = normalize(ln(1 + A), 0, ln(1 + agatston_ref))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelModel {
    pub a: f64,
    pub b: f64,
    pub bias: f64,
    /// Agatston value mapped to +1; larger scores saturate.
    pub agatston_ref: f64,
}

impl Default for LabelModel {
    fn default() -> Self {
        LabelModel { a: 2.0, b: 2.0, bias: 0.0, agatston_ref: 100.0 }
    }
}

/// Subjective grading: buckets of the Agatston score plus reader noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradeModel {
    pub cutpoints: [f64; 3],
    /// Probability that the grade is moved one step up or down.
    pub flip_probability: f64,
}

impl Default for GradeModel {
    fn default() -> Self {
        GradeModel { cutpoints: [10.0, 100.0, 400.0], flip_probability: 0.1 }
    }
}

/// Everything that determines a synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub n_subjects: usize,
    /// Equal numbers of survivors and nonsurvivors.
    pub balanced: bool,
    pub rows: usize,
    pub cols: usize,
    pub slices: usize,
    pub spacing: Spacing,
    /// Maximum in-plane displacement (pixels) of the recorded center from
    /// the volume middle.
    pub center_jitter: usize,
    /// Soft-tissue level; each subject draws its own mean around it.
    pub background_hu_mean: f64,
    pub background_hu_std: f64,
    /// Per-voxel Gaussian noise of the soft tissue.
    pub noise_sigma: f64,
    /// Poisson rate of the number of lesions.
    pub lesion_rate: f64,
    /// Semi-axis range, drawn independently per axis.
    pub lesion_radius_mm: (f64, f64),
    pub lesion_hu: (i16, i16),
    /// Maximum in-plane distance of a lesion center from the recorded center.
    pub lesion_spread_mm: f64,
    /// Lesion centers lie on slices `center ± lesion_slice_spread`.
    pub lesion_slice_spread: usize,
    /// Peak relative amplitude of the ring texture at latent factor +1.
    pub texture_contrast: f64,
    pub texture_period_mm: f64,
    pub label: LabelModel,
    pub grade: GradeModel,
    pub scoring: ScoringParams,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_subjects: 180,
            balanced: true,
            rows: 200,
            cols: 200,
            slices: 9,
            spacing: Spacing { x: 0.7, y: 0.7, z: 3.0 },
            center_jitter: 8,
            background_hu_mean: -60.0,
            background_hu_std: 8.0,
            noise_sigma: 12.0,
            lesion_rate: 1.0,
            lesion_radius_mm: (1.0, 3.0),
            lesion_hu: (200, 600),
            lesion_spread_mm: 8.0,
            lesion_slice_spread: 1,
            texture_contrast: 0.1,
            texture_period_mm: 20.0,
            label: LabelModel::default(),
            grade: GradeModel::default(),
            scoring: ScoringParams::default(),
            seed: 0,
        }
    }
}

fn range_ok(lo: f64, hi: f64) -> bool {
    lo.is_finite() && hi.is_finite() && lo < hi
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(m));
        self.spacing.validate()?;
        if self.n_subjects == 0 {
            return fail("n_subjects must be >= 1".into());
        }
        if self.balanced && self.n_subjects % 2 != 0 {
            return fail(format!("balanced cohort needs an even subject count, got {}", self.n_subjects));
        }
        if !(self.lesion_rate >= 0.0 && self.lesion_rate.is_finite()) {
            return fail(format!("lesion rate must be >= 0, got {}", self.lesion_rate));
        }
        let (rlo, rhi) = self.lesion_radius_mm;
        if !range_ok(rlo, rhi) || rlo <= 0.0 {
            return fail(format!("lesion radius range must satisfy 0 < min < max, got ({rlo}, {rhi})"));
        }
        let (hlo, hhi) = self.lesion_hu;
        if hlo >= hhi || hlo < self.scoring.threshold_hu {
            return fail(format!(
                "lesion HU range must be increasing and above the {} HU threshold, got ({hlo}, {hhi})",
                self.scoring.threshold_hu
            ));
        }
        if !(self.background_hu_std >= 0.0 && self.noise_sigma >= 0.0 && self.lesion_spread_mm >= 0.0) {
            return fail("standard deviations and spreads must be >= 0".into());
        }
        if !(self.background_hu_mean.is_finite() && self.background_hu_mean < f64::from(self.scoring.threshold_hu)) {
            return fail("background mean must lie below the calcium threshold".into());
        }
        if !(0.0..1.0).contains(&self.texture_contrast) || !(self.texture_period_mm > 0.0) {
            return fail("texture contrast must lie in [0, 1) and the period must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.grade.flip_probability) {
            return fail("grade flip probability must lie in [0, 1]".into());
        }
        let c = self.grade.cutpoints;
        if !(c[0] < c[1] && c[1] < c[2]) {
            return fail(format!("grade cutpoints must be strictly increasing, got {c:?}"));
        }
        if !(self.label.agatston_ref > 0.0) || ![self.label.a, self.label.b, self.label.bias].iter().all(|v| v.is_finite())
        {
            return fail("label model needs finite coefficients and a positive reference score".into());
        }
        // Both patch kinds must fit around every possible center, and every
        // lesion must lie inside the scoring window.
        let half_net = NETWORK_PATCH_SIDE / 2;
        for (axis, len) in [("rows", self.rows), ("cols", self.cols)] {
            if len < 2 * (half_net + self.center_jitter) + 1 {
                return fail(format!("{axis} = {len} is too small for a {NETWORK_PATCH_SIDE}-pixel patch with jitter"));
            }
        }
        if self.slices < SCORING_PATCH_SLICES {
            return fail(format!("need at least {SCORING_PATCH_SLICES} slices, got {}", self.slices));
        }
        let reach_px = (self.lesion_spread_mm + rhi) / self.spacing.x.min(self.spacing.y);
        if reach_px.ceil() as usize > SCORING_PATCH_SIDE / 2 {
            return fail(format!(
                "lesions may reach {reach_px:.1} pixels from the center, beyond the scoring window"
            ));
        }
        let reach_slices = self.lesion_slice_spread as f64 + rhi / self.spacing.z;
        if reach_slices.floor() as usize > SCORING_PATCH_SLICES / 2 {
            return fail(format!("lesions may reach {reach_slices:.2} slices from the center, beyond the scoring window"));
        }
        Ok(())
    }

    /// Recorded center slice.
    pub fn center_slice(&self) -> usize {
        self.slices / 2
    }
}
