//! Coronary calcium quantification on 65×65×5 scoring patches: threshold
//! detection, lesion labeling, Agatston / volume / square-root volume
//! scores, risk categories and score rescaling for network input.

mod lesion;
mod mask;
mod score;

pub use lesion::{find_lesions, Lesion};
pub use mask::{detect_calcium, CalciumMask, DEFAULT_THRESHOLD_HU};
pub use score::{
    agatston_score, agatston_weight, normalize_score, risk_category, score_patch, sqrt_volume_score,
    volume_score, RiskCategory, ScoreReport, ScoringParams, DEFAULT_MIN_AREA_MM2,
};
