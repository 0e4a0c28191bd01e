//! Per-subject inputs shared by training and evaluation.

use crate::error::{Error, Result};
use crate::imaging::{extract_network_patch, extract_scoring_patch, BoundaryPolicy, CtVolume, PatchStack};
use crate::phantom::PhantomSample;
use crate::scoring::{score_patch, ScoreReport, ScoringParams};

/// A subject reduced to what the methods consume: the raw 161×161×3
/// network patch, measured calcium scores with the subjective grade, and
/// the survival label.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub patch: PatchStack,
    pub scores: ScoreReport,
    pub label: u8,
}

impl Subject {
    /// Extracts both patches around `center` (row, col, slice) and scores
    /// the calcium. Errors carry the subject id.
    pub fn from_volume(
        volume: &CtVolume,
        center: (usize, usize, usize),
        grade: u8,
        label: u8,
        params: &ScoringParams,
    ) -> Result<Subject> {
        let wrap = |e: Error| Error::Subject { subject: volume.id().to_string(), source: Box::new(e) };
        if label > 1 {
            return Err(wrap(Error::Argument(format!("label must be 0 or 1, got {label}"))));
        }
        let (row, col, slice) = center;
        let scoring = extract_scoring_patch(volume, (row, col), slice, BoundaryPolicy::Reject).map_err(wrap)?;
        let patch = extract_network_patch(volume, (row, col), slice, BoundaryPolicy::Reject).map_err(wrap)?;
        let scores = score_patch(&scoring, params).with_grade(Some(grade)).map_err(wrap)?;
        Ok(Subject { id: volume.id().to_string(), patch, scores, label })
    }

    pub fn from_sample(sample: &PhantomSample, params: &ScoringParams) -> Result<Subject> {
        Subject::from_volume(&sample.volume, sample.center, sample.grade(), sample.label, params)
    }

    pub fn grade(&self) -> u8 {
        self.scores.subjective_grade.unwrap_or(0)
    }
}
