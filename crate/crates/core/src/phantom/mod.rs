//! Synthetic cardiac CT cohorts with planted calcifications, analytic
//! ground-truth scores, subjective grades and labels drawn from a known
//! risk model.

mod dataset;
mod label;
mod params;
mod sample;

pub use dataset::{
    candidate_seed, generate_cohort, generate_cohort_with, generate_dataset, read_manifest, read_truth, subject_id,
    volume_path, write_manifest, ManifestRow, TruthRow, MANIFEST_FILE, MANIFEST_HEADER, TRUTH_FILE, VOLUME_DIR,
};
pub(crate) use dataset::write_csv;
pub use label::{agatston_norm, assign_grade, assign_label, noisy_grade, perturb_grade, risk_probability};
pub use params::{GradeModel, LabelModel, PhantomSpec};
pub use sample::{ground_truth_scores, generate_sample, PhantomSample, PlantedLesion, SOFT_TISSUE_MAX_HU};
