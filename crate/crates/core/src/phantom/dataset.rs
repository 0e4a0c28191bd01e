use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::PhantomSpec;
use super::sample::{generate_sample, PhantomSample};
use crate::error::{Error, Result};
use crate::net::NONSURVIVOR;
use crate::seed::{derive_seed, rng_from_seed};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const VOLUME_DIR: &str = "volumes";

/// Candidates generated per parallel batch while filling a cohort.
const CANDIDATE_BATCH: usize = 32;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub subject_id: String,
    /// Relative to the dataset directory.
    pub volume_file: String,
    pub center_row: usize,
    pub center_col: usize,
    pub center_slice: usize,
    pub grade: u8,
    pub gt_agatston: f64,
    pub gt_volume_mm3: f64,
    pub label: u8,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ManifestRow {
    pub fn from_sample(s: &PhantomSample) -> Self {
        ManifestRow {
            subject_id: s.id.clone(),
            volume_file: format!("{VOLUME_DIR}/{}.cacv", s.id),
            center_row: s.center.0,
            center_col: s.center.1,
            center_slice: s.center.2,
            grade: s.grade(),
            gt_agatston: s.gt_scores.agatston,
            gt_volume_mm3: s.gt_scores.volume_mm3,
            label: s.label,
            seed: Some(s.seed),
        }
    }

    pub fn center(&self) -> (usize, usize, usize) {
        (self.center_row, self.center_col, self.center_slice)
    }
}

/// Hidden generative quantities, kept out of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub subject_id: String,
    pub latent_factor: f64,
    pub risk_probability: f64,
    pub lesions: usize,
}

impl TruthRow {
    pub fn from_sample(s: &PhantomSample) -> Self {
        TruthRow {
            subject_id: s.id.clone(),
            latent_factor: s.latent_factor,
            risk_probability: s.risk_probability,
            lesions: s.lesions.len(),
        }
    }
}

/// Seed of the `index`-th candidate drawn for a cohort.
pub fn candidate_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &format!("phantom/candidate/{index}"))
}

pub fn subject_id(index: usize) -> String {
    format!("subj{index:04}")
}

/// Draws the cohort and hands each accepted sample to `keep`, in subject
/// order. Candidates are generated in parallel batches from per-candidate
/// seeds and accepted sequentially, so the result does not depend on the
/// number of threads. Balanced cohorts skip candidates whose class is full.
pub fn generate_cohort_with<T: Send>(
    spec: &PhantomSpec,
    keep: impl Fn(PhantomSample) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    spec.validate()?;
    let quota = spec.n_subjects / 2;
    let max_candidates = 1000 * spec.n_subjects.max(10);
    let mut out = Vec::with_capacity(spec.n_subjects);
    let mut per_class = [0usize; 2];
    let mut next = 0usize;
    while out.len() < spec.n_subjects {
        if next >= max_candidates {
            return Err(Error::Argument(format!(
                "balanced cohort not filled after {max_candidates} candidates; the label model is too one-sided"
            )));
        }
        let drawn: Vec<Result<PhantomSample>> = (next..next + CANDIDATE_BATCH)
            .into_par_iter()
            .map(|c| {
                let seed = candidate_seed(spec.seed, c);
                generate_sample(spec, &mut rng_from_seed(seed), "", seed)
            })
            .collect();
        next += CANDIDATE_BATCH;
        for sample in drawn {
            if out.len() == spec.n_subjects {
                break;
            }
            let mut sample = sample?;
            let class = usize::from(sample.label == NONSURVIVOR);
            if spec.balanced && per_class[class] == quota {
                continue;
            }
            per_class[class] += 1;
            sample.id = subject_id(out.len());
            sample.volume.set_id(&sample.id);
            out.push(sample);
        }
    }
    out.into_par_iter().map(&keep).collect()
}

pub fn generate_cohort(spec: &PhantomSpec) -> Result<Vec<PhantomSample>> {
    generate_cohort_with(spec, Ok)
}

/// Writes `volumes/<id>.cacv`, `manifest.csv` and `truth.csv` under `dir`.
pub fn generate_dataset(spec: &PhantomSpec, dir: &Path) -> Result<Vec<ManifestRow>> {
    let vol_dir = dir.join(VOLUME_DIR);
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let rows = generate_cohort_with(spec, |s| {
        let row = ManifestRow::from_sample(&s);
        s.volume.write_to(&dir.join(&row.volume_file))?;
        Ok((row, TruthRow::from_sample(&s)))
    })?;
    let (manifest, truth): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    write_csv(&dir.join(TRUTH_FILE), &TRUTH_HEADER, &truth)?;
    Ok(manifest)
}

pub const MANIFEST_HEADER: [&str; 10] = [
    "subject_id",
    "volume_file",
    "center_row",
    "center_col",
    "center_slice",
    "grade",
    "gt_agatston",
    "gt_volume_mm3",
    "label",
    "seed",
];
const TRUTH_HEADER: [&str; 4] = ["subject_id", "latent_factor", "risk_probability", "lesions"];

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    write_csv(path, &MANIFEST_HEADER, rows)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    read_csv(path)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    read_csv(path)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes a header line followed by one line per row. The header is
/// written even when there are no rows.
pub(crate) fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Absolute path of a manifest entry's volume.
pub fn volume_path(dataset: &Path, row: &ManifestRow) -> PathBuf {
    dataset.join(&row.volume_file)
}
