mod common;

use std::fs;

use cacrisk_core::imaging::{extract_scoring_patch, BoundaryPolicy, CtVolume};
use cacrisk_core::phantom::{
    assign_grade, assign_label, generate_cohort, generate_cohort_with, generate_dataset, generate_sample,
    read_manifest, risk_probability, volume_path, LabelModel, PhantomSpec, MANIFEST_FILE,
};
use cacrisk_core::scoring::{score_patch, ScoringParams};
use cacrisk_core::seed::{rng_for, rng_from_seed};
use cacrisk_core::Subject;
use rand::Rng;

fn sample(spec: &PhantomSpec, i: u64) -> cacrisk_core::phantom::PhantomSample {
    generate_sample(spec, &mut rng_for(i, "phantom-test"), "s", i).unwrap()
}

#[test]
fn planted_ellipsoids_match_center_of_voxel_enumeration() {
    let spec = PhantomSpec { noise_sigma: 0.0, lesion_rate: 3.0, ..PhantomSpec::default() };
    let sp = spec.spacing;
    for i in 0..20 {
        let s = sample(&spec, i);
        let mut total = 0usize;
        for l in &s.lesions {
            // brute force over the whole grid
            let mut want = Vec::new();
            for z in 0..spec.slices {
                for r in 0..spec.rows {
                    for c in 0..spec.cols {
                        let d = [
                            (c as f64 * sp.x - l.center_mm[0]) / l.radii_mm[0],
                            (r as f64 * sp.y - l.center_mm[1]) / l.radii_mm[1],
                            (z as f64 * sp.z - l.center_mm[2]) / l.radii_mm[2],
                        ];
                        if d.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                            want.push([z, r, c]);
                        }
                    }
                }
            }
            assert_eq!(l.voxels, want);
            for v in &l.voxels {
                assert_eq!(s.volume.voxels()[*v], l.hu);
            }
            if l.retained(sp, 1.0) {
                total += l.voxels.len();
            }
        }
        assert_eq!(s.gt_scores.volume_mm3, total as f64 * sp.x * sp.y * sp.z);
        assert_eq!(s.gt_mask(&ScoringParams::default()).iter().filter(|&&b| b).count(), total);
    }
}

#[test]
fn scorer_reproduces_ground_truth_without_noise() {
    let spec = PhantomSpec { noise_sigma: 0.0, background_hu_std: 0.0, lesion_rate: 2.0, ..PhantomSpec::default() };
    for i in 0..100 {
        let s = sample(&spec, i);
        let subj = Subject::from_sample(&s, &ScoringParams::default()).unwrap();
        assert_eq!(subj.scores.agatston, s.gt_scores.agatston, "sample {i}");
        assert_eq!(subj.scores.volume_mm3, s.gt_scores.volume_mm3, "sample {i}");
    }
}

#[test]
fn scorer_stays_within_five_percent_under_noise() {
    let spec = PhantomSpec { noise_sigma: 20.0, lesion_hu: (200, 600), ..PhantomSpec::default() };
    let cohort = generate_cohort_with(&PhantomSpec { n_subjects: 500, balanced: false, seed: 3, ..spec }, |s| {
        let got = Subject::from_sample(&s, &ScoringParams::default())?.scores.agatston;
        Ok((got, s.gt_scores.agatston))
    })
    .unwrap();
    let mut nonzero = 0;
    for (got, want) in cohort {
        if want == 0.0 {
            assert_eq!(got, 0.0);
        } else {
            nonzero += 1;
            assert!((got - want).abs() <= 0.05 * want, "{got} vs {want}");
        }
    }
    assert!(nonzero > 200);
}

#[test]
fn zero_rate_and_repeatability() {
    let spec = PhantomSpec { lesion_rate: 0.0, ..PhantomSpec::default() };
    let s = sample(&spec, 1);
    assert_eq!(s.gt_scores.agatston, 0.0);
    assert!(s.gt_mask(&ScoringParams::default()).iter().all(|&b| !b));
    let d = PhantomSpec::default();
    assert_eq!(sample(&d, 9), sample(&d, 9));
}

#[test]
fn grade_decision_table() {
    let cut = [10.0, 100.0, 400.0];
    assert_eq!(assign_grade(0.0, cut).unwrap(), 0);
    assert_eq!(assign_grade(50.0, cut).unwrap(), 2);
    let mut prev = 0;
    for i in 0..5000 {
        let g = assign_grade(i as f64 * 0.2, cut).unwrap();
        assert!(g >= prev);
        prev = g;
    }
    assert!(assign_grade(5.0, [10.0, 5.0, 400.0]).is_err());
}

#[test]
fn label_rate_matches_mean_probability() {
    let model = LabelModel::default();
    let mut rng = rng_from_seed(77);
    let n = 10_000;
    let (mut hits, mut mean_p, mut var) = (0usize, 0.0, 0.0);
    for _ in 0..n {
        let a = if rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..800.0) };
        let latent = rng.gen_range(-1.0..=1.0);
        let p = risk_probability(a, latent, &model);
        mean_p += p;
        var += p * (1.0 - p);
        hits += usize::from(assign_label(a, latent, &model, &mut rng));
    }
    let sigma = var.sqrt();
    assert!((hits as f64 - mean_p).abs() <= 3.0 * sigma, "{hits} vs {mean_p} ± {sigma}");
}

#[test]
fn label_model_limits() {
    let flat = LabelModel { a: 0.0, b: 0.0, bias: 0.0, ..LabelModel::default() };
    for a in [0.0, 5.0, 1000.0] {
        assert_eq!(risk_probability(a, 0.7, &flat), 0.5);
    }
    let steep = LabelModel { a: 1e6, b: 0.0, ..LabelModel::default() };
    assert_eq!(risk_probability(5000.0, 0.0, &steep), 1.0);
    assert_eq!(risk_probability(0.0, 0.0, &steep), 0.0);
}

#[test]
fn balanced_cohort_is_exactly_half_and_half() {
    let cohort = generate_cohort(&PhantomSpec { n_subjects: 180, seed: 12, ..PhantomSpec::default() }).unwrap();
    assert_eq!(cohort.len(), 180);
    assert_eq!(cohort.iter().filter(|s| s.label == 1).count(), 90);
}

#[test]
fn dataset_is_reproducible_and_consistent_with_the_scorer() {
    let spec = PhantomSpec { n_subjects: 16, seed: 5, ..PhantomSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let rows = generate_dataset(&spec, a.path()).unwrap();
    generate_dataset(&spec, b.path()).unwrap();
    assert_eq!(fs::read(a.path().join(MANIFEST_FILE)).unwrap(), fs::read(b.path().join(MANIFEST_FILE)).unwrap());
    let header = fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
    assert!(header.starts_with(
        "subject_id,volume_file,center_row,center_col,center_slice,grade,gt_agatston,gt_volume_mm3,label"
    ));
    let read = read_manifest(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(read, rows);
    assert_eq!(read.iter().filter(|r| r.label == 1).count(), 8);
    for row in &read {
        let path = volume_path(a.path(), row);
        assert_eq!(fs::read(&path).unwrap(), fs::read(volume_path(b.path(), row)).unwrap());
        let vol = CtVolume::read_from(&path, &row.subject_id).unwrap();
        let patch =
            extract_scoring_patch(&vol, (row.center_row, row.center_col), row.center_slice, BoundaryPolicy::Reject)
                .unwrap();
        let r = score_patch(&patch, &ScoringParams::default());
        assert_eq!(r.agatston, row.gt_agatston, "{}", row.subject_id);
        assert_eq!(r.volume_mm3, row.gt_volume_mm3, "{}", row.subject_id);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(PhantomSpec { n_subjects: 7, ..PhantomSpec::default() }.validate().is_err());
    assert!(PhantomSpec { lesion_rate: -1.0, ..PhantomSpec::default() }.validate().is_err());
    assert!(PhantomSpec { lesion_hu: (300, 300), ..PhantomSpec::default() }.validate().is_err());
}
