mod common;

use cacrisk_core::imaging::{ScoringPatch, Spacing};
use cacrisk_core::scoring::{
    agatston_score, find_lesions, normalize_score, risk_category, score_patch, sqrt_volume_score, volume_score,
    CalciumMask, RiskCategory, ScoringParams,
};
use cacrisk_core::seed::rng_from_seed;
use common::oracles;
use ndarray::Array3;
use rand::Rng;

fn spacing_tuple(s: Spacing) -> (f64, f64, f64) {
    (s.x, s.y, s.z)
}

#[test]
fn agatston_and_volume_match_brute_force_on_random_masks() {
    let mut rng = rng_from_seed(2024);
    for case in 0..300 {
        let hu = common::random_calcium_grid(&mut rng);
        let spacing = Spacing::new(rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(1.0..3.0)).unwrap();
        let mask = CalciumMask::from_hu(hu.clone(), spacing, 130);
        let lesions = find_lesions(&mask, 1.0);
        let got = agatston_score(&lesions, spacing);
        let want = oracles::brute_agatston(&hu, spacing_tuple(spacing), 130, 1.0);
        assert!((got - want).abs() <= 1e-9 * want.max(1.0), "case {case}: {got} vs {want}");
        let v = volume_score(&mask);
        assert_eq!(v.to_bits(), oracles::brute_volume(&hu, spacing_tuple(spacing), 130).to_bits(), "case {case}");
    }
}

#[test]
fn lesions_partition_a_subset_of_the_mask() {
    let mut rng = rng_from_seed(7);
    for _ in 0..50 {
        let hu = common::random_calcium_grid(&mut rng);
        let mask = CalciumMask::from_hu(hu.clone(), Spacing::new(0.7, 0.7, 3.0).unwrap(), 130);
        let lesions = find_lesions(&mask, 0.0);
        let mut seen = vec![false; hu.len()];
        for l in &lesions {
            for &i in &l.voxels {
                assert!(!seen[i], "lesions overlap");
                seen[i] = true;
                assert!(mask.mask.as_slice().unwrap()[i]);
            }
        }
        // with no area floor the lesions are exactly the oracle's components
        let comps = oracles::components(&hu, 130);
        assert_eq!(lesions.len(), comps.len());
        assert_eq!(seen.iter().filter(|&&b| b).count(), mask.count());
        for w in lesions.windows(2) {
            assert!(w[0].len() >= w[1].len());
        }
    }
}

#[test]
fn report_volume_counts_retained_lesions_only() {
    let mut rng = rng_from_seed(11);
    for _ in 0..50 {
        let hu = common::random_calcium_grid(&mut rng);
        let spacing = Spacing::new(0.7, 0.7, 3.0).unwrap();
        let patch = ScoringPatch::new(hu.clone(), spacing).unwrap();
        let report = score_patch(&patch, &ScoringParams::default());
        let want = oracles::brute_retained_volume(&hu, spacing_tuple(spacing), 130, 1.0);
        assert!((report.volume_mm3 - want).abs() <= 1e-9 * want.max(1.0));
        assert!((report.sqrt_volume * report.sqrt_volume - report.volume_mm3).abs() <= 1e-9 * report.volume_mm3.max(1.0));
        assert_eq!(report.agatston == 0.0, report.volume_mm3 == 0.0);
        assert_eq!(report.risk_category, risk_category(report.agatston));
    }
}

fn block(hu_value: i16) -> Array3<i16> {
    let mut hu = Array3::from_elem((5, 65, 65), 0i16);
    for r in 10..13 {
        for c in 20..23 {
            hu[[2, r, c]] = hu_value;
        }
    }
    hu
}

#[test]
fn three_by_three_block_scores() {
    let spacing = Spacing::new(1.0, 1.0, 3.0).unwrap();
    for (hu, want) in [(250, 18.0), (450, 36.0)] {
        let grid = block(hu);
        let mask = CalciumMask::from_hu(grid.clone(), spacing, 130);
        assert_eq!(agatston_score(&find_lesions(&mask, 1.0), spacing), want);
        assert_eq!(oracles::brute_agatston(&grid, (1.0, 1.0, 3.0), 130, 1.0), want);
    }
}

#[test]
fn volume_examples() {
    let mut hu = Array3::from_elem((5, 65, 65), 0i16);
    for i in 0..10 {
        hu[[i % 5, 3 * i, 2 * i]] = 300;
    }
    let m = CalciumMask::from_hu(hu, Spacing::new(1.0, 1.0, 3.0).unwrap(), 130);
    assert_eq!(volume_score(&m), 30.0);
    let full = CalciumMask::from_hu(Array3::from_elem((5, 65, 65), 500), Spacing::new(1.0, 1.0, 1.0).unwrap(), 130);
    assert_eq!(volume_score(&full), 21125.0);
    assert!((sqrt_volume_score(30.0).unwrap() - 5.477225575).abs() < 1e-9);
    assert!(sqrt_volume_score(-1.0).is_err());
}

#[test]
fn scores_grow_with_the_mask() {
    let mut rng = rng_from_seed(99);
    let spacing = Spacing::new(0.7, 0.7, 3.0).unwrap();
    for _ in 0..40 {
        let small = common::random_calcium_grid(&mut rng);
        let mut big = small.clone();
        for v in big.iter_mut() {
            if *v < 130 && rng.gen_bool(0.01) {
                *v = rng.gen_range(130..500);
            }
        }
        let (ms, mb) = (CalciumMask::from_hu(small, spacing, 130), CalciumMask::from_hu(big, spacing, 130));
        assert!(volume_score(&mb) >= volume_score(&ms));
        assert!(agatston_score(&find_lesions(&mb, 1.0), spacing) >= agatston_score(&find_lesions(&ms, 1.0), spacing));
    }
}

#[test]
fn adding_one_voxel_adds_one_voxel_volume() {
    let spacing = Spacing::new(0.7, 0.7, 3.0).unwrap();
    let mut hu = block(300);
    let before = volume_score(&CalciumMask::from_hu(hu.clone(), spacing, 130));
    hu[[0, 60, 60]] = 131;
    let after = volume_score(&CalciumMask::from_hu(hu, spacing, 130));
    assert!((after - before - 0.7 * 0.7 * 3.0).abs() < 1e-12);
}

#[test]
fn category_boundaries_and_normalization() {
    assert_eq!(risk_category(0.0), RiskCategory::Zero);
    assert_eq!(risk_category(10.0), RiskCategory::I);
    assert_eq!(risk_category(10.000001), RiskCategory::II);
    assert_eq!(risk_category(500.0), RiskCategory::IV);
    let mut prev = RiskCategory::Zero;
    for i in 0..2000 {
        let c = risk_category(i as f64 * 0.37);
        assert!(c >= prev);
        prev = c;
    }
    assert_eq!(normalize_score(0.0, 0.0, 3.0).unwrap(), -1.0);
    assert_eq!(normalize_score(3.0, 0.0, 3.0).unwrap(), 1.0);
    assert_eq!(normalize_score(1.5, 0.0, 3.0).unwrap(), 0.0);
    assert_eq!(normalize_score(-4.0, 0.0, 3.0).unwrap(), -1.0);
    assert!(normalize_score(1.0, 3.0, 3.0).is_err());
}
