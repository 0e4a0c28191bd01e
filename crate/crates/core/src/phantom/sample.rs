use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::label::{assign_label, noisy_grade, risk_probability};
use super::params::PhantomSpec;
use crate::error::{Error, Result};
use crate::imaging::{CtVolume, Spacing, HU_MIN};
use crate::net::NONSURVIVOR;
use crate::scoring::{agatston_weight, risk_category, ScoreReport, ScoringParams};

/// Soft tissue is kept strictly below the default calcium threshold, so
/// every voxel at or above it belongs to a planted lesion.
pub const SOFT_TISSUE_MAX_HU: i16 = 129;

/// Attempts at placing one lesion without touching the others before it is
/// dropped.
const PLACEMENT_ATTEMPTS: usize = 32;

/// One planted ellipsoid and the voxels whose centers it contains.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedLesion {
    /// Center in millimetres as (x, y, z) = (col, row, slice) × spacing.
    pub center_mm: [f64; 3],
    /// Semi-axes in millimetres along x, y, z.
    pub radii_mm: [f64; 3],
    pub hu: i16,
    /// `(slice, row, col)` in ascending order.
    pub voxels: Vec<[usize; 3]>,
}

impl PlantedLesion {
    /// Voxels on each slice the lesion touches, ascending by slice.
    pub fn slice_counts(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for v in &self.voxels {
            match out.last_mut() {
                Some((s, n)) if *s == v[0] => *n += 1,
                _ => out.push((v[0], 1)),
            }
        }
        out
    }

    /// Whether the scorer keeps this lesion: its largest slice cross-section
    /// reaches the minimum area.
    pub fn retained(&self, spacing: Spacing, min_area_mm2: f64) -> bool {
        let max = self.slice_counts().iter().map(|&(_, n)| n).max().unwrap_or(0);
        max as f64 * spacing.pixel_area() >= min_area_mm2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSample {
    pub id: String,
    pub volume: CtVolume,
    /// `(row, col, slice)` around which both patches are extracted.
    pub center: (usize, usize, usize),
    pub lesions: Vec<PlantedLesion>,
    /// Scores computed from the planted geometry, with the noisy grade.
    pub gt_scores: ScoreReport,
    /// Non-calcium risk factor in [-1, 1], visible as ring texture.
    pub latent_factor: f64,
    pub risk_probability: f64,
    pub label: u8,
    /// Seed this sample was generated from.
    pub seed: u64,
}

impl PhantomSample {
    /// Voxels of all lesions the scorer retains.
    pub fn gt_mask(&self, params: &ScoringParams) -> Array3<bool> {
        let mut mask = Array3::from_elem(self.volume.voxels().dim(), false);
        let spacing = self.volume.spacing();
        for l in self.lesions.iter().filter(|l| l.retained(spacing, params.min_area_mm2)) {
            for v in &l.voxels {
                mask[*v] = true;
            }
        }
        mask
    }

    pub fn grade(&self) -> u8 {
        self.gt_scores.subjective_grade.expect("phantom samples are graded")
    }

    pub fn is_nonsurvivor(&self) -> bool {
        self.label == NONSURVIVOR
    }
}

/// Scores implied by planted lesions: per slice, voxel count × the density
/// weight of the lesion HU, for every lesion passing the minimum-area rule.
pub fn ground_truth_scores(lesions: &[PlantedLesion], spacing: Spacing, params: &ScoringParams) -> ScoreReport {
    let mut weighted = 0u64;
    let mut voxels = 0usize;
    for l in lesions.iter().filter(|l| l.retained(spacing, params.min_area_mm2)) {
        let w = if l.hu >= params.threshold_hu { agatston_weight(l.hu) } else { 0 };
        weighted += l.voxels.len() as u64 * w;
        voxels += l.voxels.len();
    }
    let agatston = weighted as f64 * spacing.pixel_area() * (spacing.z / 3.0);
    let volume_mm3 = voxels as f64 * spacing.x * spacing.y * spacing.z;
    ScoreReport {
        agatston,
        risk_category: risk_category(agatston),
        volume_mm3,
        sqrt_volume: volume_mm3.sqrt(),
        subjective_grade: None,
    }
}

/// Voxel centers inside the ellipsoid, clipped to the grid.
fn rasterize(center: [f64; 3], radii: [f64; 3], dims: (usize, usize, usize), spacing: Spacing) -> Vec<[usize; 3]> {
    let (ns, nr, nc) = dims;
    let step = [spacing.x, spacing.y, spacing.z];
    let bounds = |axis: usize, len: usize| {
        let lo = ((center[axis] - radii[axis]) / step[axis]).ceil().max(0.0) as usize;
        let hi = ((center[axis] + radii[axis]) / step[axis]).floor();
        let hi = if hi < 0.0 { return None } else { (hi as usize).min(len - 1) };
        (lo <= hi).then_some((lo, hi))
    };
    let (Some((c0, c1)), Some((r0, r1)), Some((s0, s1))) = (bounds(0, nc), bounds(1, nr), bounds(2, ns)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for s in s0..=s1 {
        let dz = (s as f64 * spacing.z - center[2]) / radii[2];
        for r in r0..=r1 {
            let dy = (r as f64 * spacing.y - center[1]) / radii[1];
            for c in c0..=c1 {
                let dx = (c as f64 * spacing.x - center[0]) / radii[0];
                if dx * dx + dy * dy + dz * dz <= 1.0 {
                    out.push([s, r, c]);
                }
            }
        }
    }
    out
}

/// True if any voxel is occupied or 26-adjacent to an occupied voxel.
fn touches(occupied: &Array3<bool>, voxels: &[[usize; 3]]) -> bool {
    let (ns, nr, nc) = occupied.dim();
    voxels.iter().any(|&[s, r, c]| {
        (s.saturating_sub(1)..=(s + 1).min(ns - 1)).any(|ss| {
            (r.saturating_sub(1)..=(r + 1).min(nr - 1))
                .any(|rr| (c.saturating_sub(1)..=(c + 1).min(nc - 1)).any(|cc| occupied[[ss, rr, cc]]))
        })
    })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..hi)
}

/// Draws one subject. Randomness is consumed in a fixed order: latent
/// factor, tissue level, center, lesions, voxel noise, grade, label.
pub fn generate_sample<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R, id: &str, seed: u64) -> Result<PhantomSample> {
    spec.validate()?;
    let sp = spec.spacing;
    let dims = (spec.slices, spec.rows, spec.cols);

    let latent_factor = rng.gen_range(-1.0..=1.0);
    let tissue = spec.background_hu_mean + spec.background_hu_std * rng.sample::<f64, _>(rand_distr::StandardNormal);
    let jitter = spec.center_jitter as i64;
    let center_row = (spec.rows / 2) as i64 + rng.gen_range(-jitter..=jitter);
    let center_col = (spec.cols / 2) as i64 + rng.gen_range(-jitter..=jitter);
    let center = (center_row as usize, center_col as usize, spec.center_slice());

    let count = if spec.lesion_rate > 0.0 {
        let d = Poisson::new(spec.lesion_rate).map_err(|e| Error::Argument(format!("lesion rate: {e}")))?;
        d.sample(rng) as usize
    } else {
        0
    };
    let mut occupied = Array3::from_elem(dims, false);
    let mut lesions = Vec::with_capacity(count);
    for _ in 0..count {
        let radii_mm = [
            uniform(rng, spec.lesion_radius_mm),
            uniform(rng, spec.lesion_radius_mm),
            uniform(rng, spec.lesion_radius_mm),
        ];
        let hu = rng.gen_range(spec.lesion_hu.0..=spec.lesion_hu.1);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let (dx, dy) = loop {
                let dx = rng.gen_range(-1.0..=1.0);
                let dy = rng.gen_range(-1.0..=1.0);
                if dx * dx + dy * dy <= 1.0 {
                    break (dx * spec.lesion_spread_mm, dy * spec.lesion_spread_mm);
                }
            };
            let spread = spec.lesion_slice_spread as i64;
            let slice = center.2 as i64 + rng.gen_range(-spread..=spread);
            let center_mm = [center.1 as f64 * sp.x + dx, center.0 as f64 * sp.y + dy, slice as f64 * sp.z];
            let voxels = rasterize(center_mm, radii_mm, dims, sp);
            if voxels.is_empty() || touches(&occupied, &voxels) {
                continue;
            }
            for v in &voxels {
                occupied[*v] = true;
            }
            lesions.push(PlantedLesion { center_mm, radii_mm, hu, voxels });
            break;
        }
    }

    // Concentric rings about the center, strength growing with the latent
    // factor, modulating the soft tissue multiplicatively.
    let depth = spec.texture_contrast * (1.0 + latent_factor) / 2.0;
    let omega = 2.0 * std::f64::consts::PI / spec.texture_period_mm;
    let modulation: Vec<f64> = (0..spec.rows * spec.cols)
        .map(|i| {
            let dy = (i / spec.cols) as f64 * sp.y - center.0 as f64 * sp.y;
            let dx = (i % spec.cols) as f64 * sp.x - center.1 as f64 * sp.x;
            1.0 + depth * (omega * dx.hypot(dy)).cos()
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Argument(format!("noise sigma: {e}")))?;
    let plane = spec.rows * spec.cols;
    let mut voxels = Array3::<i16>::zeros(dims);
    for (i, v) in voxels.as_slice_mut().expect("standard layout").iter_mut().enumerate() {
        let hu = (tissue + noise.sample(rng) + 1000.0) * modulation[i % plane] - 1000.0;
        *v = hu.round().clamp(f64::from(HU_MIN), f64::from(SOFT_TISSUE_MAX_HU)) as i16;
    }
    for l in &lesions {
        for v in &l.voxels {
            voxels[*v] = l.hu;
        }
    }
    let volume = CtVolume::new(id, voxels, sp)?;

    let gt = ground_truth_scores(&lesions, sp, &spec.scoring);
    let grade = noisy_grade(gt.agatston, &spec.grade, rng)?;
    let gt_scores = gt.with_grade(Some(grade))?;
    let p = risk_probability(gt_scores.agatston, latent_factor, &spec.label);
    let label = assign_label(gt_scores.agatston, latent_factor, &spec.label, rng);
    Ok(PhantomSample {
        id: id.to_string(),
        volume,
        center,
        lesions,
        gt_scores,
        latent_factor,
        risk_probability: p,
        label,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn spacing() -> Spacing {
        Spacing { x: 0.7, y: 0.7, z: 3.0 }
    }

    #[test]
    fn rasterization_uses_voxel_centers() {
        // A sphere of radius 1 mm centred on a voxel of a 1 mm grid holds
        // the centre and its six face neighbours.
        let sp = Spacing { x: 1.0, y: 1.0, z: 1.0 };
        let v = rasterize([5.0, 5.0, 5.0], [1.0, 1.0, 1.0], (11, 11, 11), sp);
        assert_eq!(v.len(), 7);
        let v = rasterize([5.0, 5.0, 5.0], [1.5, 1.5, 1.5], (11, 11, 11), sp);
        assert_eq!(v.len(), 19);
    }

    #[test]
    fn rasterization_clips_at_the_grid_edge() {
        let sp = Spacing { x: 1.0, y: 1.0, z: 1.0 };
        let v = rasterize([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], (5, 5, 5), sp);
        assert_eq!(v.len(), 4);
        assert!(rasterize([-5.0, 0.0, 0.0], [1.0, 1.0, 1.0], (5, 5, 5), sp).is_empty());
    }

    #[test]
    fn touching_includes_diagonal_neighbours() {
        let mut occ = Array3::from_elem((3, 3, 3), false);
        occ[[0, 0, 0]] = true;
        assert!(touches(&occ, &[[1, 1, 1]]));
        assert!(!touches(&occ, &[[2, 2, 2]]));
    }

    #[test]
    fn zero_rate_gives_empty_ground_truth() {
        let spec = PhantomSpec { lesion_rate: 0.0, ..PhantomSpec::default() };
        let s = generate_sample(&spec, &mut rng_for(1, "s"), "x", 1).unwrap();
        assert!(s.lesions.is_empty());
        assert_eq!(s.gt_scores.agatston, 0.0);
        assert_eq!(s.gt_scores.volume_mm3, 0.0);
        assert!(!s.gt_mask(&spec.scoring).iter().any(|&b| b));
        assert!(s.volume.voxels().iter().all(|&v| v <= SOFT_TISSUE_MAX_HU));
    }

    #[test]
    fn same_seed_same_sample() {
        let spec = PhantomSpec::default();
        let a = generate_sample(&spec, &mut rng_for(9, "s"), "x", 9).unwrap();
        let b = generate_sample(&spec, &mut rng_for(9, "s"), "x", 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lesions_do_not_touch_and_stay_near_the_center() {
        let spec = PhantomSpec { lesion_rate: 6.0, ..PhantomSpec::default() };
        for i in 0..20 {
            let s = generate_sample(&spec, &mut rng_for(i, "s"), "x", i).unwrap();
            let mut occ = Array3::from_elem(s.volume.voxels().dim(), false);
            for l in &s.lesions {
                assert!(!touches(&occ, &l.voxels));
                for v in &l.voxels {
                    occ[*v] = true;
                    assert!(v[0].abs_diff(s.center.2) <= 1);
                    assert!(v[1].abs_diff(s.center.0) <= 32 && v[2].abs_diff(s.center.1) <= 32);
                }
            }
        }
    }

    #[test]
    fn ground_truth_weights_and_min_area() {
        let sp = spacing();
        let lesion = |n: usize, hu: i16| PlantedLesion {
            center_mm: [0.0; 3],
            radii_mm: [1.0; 3],
            hu,
            voxels: (0..n).map(|i| [0, 0, i]).collect(),
        };
        let params = ScoringParams::default();
        // 2 pixels = 0.98 mm², below the 1 mm² minimum; 3 pixels pass.
        let gt = ground_truth_scores(&[lesion(2, 500), lesion(3, 350)], sp, &params);
        assert_eq!(gt.agatston, (3 * 3) as f64 * sp.pixel_area());
        assert_eq!(gt.volume_mm3, 3.0 * 0.7 * 0.7 * 3.0);
    }
}
