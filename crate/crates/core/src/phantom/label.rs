use rand::Rng;

use super::params::{GradeModel, LabelModel};
use crate::error::{Error, Result};
use crate::net::{NONSURVIVOR, SURVIVOR};
use crate::scoring::normalize_score;

/// 0 for no calcium; otherwise 1 + the number of cutpoints the score
/// exceeds, capped at 3 (so the defaults give the risk categories with
/// III and IV merged into "severe").
pub fn assign_grade(agatston: f64, cutpoints: [f64; 3]) -> Result<u8> {
    if !(cutpoints[0] < cutpoints[1] && cutpoints[1] < cutpoints[2]) {
        return Err(Error::Argument(format!("grade cutpoints must be strictly increasing, got {cutpoints:?}")));
    }
    if agatston.is_nan() || agatston < 0.0 {
        return Err(Error::Argument(format!("Agatston score must be >= 0, got {agatston}")));
    }
    if agatston == 0.0 {
        return Ok(0);
    }
    let exceeded = cutpoints.iter().filter(|&&c| agatston > c).count() as u8;
    Ok((1 + exceeded).min(3))
}

/// Moves `grade` one step with probability `p`, direction chosen at random
/// and reflected at the ends of the 0..=3 scale.
pub fn perturb_grade<R: Rng + ?Sized>(grade: u8, p: f64, rng: &mut R) -> u8 {
    let flip = rng.gen::<f64>() < p;
    let up = rng.gen::<bool>();
    if !flip {
        return grade;
    }
    match (grade, up) {
        (0, _) => 1,
        (3, _) => 2,
        (g, true) => g + 1,
        (g, false) => g - 1,
    }
}

/// Bucketed grade with reader noise.
pub fn noisy_grade<R: Rng + ?Sized>(agatston: f64, model: &GradeModel, rng: &mut R) -> Result<u8> {
    Ok(perturb_grade(assign_grade(agatston, model.cutpoints)?, model.flip_probability, rng))
}

/// Agatston score mapped to [-1, 1] on a log scale.
pub fn agatston_norm(agatston: f64, model: &LabelModel) -> f64 {
    normalize_score(agatston.ln_1p(), 0.0, model.agatston_ref.ln_1p()).expect("validated reference")
}

/// Probability of nonsurvival under the label model.
pub fn risk_probability(agatston: f64, latent: f64, model: &LabelModel) -> f64 {
    let z = model.a * agatston_norm(agatston, model) + model.b * latent + model.bias;
    1.0 / (1.0 + (-z).exp())
}

/// Bernoulli draw of the survival label.
pub fn assign_label<R: Rng + ?Sized>(agatston: f64, latent: f64, model: &LabelModel, rng: &mut R) -> u8 {
    if rng.gen::<f64>() < risk_probability(agatston, latent, model) {
        NONSURVIVOR
    } else {
        SURVIVOR
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    const DEFAULTS: [f64; 3] = [10.0, 100.0, 400.0];

    #[test]
    fn grade_buckets() {
        assert_eq!(assign_grade(0.0, DEFAULTS).unwrap(), 0);
        assert_eq!(assign_grade(0.5, DEFAULTS).unwrap(), 1);
        assert_eq!(assign_grade(10.0, DEFAULTS).unwrap(), 1);
        assert_eq!(assign_grade(50.0, DEFAULTS).unwrap(), 2);
        assert_eq!(assign_grade(100.5, DEFAULTS).unwrap(), 3);
        assert_eq!(assign_grade(5000.0, DEFAULTS).unwrap(), 3);
    }

    #[test]
    fn non_monotone_cutpoints_are_rejected() {
        assert!(assign_grade(5.0, [10.0, 10.0, 400.0]).is_err());
        assert!(assign_grade(5.0, [100.0, 10.0, 400.0]).is_err());
    }

    #[test]
    fn grades_are_monotone_without_noise() {
        let mut prev = 0;
        for i in 0..2000 {
            let g = assign_grade(i as f64 * 0.37, DEFAULTS).unwrap();
            assert!(g >= prev);
            prev = g;
        }
    }

    #[test]
    fn flips_stay_on_the_scale_and_occur_at_the_configured_rate() {
        let mut rng = rng_for(3, "flip");
        let mut flipped = 0;
        for i in 0..20_000 {
            let g = (i % 4) as u8;
            let h = perturb_grade(g, 0.1, &mut rng);
            assert!(h <= 3 && (h as i32 - g as i32).abs() <= 1);
            flipped += usize::from(h != g);
        }
        let rate = flipped as f64 / 20_000.0;
        assert!((rate - 0.1).abs() < 0.01, "flip rate {rate}");
    }

    #[test]
    fn zero_coefficients_give_even_odds() {
        let m = LabelModel { a: 0.0, b: 0.0, bias: 0.0, agatston_ref: 400.0 };
        for (a, l) in [(0.0, -1.0), (37.0, 0.3), (1e4, 1.0)] {
            assert_eq!(risk_probability(a, l, &m), 0.5);
        }
    }

    #[test]
    fn large_weight_saturates_on_the_sign_of_the_normalized_score() {
        let m = LabelModel { a: 1e6, b: 0.0, bias: 0.0, agatston_ref: 400.0 };
        let mut rng = rng_for(1, "sat");
        // ln(1 + A) crosses the midpoint of [0, ln 401] at A = sqrt(401) - 1.
        let mid = 401f64.sqrt() - 1.0;
        for a in [0.0, 1.0, mid * 0.9, mid * 1.1, 50.0, 1000.0] {
            let want = u8::from(agatston_norm(a, &m) > 0.0);
            for _ in 0..20 {
                assert_eq!(assign_label(a, 0.0, &m, &mut rng), want);
            }
        }
    }
}
