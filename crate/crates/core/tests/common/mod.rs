#![allow(dead_code)]

pub mod oracles;

use ndarray::Array3;
use rand::Rng;

/// Random HU grid of the scoring-patch shape with sparse blobs of calcium,
/// so components of many sizes, shapes and peak densities occur.
pub fn random_calcium_grid<R: Rng>(rng: &mut R) -> Array3<i16> {
    let mut hu = Array3::from_shape_fn((5, 65, 65), |_| rng.gen_range(-100i16..129));
    let density = rng.gen_range(0.0..0.08);
    for v in hu.iter_mut() {
        if rng.gen_bool(density) {
            *v = rng.gen_range(130i16..700);
        }
    }
    let blobs = rng.gen_range(0..6);
    for _ in 0..blobs {
        let (s, r, c) = (rng.gen_range(0..5), rng.gen_range(0..65), rng.gen_range(0..65));
        let (h, w) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let peak = rng.gen_range(130i16..600);
        for rr in r..(r + h).min(65) {
            for cc in c..(c + w).min(65) {
                hu[[s, rr, cc]] = rng.gen_range(130..=peak);
            }
        }
    }
    hu
}
