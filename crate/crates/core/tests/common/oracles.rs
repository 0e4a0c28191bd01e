//! Independent reference implementations used as test oracles. Nothing in
//! here calls into the library's scoring or ROC code.

#![allow(dead_code)]

use ndarray::Array3;

/// Union-find over linear voxel indices.
struct Dsu {
    parent: Vec<usize>,
}

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Labels 26-connected components of `hu >= threshold` by union-find over
/// forward neighbours and returns the voxel list of each component.
pub fn components(hu: &Array3<i16>, threshold: i16) -> Vec<Vec<(usize, usize, usize)>> {
    let (ns, nr, nc) = hu.dim();
    let idx = |s: usize, r: usize, c: usize| (s * nr + r) * nc + c;
    let on = |s: usize, r: usize, c: usize| hu[[s, r, c]] >= threshold;
    let mut dsu = Dsu::new(ns * nr * nc);
    for s in 0..ns {
        for r in 0..nr {
            for c in 0..nc {
                if !on(s, r, c) {
                    continue;
                }
                for ds in 0..=1i64 {
                    for dr in -1..=1i64 {
                        for dc in -1..=1i64 {
                            // visit each unordered neighbour pair once
                            if ds == 0 && (dr < 0 || (dr == 0 && dc <= 0)) {
                                continue;
                            }
                            let (s2, r2, c2) = (s as i64 + ds, r as i64 + dr, c as i64 + dc);
                            if s2 >= ns as i64 || r2 < 0 || r2 >= nr as i64 || c2 < 0 || c2 >= nc as i64 {
                                continue;
                            }
                            let (s2, r2, c2) = (s2 as usize, r2 as usize, c2 as usize);
                            if on(s2, r2, c2) {
                                dsu.union(idx(s, r, c), idx(s2, r2, c2));
                            }
                        }
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize, usize)>> = Default::default();
    for ((s, r, c), &v) in hu.indexed_iter() {
        if v >= threshold {
            groups.entry(dsu.find(idx(s, r, c))).or_default().push((s, r, c));
        }
    }
    groups.into_values().collect()
}

/// Classical density weight table.
pub fn weight(peak: i16) -> u32 {
    if peak >= 400 {
        4
    } else if peak >= 300 {
        3
    } else if peak >= 200 {
        2
    } else if peak >= 130 {
        1
    } else {
        0
    }
}

/// Per-pixel Agatston: every retained voxel adds `pixel_area × w(peak of
/// its component on its slice)`, scaled by `z / 3`.
pub fn brute_agatston(hu: &Array3<i16>, spacing: (f64, f64, f64), threshold: i16, min_area_mm2: f64) -> f64 {
    let ns = hu.dim().0;
    let pixel_area = spacing.0 * spacing.1;
    let mut weighted_pixels: u64 = 0;
    for comp in components(hu, threshold) {
        let mut counts = vec![0usize; ns];
        let mut peaks = vec![i16::MIN; ns];
        for &(s, r, c) in &comp {
            counts[s] += 1;
            peaks[s] = peaks[s].max(hu[[s, r, c]]);
        }
        let max_area = *counts.iter().max().unwrap() as f64 * pixel_area;
        if max_area < min_area_mm2 {
            continue;
        }
        for &(s, _, _) in &comp {
            weighted_pixels += u64::from(weight(peaks[s]));
        }
    }
    weighted_pixels as f64 * pixel_area * spacing.2 / 3.0
}

/// Voxel volume of every `hu >= threshold` voxel.
pub fn brute_volume(hu: &Array3<i16>, spacing: (f64, f64, f64), threshold: i16) -> f64 {
    let mut n = 0usize;
    for &v in hu.iter() {
        if v >= threshold {
            n += 1;
        }
    }
    n as f64 * spacing.0 * spacing.1 * spacing.2
}

/// Voxel volume of the components kept by the minimum-area rule.
pub fn brute_retained_volume(hu: &Array3<i16>, spacing: (f64, f64, f64), threshold: i16, min_area_mm2: f64) -> f64 {
    let ns = hu.dim().0;
    let pixel_area = spacing.0 * spacing.1;
    let mut n = 0usize;
    for comp in components(hu, threshold) {
        let mut counts = vec![0usize; ns];
        for &(s, _, _) in &comp {
            counts[s] += 1;
        }
        if *counts.iter().max().unwrap() as f64 * pixel_area >= min_area_mm2 {
            n += comp.len();
        }
    }
    n as f64 * spacing.0 * spacing.1 * spacing.2
}

/// `(concordant + tied / 2) / (n_pos · n_neg)` over all positive/negative pairs.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs as f64
}

/// Area of a piecewise-linear curve through `points` by the trapezoid rule.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Bayes AUC of a label model: the AUC of the true risk probability
/// against labels drawn from it, by Mann–Whitney.
pub fn bayes_auc(probabilities: &[f64], labels: &[u8]) -> f64 {
    mann_whitney(probabilities, labels)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
