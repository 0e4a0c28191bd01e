use std::collections::VecDeque;

use super::mask::CalciumMask;

/// One 26-connected component of the calcium mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    /// Linear `(slice, row, col)` indices in ascending order.
    pub voxels: Vec<usize>,
    /// Voxel count on each slice of the mask.
    pub slice_counts: Vec<usize>,
    /// Peak HU on each slice, `None` where the lesion is absent.
    pub slice_peaks: Vec<Option<i16>>,
    pub peak_hu: i16,
    pixel_area: f64,
}

impl Lesion {
    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn slice_area_mm2(&self, slice: usize) -> f64 {
        self.slice_counts[slice] as f64 * self.pixel_area
    }

    pub fn max_slice_area_mm2(&self) -> f64 {
        self.slice_counts.iter().copied().max().unwrap_or(0) as f64 * self.pixel_area
    }
}

/// Labels 26-connected components (8-connected in-plane) and drops those
/// whose largest single-slice area is below `min_area_mm2`. Larger lesions
/// come first; equal sizes keep the order of their smallest voxel index.
pub fn find_lesions(mask: &CalciumMask, min_area_mm2: f64) -> Vec<Lesion> {
    let (ns, nr, nc) = mask.mask.dim();
    let flags = mask.mask.as_standard_layout();
    let flags = flags.as_slice().expect("standard layout");
    let hu = mask.hu.as_standard_layout();
    let hu = hu.as_slice().expect("standard layout");
    let pixel_area = mask.spacing.pixel_area();
    let mut visited = vec![false; flags.len()];
    let mut lesions = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..flags.len() {
        if !flags[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.push_back(start);
        let mut voxels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            voxels.push(idx);
            let (s, r, c) = (idx / (nr * nc), (idx / nc) % nr, idx % nc);
            for ds in -1i64..=1 {
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        let (s2, r2, c2) = (s as i64 + ds, r as i64 + dr, c as i64 + dc);
                        if s2 < 0 || r2 < 0 || c2 < 0 || s2 >= ns as i64 || r2 >= nr as i64 || c2 >= nc as i64 {
                            continue;
                        }
                        let j = (s2 as usize * nr + r2 as usize) * nc + c2 as usize;
                        if flags[j] && !visited[j] {
                            visited[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        voxels.sort_unstable();
        let mut slice_counts = vec![0usize; ns];
        let mut slice_peaks: Vec<Option<i16>> = vec![None; ns];
        for &idx in &voxels {
            let s = idx / (nr * nc);
            slice_counts[s] += 1;
            slice_peaks[s] = Some(slice_peaks[s].map_or(hu[idx], |p| p.max(hu[idx])));
        }
        let peak_hu = slice_peaks.iter().flatten().copied().max().expect("non-empty lesion");
        let lesion = Lesion { voxels, slice_counts, slice_peaks, peak_hu, pixel_area };
        if lesion.max_slice_area_mm2() >= min_area_mm2 {
            lesions.push(lesion);
        }
    }
    // stable: components were discovered in order of their smallest index
    lesions.sort_by(|a, b| b.len().cmp(&a.len()));
    lesions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Spacing;
    use ndarray::Array3;

    fn mask_with(points: &[(usize, usize, usize)], hu: i16) -> CalciumMask {
        let mut v = Array3::<i16>::from_elem((5, 65, 65), 0);
        for &(s, r, c) in points {
            v[[s, r, c]] = hu;
        }
        CalciumMask::from_hu(v, Spacing::new(1.0, 1.0, 3.0).unwrap(), 130)
    }

    #[test]
    fn empty_mask_has_no_lesions() {
        assert!(find_lesions(&mask_with(&[], 0), 1.0).is_empty());
    }

    #[test]
    fn in_plane_diagonal_neighbors_join() {
        let m = mask_with(&[(2, 10, 10), (2, 11, 11)], 300);
        let l = find_lesions(&m, 1.0);
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].len(), 2);
    }

    #[test]
    fn cross_slice_diagonal_neighbors_join() {
        let m = mask_with(&[(1, 10, 10), (2, 11, 11)], 300);
        assert_eq!(find_lesions(&m, 1.0).len(), 1);
        let m = mask_with(&[(1, 10, 10), (3, 10, 10)], 300);
        assert_eq!(find_lesions(&m, 1.0).len(), 2);
    }

    #[test]
    fn small_components_are_dropped() {
        let m = mask_with(&[(2, 10, 10), (2, 40, 40), (2, 40, 41)], 300);
        let spacing = Spacing::new(0.7, 0.7, 3.0).unwrap();
        let m = CalciumMask { spacing, ..m };
        // one voxel: 0.49 mm², two voxels: 0.98 mm²
        assert!(find_lesions(&m, 1.0).is_empty());
        assert_eq!(find_lesions(&m, 0.9).len(), 1);
        assert_eq!(find_lesions(&m, 0.0).len(), 2);
    }

    #[test]
    fn ordering_is_size_then_first_voxel() {
        let m = mask_with(&[(0, 50, 50), (0, 5, 5), (0, 5, 6), (4, 30, 30), (4, 30, 31)], 200);
        let l = find_lesions(&m, 0.0);
        let firsts: Vec<usize> = l.iter().map(|x| x.voxels[0]).collect();
        assert_eq!(l.iter().map(Lesion::len).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert!(firsts[0] < firsts[1]);
    }

    #[test]
    fn per_slice_peaks_are_tracked() {
        let mut v = Array3::<i16>::from_elem((5, 65, 65), 0);
        v[[1, 20, 20]] = 180;
        v[[1, 20, 21]] = 350;
        v[[2, 20, 20]] = 500;
        let m = CalciumMask::from_hu(v, Spacing::new(1.0, 1.0, 3.0).unwrap(), 130);
        let l = find_lesions(&m, 1.0);
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].slice_peaks, vec![None, Some(350), Some(500), None, None]);
        assert_eq!(l[0].slice_counts, vec![0, 2, 1, 0, 0]);
        assert_eq!(l[0].peak_hu, 500);
    }
}
