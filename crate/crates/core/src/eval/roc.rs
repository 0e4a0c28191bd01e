use crate::error::{Error, Result};

/// Receiver operating characteristic of one scorer on one set of subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false-positive rate, true-positive rate)`, from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    /// Score threshold of each point: a subject is called positive when its
    /// score is `>=` the threshold. The first point uses `+inf`.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Evaluation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Evaluation(format!("score {i} is NaN")));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Evaluation(format!("labels must be 0/1, found {l}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Evaluation("AUC is undefined unless both classes are present".into()));
    }
    Ok((pos, neg))
}

/// Threshold sweep over the distinct scores in descending order; tied
/// scores form one diagonal step.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    let auc = trapezoid(&points);
    Ok(RocCurve { points, thresholds, auc })
}

/// Area under a polyline by the trapezoid rule.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
}

/// Mann–Whitney statistic `(concordant + ties / 2) / (n_pos · n_neg)`,
/// computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * positives as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Vertical average of several curves: mean true-positive rate at each of
/// `grid` evenly spaced false-positive rates. Where a curve rises
/// vertically, the upper end of the rise is used.
pub fn mean_roc(curves: &[RocCurve], grid: usize) -> Vec<(f64, f64)> {
    assert!(grid >= 2, "grid needs both endpoints");
    (0..grid)
        .map(|g| {
            let x = g as f64 / (grid - 1) as f64;
            let mean = curves.iter().map(|c| tpr_at(&c.points, x)).sum::<f64>() / curves.len().max(1) as f64;
            (x, mean)
        })
        .collect()
}

fn tpr_at(points: &[(f64, f64)], x: f64) -> f64 {
    let mut best: f64 = 0.0;
    for w in points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x1 < x {
            continue;
        }
        if x0 > x {
            break;
        }
        let y = if x1 == x0 { y1 } else { y0 + (y1 - y0) * (x - x0) / (x1 - x0) };
        best = best.max(y);
    }
    best
}
