use std::fmt::Write as _;

use super::cv::CvResult;
use super::roc::mean_roc;

/// `method,auc_mean,auc_std,fold_1,...,fold_k`, one row per method.
pub fn summary_csv(results: &[CvResult]) -> String {
    let k = results.iter().map(|r| r.fold_aucs.len()).max().unwrap_or(0);
    let mut out = String::from("method,auc_mean,auc_std");
    for i in 1..=k {
        write!(out, ",fold_{i}").unwrap();
    }
    out.push('\n');
    for r in results {
        write!(out, "{},{},{}", r.method, r.mean, r.std).unwrap();
        for a in &r.fold_aucs {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `method,fold,threshold,fpr,tpr`, every point of every fold curve.
/// Folds are numbered from 1.
pub fn roc_csv(results: &[CvResult]) -> String {
    let mut out = String::from("method,fold,threshold,fpr,tpr\n");
    for r in results {
        for (i, c) in r.curves.iter().enumerate() {
            for ((fpr, tpr), t) in c.points.iter().zip(&c.thresholds) {
                writeln!(out, "{},{},{},{},{}", r.method, i + 1, t, fpr, tpr).unwrap();
            }
        }
    }
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Overlaid vertically averaged ROC curves with a legend of mean ± std AUC.
pub fn roc_svg(results: &[CvResult]) -> String {
    let (w, h, m) = (480.0, 480.0, 50.0);
    let side = w - 2.0 * m;
    let px = |x: f64| m + x * side;
    let py = |y: f64| h - m - y * side;
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{}" font-family="sans-serif" font-size="11">"#, h + 20.0 * results.len() as f64).unwrap();
    writeln!(s, r#"<rect x="{m}" y="{m}" width="{side}" height="{side}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(s, r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##, px(0.0), py(0.0), px(1.0), py(1.0)).unwrap();
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#, px(v), h - m + 15.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, m - 5.0, py(v) + 4.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">False positive rate</text>"#, w / 2.0, h - 12.0).unwrap();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">True positive rate</text>"#, h / 2.0, h / 2.0).unwrap();
    for (i, r) in results.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            mean_roc(&r.curves, 101).iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" ")).unwrap();
        let y = h + 20.0 * i as f64 - 5.0;
        writeln!(s, r#"<line x1="{m}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/>"#, m + 20.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{} (AUC {:.3} ± {:.3})</text>"#, m + 26.0, y + 4.0, r.method, r.mean, r.std).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
