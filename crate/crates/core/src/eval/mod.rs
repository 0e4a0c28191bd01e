//! ROC analysis, stratified k-fold cross-validation and multi-method
//! comparison with CSV and SVG export.

mod cv;
mod folds;
mod methods;
mod report;
mod roc;

pub use cv::{compare, compare_methods, cross_validate, fold_seed, mean_std, CvConfig, CvResult};
pub use folds::{kfold_split, Folds};
pub use methods::{
    predict_subjects, standard_methods, FixedScore, FoldContext, NetworkMethod, RiskMethod, Stage1Cache,
};
pub use report::{roc_csv, roc_svg, summary_csv};
pub use roc::{auc, mean_roc, roc_curve, trapezoid, RocCurve};
