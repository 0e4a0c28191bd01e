use rayon::prelude::*;

use super::folds::{kfold_split, Folds};
use super::methods::{FoldContext, RiskMethod, Stage1Cache};
use super::roc::{roc_curve, RocCurve};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::subject::Subject;

/// Cross-validated AUC of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub method: String,
    pub fold_aucs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator) of the fold AUCs.
    pub std: f64,
    pub folds: Folds,
    pub curves: Vec<RocCurve>,
    /// Out-of-fold score of every subject.
    pub predictions: Vec<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Seed handed to fold `i`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &format!("cv/fold/{fold}"))
}

/// Settings shared by every method of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvConfig {
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { k: 10, stratified: true, seed: 0 }
    }
}

pub fn cross_validate(subjects: &[Subject], method: &dyn RiskMethod, config: CvConfig) -> Result<CvResult> {
    let mut report = compare(subjects, &[method], config)?;
    Ok(report.remove(0))
}

/// Cross-validates every method on the same folds. Folds run in parallel
/// on the current rayon pool; within a fold, methods run in order and
/// share stage-one networks. Results do not depend on the thread count.
pub fn compare(subjects: &[Subject], methods: &[&dyn RiskMethod], config: CvConfig) -> Result<Vec<CvResult>> {
    if methods.is_empty() {
        return Err(Error::Argument("no methods to evaluate".into()));
    }
    let labels: Vec<u8> = subjects.iter().map(|s| s.label).collect();
    let folds = kfold_split(&labels, config.k, config.stratified, derive_seed(config.seed, "cv/folds"))?;

    let per_fold: Vec<Vec<(Vec<f64>, RocCurve)>> = (0..folds.k())
        .into_par_iter()
        .map(|i| {
            let wrap = |e: Error| Error::Fold { fold: i, source: Box::new(e) };
            let train: Vec<&Subject> = folds.train(i).into_iter().map(|s| &subjects[s]).collect();
            let test: Vec<&Subject> = folds.folds[i].iter().map(|&s| &subjects[s]).collect();
            let test_labels: Vec<u8> = test.iter().map(|s| s.label).collect();
            let cache = Stage1Cache::default();
            let ctx = FoldContext { fold: i, seed: fold_seed(config.seed, i), cache: &cache };
            methods
                .iter()
                .map(|m| {
                    let scores = m.fit_predict(&train, &test, &ctx).map_err(wrap)?;
                    if scores.len() != test.len() {
                        return Err(wrap(Error::Evaluation(format!(
                            "{} returned {} scores for {} subjects",
                            m.name(),
                            scores.len(),
                            test.len()
                        ))));
                    }
                    let curve = roc_curve(&scores, &test_labels).map_err(wrap)?;
                    Ok((scores, curve))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let mut predictions = vec![f64::NAN; subjects.len()];
            let mut curves = Vec::with_capacity(folds.k());
            for (i, fold) in per_fold.iter().enumerate() {
                let (scores, curve) = &fold[m];
                for (&s, &p) in folds.folds[i].iter().zip(scores) {
                    predictions[s] = p;
                }
                curves.push(curve.clone());
            }
            let fold_aucs: Vec<f64> = curves.iter().map(|c| c.auc).collect();
            let (mean, std) = mean_std(&fold_aucs);
            CvResult { method: method.name(), fold_aucs, mean, std, folds: folds.clone(), curves, predictions }
        })
        .collect())
}

/// Comparison of at least two methods on shared folds.
pub fn compare_methods(
    subjects: &[Subject],
    methods: &[Box<dyn RiskMethod>],
    config: CvConfig,
) -> Result<Vec<CvResult>> {
    if methods.len() < 2 {
        return Err(Error::Argument(format!("a comparison needs at least two methods, got {}", methods.len())));
    }
    let refs: Vec<&dyn RiskMethod> = methods.iter().map(|m| m.as_ref()).collect();
    compare(subjects, &refs, config)
}
