//! End-to-end commands. Each writes into a run directory holding its
//! outputs, the resolved configuration, the seeds, a manifest of produced
//! files with SHA-256 digests and a timestamped `run.log`. Everything
//! except `run.log` is a deterministic function of inputs, configuration
//! and seed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{
    compare_methods, cross_validate, roc_csv, roc_svg, summary_csv, CvResult, FixedScore, FoldContext,
    NetworkMethod, RiskMethod,
};
use crate::imaging::{channel_stats, CtVolume};
use crate::net::{
    gradient_check, read_checkpoint, train_stage1, train_stage2, write_checkpoint, Checkpoint, Depth, ModelParams,
    ScoreNorm, ScoreSource, Tensor, TrainExample,
};
use crate::phantom::{generate_dataset, read_manifest, volume_path, write_csv, ManifestRow, MANIFEST_FILE};
use crate::scoring::ScoringParams;
use crate::seed::{derive_seed, rng_for};
use crate::subject::Subject;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved";
pub const SEEDS_FILE: &str = "seeds.txt";
pub const FILES_MANIFEST: &str = "files.csv";
pub const LOG_FILE: &str = "run.log";
pub const SCORES_FILE: &str = "scores.csv";
pub const CHECKPOINT_FILE: &str = "model.hyrk";
pub const TRAIN_LOG_FILE: &str = "training.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const ROC_SVG_FILE: &str = "roc.svg";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";

/// Output directory of one command.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    produced: Vec<PathBuf>,
    log: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir { root: root.to_path_buf(), produced: Vec::new(), log: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn log(&mut self, message: impl Into<String>) {
        let message = message.into();
        info!("{message}");
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        self.log.push(format!("{}.{:03} {message}", now.as_secs(), now.subsec_millis()));
    }

    /// Writes `bytes` to `rel` inside the run directory.
    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.root.join(rel);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(rel);
        Ok(path)
    }

    /// Registers a file produced by other means.
    pub fn record(&mut self, rel: impl Into<PathBuf>) {
        self.produced.push(rel.into());
    }

    /// Writes the bookkeeping files. `run.log` is written last and is the
    /// only file that varies between identical runs.
    pub fn finish(mut self, config: &RunConfig, command: &str) -> Result<()> {
        self.write(RESOLVED_CONFIG_FILE, format!("# command = {command}\n{}", config.to_text()))?;
        let seeds: String = config.seeds().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        self.write(SEEDS_FILE, seeds)?;
        let mut files = String::from("path,bytes,sha256\n");
        let mut produced = self.produced.clone();
        produced.sort();
        produced.dedup();
        for rel in &produced {
            let path = self.root.join(rel);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
            writeln!(files, "{},{},{digest}", rel.display(), bytes.len()).unwrap();
        }
        let path = self.root.join(FILES_MANIFEST);
        std::fs::write(&path, files).map_err(|e| Error::io(&path, e))?;
        self.log("done");
        let path = self.root.join(LOG_FILE);
        std::fs::write(&path, self.log.join("\n") + "\n").map_err(|e| Error::io(&path, e))
    }
}

fn resolved(config: &RunConfig) -> Result<RunConfig> {
    config.validate()?;
    let mut c = config.clone();
    c.resolve_seeds();
    Ok(c)
}

/// Loads every subject of a dataset directory, scoring each volume.
/// Failures name the subject.
pub fn load_subjects(dataset: &Path, params: &ScoringParams) -> Result<Vec<Subject>> {
    let rows = read_manifest(&dataset.join(MANIFEST_FILE))?;
    rows.par_iter()
        .map(|row| {
            let volume = CtVolume::read_from(&volume_path(dataset, row), &row.subject_id)
                .map_err(|e| Error::Subject { subject: row.subject_id.clone(), source: Box::new(e) })?;
            Subject::from_volume(&volume, row.center(), row.grade, row.label, params)
        })
        .collect()
}

/// `phantom`: synthetic dataset with manifest and volumes.
pub fn run_phantom(config: &RunConfig, out: &Path) -> Result<Vec<ManifestRow>> {
    let cfg = resolved(config)?;
    let mut run = RunDir::create(out)?;
    run.log(format!("generating {} subjects", cfg.phantom.n_subjects));
    let rows = generate_dataset(&cfg.phantom, out)?;
    for r in &rows {
        run.record(&r.volume_file);
    }
    run.record(MANIFEST_FILE);
    run.record(crate::phantom::TRUTH_FILE);
    run.finish(&cfg, "phantom")?;
    Ok(rows)
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    subject_id: &'a str,
    agatston: f64,
    risk_category: String,
    volume_mm3: f64,
    sqrt_volume: f64,
    grade: u8,
    label: u8,
}

const SCORE_HEADER: [&str; 7] =
    ["subject_id", "agatston", "risk_category", "volume_mm3", "sqrt_volume", "grade", "label"];

/// `score`: calcium scores of every subject as CSV.
pub fn run_score(config: &RunConfig, dataset: &Path, out: &Path) -> Result<Vec<Subject>> {
    let cfg = resolved(config)?;
    let mut run = RunDir::create(out)?;
    let subjects = load_subjects(dataset, &cfg.phantom.scoring)?;
    run.log(format!("scored {} subjects from {}", subjects.len(), dataset.display()));
    let rows: Vec<ScoreRow<'_>> = subjects
        .iter()
        .map(|s| ScoreRow {
            subject_id: &s.id,
            agatston: s.scores.agatston,
            risk_category: s.scores.risk_category.to_string(),
            volume_mm3: s.scores.volume_mm3,
            sqrt_volume: s.scores.sqrt_volume,
            grade: s.grade(),
            label: s.label,
        })
        .collect();
    write_csv(&out.join(SCORES_FILE), &SCORE_HEADER, &rows)?;
    run.record(SCORES_FILE);
    run.finish(&cfg, "score")?;
    Ok(subjects)
}

/// `train`: stage one on the whole dataset and, if configured, stage two.
pub fn run_train(config: &RunConfig, dataset: &Path, out: &Path) -> Result<Checkpoint> {
    let cfg = resolved(config)?;
    let mut run = RunDir::create(out)?;
    let subjects = load_subjects(dataset, &cfg.phantom.scoring)?;
    let pretrained = match &cfg.pretrained {
        Some(p) => Some(read_checkpoint(Path::new(p))?.params),
        None => None,
    };
    let examples: Vec<TrainExample<'_>> =
        subjects.iter().map(|s| TrainExample { patch: &s.patch, label: s.label, score: None }).collect();
    run.log(format!("stage 1: {} subjects, {} epochs, {}", subjects.len(), cfg.train.epochs, cfg.train.strategy));
    let stage1 = train_stage1(&examples, &cfg.backbone, &cfg.train, pretrained.as_ref())?;
    let mut log = String::from("stage,epoch,loss\n");
    writeln!(log, "1,0,{}", stage1.report.initial_loss).unwrap();
    for (e, l) in stage1.report.epoch_losses.iter().enumerate() {
        writeln!(log, "1,{},{l}", e + 1).unwrap();
    }
    let ckpt = if cfg.train_hybrid {
        let norm = ScoreNorm::fit(cfg.stage2_source, subjects.iter().map(|s| &s.scores));
        let examples = subjects
            .iter()
            .map(|s| Ok(TrainExample { patch: &s.patch, label: s.label, score: Some(norm.apply(&s.scores)?) }))
            .collect::<Result<Vec<_>>>()?;
        run.log(format!("stage 2: score {}, {} epochs", cfg.stage2_source, cfg.stage2.epochs));
        let stage2 = train_stage2(&stage1.params, &examples, norm, &cfg.stage2)?;
        writeln!(log, "2,0,{}", stage2.report.initial_loss).unwrap();
        for (e, l) in stage2.report.epoch_losses.iter().enumerate() {
            writeln!(log, "2,{},{l}", e + 1).unwrap();
        }
        Checkpoint { params: stage2.params, strategy: cfg.stage2.strategy, stage: 2 }
    } else {
        Checkpoint { params: stage1.params, strategy: cfg.train.strategy, stage: 1 }
    };
    write_checkpoint(&out.join(CHECKPOINT_FILE), &ckpt)?;
    run.record(CHECKPOINT_FILE);
    run.record(format!("{CHECKPOINT_FILE}.txt"));
    run.write(TRAIN_LOG_FILE, log)?;
    run.log(format!("checkpoint fingerprint {}", ckpt.params.fingerprint()));
    run.finish(&cfg, "train")?;
    Ok(ckpt)
}

/// Builds a comparison method from its name.
pub fn build_method(name: &str, cfg: &RunConfig) -> Result<Box<dyn RiskMethod>> {
    Ok(match name {
        "risknet" => Box::new(NetworkMethod::risknet(cfg.backbone, cfg.train.clone())),
        "hyrisknet_grade" => Box::new(NetworkMethod::hyrisknet(
            cfg.backbone,
            cfg.train.clone(),
            ScoreSource::SubjectiveGrade,
            cfg.stage2.clone(),
        )),
        "hyrisknet_agatston" => Box::new(NetworkMethod::hyrisknet(
            cfg.backbone,
            cfg.train.clone(),
            ScoreSource::Agatston,
            cfg.stage2.clone(),
        )),
        other => Box::new(other.parse::<FixedScore>()?),
    })
}

/// Scores fixed in advance, looked up by subject id.
struct Precomputed {
    name: String,
    scores: HashMap<String, f64>,
}

impl RiskMethod for Precomputed {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn fit_predict(&self, _train: &[&Subject], test: &[&Subject], _ctx: &FoldContext<'_>) -> Result<Vec<f64>> {
        Ok(test.iter().map(|s| self.scores[&s.id]).collect())
    }
}

/// What `eval` measures.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalTarget {
    /// Cross-validate a named method.
    Method(String),
    /// Score every subject with a trained model, AUC per fold.
    Checkpoint(PathBuf),
}

/// Relative tolerance when matching stored and recomputed channel statistics.
const STATS_TOLERANCE: f64 = 1e-9;

fn stats_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= STATS_TOLERANCE * x.abs().max(y.abs()).max(1.0))
}

/// Refuses a checkpoint whose normalization statistics were not computed
/// on this dataset.
pub fn check_checkpoint_matches(params: &ModelParams, subjects: &[Subject]) -> Result<()> {
    let stats = channel_stats(subjects.iter().map(|s| &s.patch))?;
    if !stats_match(&stats.mean, &params.stats.mean) || !stats_match(&stats.std, &params.stats.std) {
        return Err(Error::Config(format!(
            "checkpoint {} was normalized with channel mean {:?} / std {:?}, but this dataset gives {:?} / {:?}",
            params.fingerprint(),
            params.stats.mean,
            params.stats.std,
            stats.mean,
            stats.std
        )));
    }
    Ok(())
}

fn write_results(run: &mut RunDir, results: &[CvResult], svg: bool) -> Result<()> {
    run.write(SUMMARY_FILE, summary_csv(results))?;
    run.write(ROC_FILE, roc_csv(results))?;
    if svg {
        run.write(ROC_SVG_FILE, roc_svg(results))?;
    }
    Ok(())
}

/// `eval`: cross-validated AUC of one method or one checkpoint.
pub fn run_eval(config: &RunConfig, dataset: &Path, target: &EvalTarget, out: &Path) -> Result<CvResult> {
    let cfg = resolved(config)?;
    let mut run = RunDir::create(out)?;
    let subjects = load_subjects(dataset, &cfg.phantom.scoring)?;
    let result = match target {
        EvalTarget::Method(name) => {
            let method = build_method(name, &cfg)?;
            run.log(format!("cross-validating {name} with k = {}", cfg.eval.k));
            cross_validate(&subjects, method.as_ref(), cfg.eval)?
        }
        EvalTarget::Checkpoint(path) => {
            let ckpt = read_checkpoint(path)?;
            check_checkpoint_matches(&ckpt.params, &subjects)?;
            let refs: Vec<&Subject> = subjects.iter().collect();
            let scale = if ckpt.stage == 2 { cfg.stage2.eval_scale } else { cfg.train.eval_scale };
            let p = crate::eval::predict_subjects(&ckpt.params, &refs, scale)?;
            let method = Precomputed {
                name: format!("checkpoint_{}", ckpt.params.fingerprint()),
                scores: subjects.iter().map(|s| s.id.clone()).zip(p).collect(),
            };
            run.log(format!("evaluating checkpoint {}", path.display()));
            cross_validate(&subjects, &method, cfg.eval)?
        }
    };
    write_results(&mut run, std::slice::from_ref(&result), false)?;
    run.finish(&cfg, "eval")?;
    Ok(result)
}

/// `compare`: every configured method on shared folds.
pub fn run_compare(config: &RunConfig, dataset: &Path, out: &Path) -> Result<Vec<CvResult>> {
    let cfg = resolved(config)?;
    let mut run = RunDir::create(out)?;
    let subjects = load_subjects(dataset, &cfg.phantom.scoring)?;
    let methods = cfg.methods.iter().map(|m| build_method(m, &cfg)).collect::<Result<Vec<_>>>()?;
    run.log(format!("comparing {} methods on {} subjects, k = {}", methods.len(), subjects.len(), cfg.eval.k));
    let results = compare_methods(&subjects, &methods, cfg.eval)?;
    for r in &results {
        run.log(format!("{}: AUC {:.4} ± {:.4}", r.method, r.mean, r.std));
    }
    write_results(&mut run, &results, true)?;
    run.finish(&cfg, "compare")?;
    Ok(results)
}

/// Outcome of `gradcheck`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOutcome {
    pub max_relative_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// `gradcheck`: analytic versus finite-difference gradients of a randomly
/// initialized micro hybrid network on a random batch. Fails with a
/// numeric error when the tolerance is exceeded.
pub fn run_gradcheck(config: &RunConfig, out: &Path) -> Result<GradcheckOutcome> {
    let cfg = resolved(config)?;
    if cfg.backbone.depth != Depth::Micro {
        return Err(Error::Config("gradcheck runs on the micro backbone only".into()));
    }
    let mut run = RunDir::create(out)?;
    let seed = derive_seed(cfg.seed, "gradcheck");
    let mut rng = rng_for(seed, "data");
    let params = ModelParams::init(cfg.backbone, true, &mut rng_for(seed, "init"))?;
    let n = cfg.gradcheck_batch;
    let side = cfg.backbone.input_side;
    let mut x = Tensor::zeros([n, 3, side, side]);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(-2.0..2.0);
    }
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    run.log(format!("checking {} coordinates, epsilon {:e}", cfg.gradcheck_coordinates, cfg.gradcheck_epsilon));
    let report = gradient_check(
        &params,
        &x,
        &labels,
        Some(&scores),
        cfg.gradcheck_epsilon,
        cfg.gradcheck_coordinates,
        derive_seed(seed, "coordinates"),
    )?;
    let mut csv = String::from("tensor,index,analytic,numeric,relative_error\n");
    for c in &report.checked {
        writeln!(csv, "{},{},{},{},{}", c.tensor, c.index, c.analytic, c.numeric, c.relative_error).unwrap();
    }
    run.write(GRADCHECK_FILE, csv)?;
    run.log(format!(
        "max relative error {:e} over {} coordinates ({} skipped at kinks)",
        report.max_relative_error,
        report.checked.len(),
        report.skipped
    ));
    let outcome = GradcheckOutcome {
        max_relative_error: report.max_relative_error,
        checked: report.checked.len(),
        skipped: report.skipped,
    };
    run.finish(&cfg, "gradcheck")?;
    if !(outcome.max_relative_error < cfg.gradcheck_tolerance) {
        return Err(Error::Numeric(format!(
            "gradient check failed: max relative error {:e} >= {:e}",
            outcome.max_relative_error, cfg.gradcheck_tolerance
        )));
    }
    Ok(outcome)
}
