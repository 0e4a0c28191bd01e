//! Flat `key = value` run configuration with dotted namespaces.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known and may appear once; omitted keys keep their defaults. The
//! resolved form lists every key in a fixed order.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::CvConfig;
use crate::imaging::Spacing;
use crate::net::{BackboneConfig, Depth, ScoreSource, Strategy, TrainConfig, MICRO_DEFAULT_FEATURES, MICRO_INPUT_SIDE};
use crate::phantom::PhantomSpec;
use crate::seed::derive_seed;

/// Every setting of a run. Seeds of the individual stages are derived from
/// `seed`; the values stored in `phantom`, `train` and `stage2` are
/// overwritten by [`RunConfig::resolve_seeds`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub phantom: PhantomSpec,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    /// Score source of the hybrid model trained by `train` when stage 2 is
    /// requested.
    pub stage2_source: ScoreSource,
    pub stage2: TrainConfig,
    /// Train stage two in the `train` command.
    pub train_hybrid: bool,
    /// Optional backbone weights for the pretrained strategies.
    pub pretrained: Option<String>,
    pub eval: CvConfig,
    /// Methods of the `compare` command, by name.
    pub methods: Vec<String>,
    pub gradcheck_epsilon: f64,
    pub gradcheck_coordinates: usize,
    pub gradcheck_batch: usize,
    pub gradcheck_tolerance: f64,
}

pub const STANDARD_METHODS: [&str; 8] = [
    "agatston",
    "category",
    "volume",
    "sqrt_volume",
    "grade",
    "risknet",
    "hyrisknet_grade",
    "hyrisknet_agatston",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            phantom: PhantomSpec::default(),
            backbone: BackboneConfig { depth: Depth::Micro, feature_dim: MICRO_DEFAULT_FEATURES, input_side: MICRO_INPUT_SIDE },
            train: TrainConfig::new(Strategy::Scratch, 1),
            stage2_source: ScoreSource::SubjectiveGrade,
            stage2: TrainConfig { epochs: 10, ..TrainConfig::new(Strategy::Scratch, 2) },
            train_hybrid: false,
            pretrained: None,
            eval: CvConfig::default(),
            methods: STANDARD_METHODS.iter().map(|s| s.to_string()).collect(),
            gradcheck_epsilon: 1e-5,
            gradcheck_coordinates: 200,
            gradcheck_batch: 4,
            gradcheck_tolerance: 1e-4,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        // Defaults that depend on other keys, unless given explicitly.
        if !seen.contains("train.learning_rate") {
            cfg.train.learning_rate = cfg.train.strategy.default_learning_rate();
        }
        if !seen.contains("stage2.learning_rate") {
            cfg.stage2.learning_rate = cfg.stage2.strategy.default_learning_rate();
        }
        if let Some(fd) = cfg.backbone.depth.standard_feature_dim() {
            if !seen.contains("backbone.feature_dim") {
                cfg.backbone.feature_dim = fd;
            }
            if !seen.contains("backbone.input_side") {
                cfg.backbone.input_side = crate::imaging::NETWORK_INPUT_SIDE;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Assigns one key. Unlike [`RunConfig::parse`], this does not refresh
    /// defaults that depend on other keys.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.phantom;
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "run.jobs" => self.jobs = parse(key, v)?,
            "phantom.n_subjects" => p.n_subjects = parse(key, v)?,
            "phantom.balanced" => p.balanced = parse_bool(key, v)?,
            "phantom.rows" => p.rows = parse(key, v)?,
            "phantom.cols" => p.cols = parse(key, v)?,
            "phantom.slices" => p.slices = parse(key, v)?,
            "phantom.spacing_x" => p.spacing.x = parse(key, v)?,
            "phantom.spacing_y" => p.spacing.y = parse(key, v)?,
            "phantom.spacing_z" => p.spacing.z = parse(key, v)?,
            "phantom.center_jitter" => p.center_jitter = parse(key, v)?,
            "phantom.background_hu_mean" => p.background_hu_mean = parse(key, v)?,
            "phantom.background_hu_std" => p.background_hu_std = parse(key, v)?,
            "phantom.noise_sigma" => p.noise_sigma = parse(key, v)?,
            "phantom.lesion_rate" => p.lesion_rate = parse(key, v)?,
            "phantom.lesion_radius_min_mm" => p.lesion_radius_mm.0 = parse(key, v)?,
            "phantom.lesion_radius_max_mm" => p.lesion_radius_mm.1 = parse(key, v)?,
            "phantom.lesion_hu_min" => p.lesion_hu.0 = parse(key, v)?,
            "phantom.lesion_hu_max" => p.lesion_hu.1 = parse(key, v)?,
            "phantom.lesion_spread_mm" => p.lesion_spread_mm = parse(key, v)?,
            "phantom.lesion_slice_spread" => p.lesion_slice_spread = parse(key, v)?,
            "phantom.texture_contrast" => p.texture_contrast = parse(key, v)?,
            "phantom.texture_period_mm" => p.texture_period_mm = parse(key, v)?,
            "label.a" => p.label.a = parse(key, v)?,
            "label.b" => p.label.b = parse(key, v)?,
            "label.bias" => p.label.bias = parse(key, v)?,
            "label.agatston_ref" => p.label.agatston_ref = parse(key, v)?,
            "grade.cutpoints" => {
                let c: Vec<f64> = parse_list(key, v)?;
                p.grade.cutpoints = c
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three comma-separated values")))?;
            }
            "grade.flip_probability" => p.grade.flip_probability = parse(key, v)?,
            "scoring.threshold_hu" => p.scoring.threshold_hu = parse(key, v)?,
            "scoring.min_area_mm2" => p.scoring.min_area_mm2 = parse(key, v)?,
            "backbone.depth" => self.backbone.depth = parse(key, v)?,
            "backbone.feature_dim" => self.backbone.feature_dim = parse(key, v)?,
            "backbone.input_side" => self.backbone.input_side = parse(key, v)?,
            "train.strategy" => self.train.strategy = parse(key, v)?,
            "train.pretrained" => self.pretrained = Some(v.to_string()).filter(|s| !s.is_empty()),
            "train.hybrid" => self.train_hybrid = parse_bool(key, v)?,
            "stage2.source" => self.stage2_source = parse(key, v)?,
            "stage2.strategy" => self.stage2.strategy = parse(key, v)?,
            "eval.k" => self.eval.k = parse(key, v)?,
            "eval.stratified" => self.eval.stratified = parse_bool(key, v)?,
            "eval.methods" => self.methods = v.split(',').map(|m| m.trim().to_string()).collect(),
            "gradcheck.epsilon" => self.gradcheck_epsilon = parse(key, v)?,
            "gradcheck.coordinates" => self.gradcheck_coordinates = parse(key, v)?,
            "gradcheck.batch" => self.gradcheck_batch = parse(key, v)?,
            "gradcheck.tolerance" => self.gradcheck_tolerance = parse(key, v)?,
            other => {
                if let Some((section, field)) = other.split_once('.') {
                    let t = match section {
                        "train" => Some(&mut self.train),
                        "stage2" => Some(&mut self.stage2),
                        _ => None,
                    };
                    if let Some(t) = t {
                        return set_train(t, key, field, v);
                    }
                }
                return Err(Error::Config(format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }

    /// Checks every section; errors are configuration errors.
    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        if self.jobs == 0 {
            return Err(Error::Config("run.jobs must be >= 1".into()));
        }
        Spacing::new(self.phantom.spacing.x, self.phantom.spacing.y, self.phantom.spacing.z).map_err(as_config)?;
        self.phantom.validate().map_err(as_config)?;
        self.backbone.validate().map_err(as_config)?;
        self.train.validate()?;
        self.stage2.validate()?;
        if self.eval.k < 2 {
            return Err(Error::Config("eval.k must be >= 2".into()));
        }
        if let Some(bad) = self.methods.iter().find(|m| !STANDARD_METHODS.contains(&m.as_str())) {
            return Err(Error::Config(format!("unknown method {bad:?}; known: {}", STANDARD_METHODS.join(", "))));
        }
        if !(1e-7..=1e-3).contains(&self.gradcheck_epsilon) {
            return Err(Error::Config("gradcheck.epsilon must lie in [1e-7, 1e-3]".into()));
        }
        if self.gradcheck_coordinates == 0 || self.gradcheck_batch == 0 {
            return Err(Error::Config("gradcheck needs at least one coordinate and one sample".into()));
        }
        Ok(())
    }

    /// Copies stage seeds derived from the master seed into each section.
    pub fn resolve_seeds(&mut self) {
        self.phantom.seed = derive_seed(self.seed, "phantom");
        self.train.seed = derive_seed(self.seed, "train/stage1");
        self.stage2.seed = derive_seed(self.seed, "train/stage2");
        self.eval.seed = derive_seed(self.seed, "eval");
    }

    /// Named seeds of the run, for the record.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("run", self.seed),
            ("phantom", derive_seed(self.seed, "phantom")),
            ("train.stage1", derive_seed(self.seed, "train/stage1")),
            ("train.stage2", derive_seed(self.seed, "train/stage2")),
            ("eval", derive_seed(self.seed, "eval")),
            ("gradcheck", derive_seed(self.seed, "gradcheck")),
        ]
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.phantom;
        let mut e: Vec<(String, String)> = [
            ("run.seed", self.seed.to_string()),
            ("run.jobs", self.jobs.to_string()),
            ("phantom.n_subjects", p.n_subjects.to_string()),
            ("phantom.balanced", p.balanced.to_string()),
            ("phantom.rows", p.rows.to_string()),
            ("phantom.cols", p.cols.to_string()),
            ("phantom.slices", p.slices.to_string()),
            ("phantom.spacing_x", p.spacing.x.to_string()),
            ("phantom.spacing_y", p.spacing.y.to_string()),
            ("phantom.spacing_z", p.spacing.z.to_string()),
            ("phantom.center_jitter", p.center_jitter.to_string()),
            ("phantom.background_hu_mean", p.background_hu_mean.to_string()),
            ("phantom.background_hu_std", p.background_hu_std.to_string()),
            ("phantom.noise_sigma", p.noise_sigma.to_string()),
            ("phantom.lesion_rate", p.lesion_rate.to_string()),
            ("phantom.lesion_radius_min_mm", p.lesion_radius_mm.0.to_string()),
            ("phantom.lesion_radius_max_mm", p.lesion_radius_mm.1.to_string()),
            ("phantom.lesion_hu_min", p.lesion_hu.0.to_string()),
            ("phantom.lesion_hu_max", p.lesion_hu.1.to_string()),
            ("phantom.lesion_spread_mm", p.lesion_spread_mm.to_string()),
            ("phantom.lesion_slice_spread", p.lesion_slice_spread.to_string()),
            ("phantom.texture_contrast", p.texture_contrast.to_string()),
            ("phantom.texture_period_mm", p.texture_period_mm.to_string()),
            ("label.a", p.label.a.to_string()),
            ("label.b", p.label.b.to_string()),
            ("label.bias", p.label.bias.to_string()),
            ("label.agatston_ref", p.label.agatston_ref.to_string()),
            ("grade.cutpoints", list(&p.grade.cutpoints)),
            ("grade.flip_probability", p.grade.flip_probability.to_string()),
            ("scoring.threshold_hu", p.scoring.threshold_hu.to_string()),
            ("scoring.min_area_mm2", p.scoring.min_area_mm2.to_string()),
            ("backbone.depth", self.backbone.depth.to_string()),
            ("backbone.feature_dim", self.backbone.feature_dim.to_string()),
            ("backbone.input_side", self.backbone.input_side.to_string()),
            ("train.strategy", self.train.strategy.to_string()),
            ("train.pretrained", self.pretrained.clone().unwrap_or_default()),
            ("train.hybrid", self.train_hybrid.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        e.extend(train_entries("train", &self.train));
        e.push(("stage2.source".into(), self.stage2_source.to_string()));
        e.push(("stage2.strategy".into(), self.stage2.strategy.to_string()));
        e.extend(train_entries("stage2", &self.stage2));
        let tail = [
            ("eval.k", self.eval.k.to_string()),
            ("eval.stratified", self.eval.stratified.to_string()),
            ("eval.methods", self.methods.join(",")),
            ("gradcheck.epsilon", self.gradcheck_epsilon.to_string()),
            ("gradcheck.coordinates", self.gradcheck_coordinates.to_string()),
            ("gradcheck.batch", self.gradcheck_batch.to_string()),
            ("gradcheck.tolerance", self.gradcheck_tolerance.to_string()),
        ];
        e.extend(tail.into_iter().map(|(k, v)| (k.to_string(), v)));
        e
    }

    /// The resolved configuration as parseable text.
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn train_entries(section: &str, t: &TrainConfig) -> Vec<(String, String)> {
    let key = |f: &str| format!("{section}.{f}");
    let mut e = vec![(key("learning_rate"), t.learning_rate.to_string())];
    if let Some(h) = t.head_learning_rate {
        e.push((key("head_learning_rate"), h.to_string()));
    }
    e.extend([
        (key("epochs"), t.epochs.to_string()),
        (key("batch_size"), t.batch_size.to_string()),
        (key("scale_min"), t.scale_range.0.to_string()),
        (key("scale_max"), t.scale_range.1.to_string()),
        (key("eval_scale"), t.eval_scale.to_string()),
        (key("bn_momentum"), t.bn_momentum.to_string()),
    ]);
    e
}

fn set_train(t: &mut TrainConfig, key: &str, field: &str, v: &str) -> Result<()> {
    match field {
        "learning_rate" => t.learning_rate = parse(key, v)?,
        "head_learning_rate" => t.head_learning_rate = Some(parse(key, v)?),
        "epochs" => t.epochs = parse(key, v)?,
        "batch_size" => t.batch_size = parse(key, v)?,
        "scale_min" => t.scale_range.0 = parse(key, v)?,
        "scale_max" => t.scale_range.1 = parse(key, v)?,
        "eval_scale" => t.eval_scale = parse(key, v)?,
        "bn_momentum" => t.bn_momentum = parse(key, v)?,
        _ => return Err(Error::Config(format!("unknown key {key:?}"))),
    }
    Ok(())
}
