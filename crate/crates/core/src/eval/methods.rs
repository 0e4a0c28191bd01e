use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};
use crate::imaging::PatchStack;
use crate::net::{
    predict, train_stage1, train_stage2, BackboneConfig, ModelParams, ScoreNorm, ScoreSource, TrainConfig,
    TrainExample,
};
use crate::seed::derive_seed;
use crate::subject::Subject;

/// Stage-one models of one fold, shared by every network method whose
/// stage one is configured identically.
#[derive(Debug, Default)]
pub struct Stage1Cache {
    models: Mutex<HashMap<String, Arc<ModelParams>>>,
}

impl Stage1Cache {
    /// The cached model for `key`, training it with `train` on first use.
    pub fn get_or_train(&self, key: &str, train: impl FnOnce() -> Result<ModelParams>) -> Result<Arc<ModelParams>> {
        let mut models = self.models.lock().expect("stage-one cache poisoned");
        if let Some(m) = models.get(key) {
            return Ok(Arc::clone(m));
        }
        let m = Arc::new(train()?);
        models.insert(key.to_string(), Arc::clone(&m));
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.models.lock().expect("stage-one cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What a method sees of the current fold besides its data.
pub struct FoldContext<'a> {
    pub fold: usize,
    /// Seed of this fold, derived from the run seed and the fold index.
    pub seed: u64,
    pub cache: &'a Stage1Cache,
}

/// A scorer evaluated by cross-validation: fit on the training split
/// (a no-op for fixed scores) and score the test split. Larger scores mean
/// higher risk of nonsurvival.
pub trait RiskMethod: Send + Sync {
    fn name(&self) -> String;
    fn fit_predict(&self, train: &[&Subject], test: &[&Subject], ctx: &FoldContext<'_>) -> Result<Vec<f64>>;
}

/// Score-only methods read directly from each subject's calcium report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FixedScore {
    Agatston,
    RiskCategory,
    Volume,
    SqrtVolume,
    Grade,
    Constant(f64),
}

impl FixedScore {
    pub fn score(&self, s: &Subject) -> f64 {
        match self {
            FixedScore::Agatston => s.scores.agatston,
            FixedScore::RiskCategory => f64::from(s.scores.risk_category.index()),
            FixedScore::Volume => s.scores.volume_mm3,
            FixedScore::SqrtVolume => s.scores.sqrt_volume,
            FixedScore::Grade => f64::from(s.grade()),
            FixedScore::Constant(v) => *v,
        }
    }
}

impl fmt::Display for FixedScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedScore::Agatston => f.write_str("agatston"),
            FixedScore::RiskCategory => f.write_str("category"),
            FixedScore::Volume => f.write_str("volume"),
            FixedScore::SqrtVolume => f.write_str("sqrt_volume"),
            FixedScore::Grade => f.write_str("grade"),
            FixedScore::Constant(v) => write!(f, "constant({v})"),
        }
    }
}

impl FromStr for FixedScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "agatston" => Ok(FixedScore::Agatston),
            "category" => Ok(FixedScore::RiskCategory),
            "volume" => Ok(FixedScore::Volume),
            "sqrt_volume" => Ok(FixedScore::SqrtVolume),
            "grade" => Ok(FixedScore::Grade),
            other => other
                .strip_prefix("constant(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|v| v.parse().ok())
                .map(FixedScore::Constant)
                .ok_or_else(|| Error::Config(format!("unknown score method {other:?}"))),
        }
    }
}

impl RiskMethod for FixedScore {
    fn name(&self) -> String {
        self.to_string()
    }

    fn fit_predict(&self, _train: &[&Subject], test: &[&Subject], _ctx: &FoldContext<'_>) -> Result<Vec<f64>> {
        Ok(test.iter().map(|s| self.score(s)).collect())
    }
}

/// RiskNet (image only) or HyRiskNet (image plus one score), trained per
/// fold. Hybrid variants start from the fold's stage-one RiskNet.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMethod {
    pub backbone: BackboneConfig,
    pub stage1: TrainConfig,
    /// Score source and stage-two settings of a hybrid variant.
    pub stage2: Option<(ScoreSource, TrainConfig)>,
}

impl NetworkMethod {
    pub fn risknet(backbone: BackboneConfig, stage1: TrainConfig) -> Self {
        NetworkMethod { backbone, stage1, stage2: None }
    }

    pub fn hyrisknet(backbone: BackboneConfig, stage1: TrainConfig, source: ScoreSource, stage2: TrainConfig) -> Self {
        NetworkMethod { backbone, stage1, stage2: Some((source, stage2)) }
    }

    fn stage1_key(&self) -> String {
        format!("{:?}|{:?}", self.backbone, self.stage1)
    }

    /// Trains (or fetches) stage one, then stage two for hybrids.
    pub fn fit(&self, train: &[&Subject], ctx: &FoldContext<'_>) -> Result<ModelParams> {
        let stage1 = ctx.cache.get_or_train(&self.stage1_key(), || {
            let examples: Vec<TrainExample<'_>> =
                train.iter().map(|s| TrainExample { patch: &s.patch, label: s.label, score: None }).collect();
            let config = TrainConfig { seed: derive_seed(ctx.seed, "stage1"), ..self.stage1.clone() };
            Ok(train_stage1(&examples, &self.backbone, &config, None)?.params)
        })?;
        let Some((source, stage2)) = &self.stage2 else {
            return Ok((*stage1).clone());
        };
        let norm = ScoreNorm::fit(*source, train.iter().map(|s| &s.scores));
        let examples = train
            .iter()
            .map(|s| Ok(TrainExample { patch: &s.patch, label: s.label, score: Some(norm.apply(&s.scores)?) }))
            .collect::<Result<Vec<_>>>()?;
        let config = TrainConfig { seed: derive_seed(ctx.seed, &format!("stage2/{source}")), ..stage2.clone() };
        Ok(train_stage2(&stage1, &examples, norm, &config)?.params)
    }
}

/// Nonsurvival probabilities of a trained model on `subjects`.
pub fn predict_subjects(params: &ModelParams, subjects: &[&Subject], eval_scale: f64) -> Result<Vec<f64>> {
    let patches: Vec<&PatchStack> = subjects.iter().map(|s| &s.patch).collect();
    let scores = match &params.score_norm {
        Some(norm) if params.hybrid => {
            Some(subjects.iter().map(|s| norm.apply(&s.scores)).collect::<Result<Vec<_>>>()?)
        }
        _ => None,
    };
    predict(params, &patches, scores.as_deref(), eval_scale)
}

impl RiskMethod for NetworkMethod {
    fn name(&self) -> String {
        match &self.stage2 {
            None => "risknet".into(),
            Some((source, _)) => format!("hyrisknet_{source}"),
        }
    }

    fn fit_predict(&self, train: &[&Subject], test: &[&Subject], ctx: &FoldContext<'_>) -> Result<Vec<f64>> {
        let model = self.fit(train, ctx)?;
        let scale = self.stage2.as_ref().map_or(self.stage1.eval_scale, |(_, c)| c.eval_scale);
        predict_subjects(&model, test, scale)
    }
}

/// The eight methods of the standard comparison: five score-only methods,
/// RiskNet, and HyRiskNet with the subjective grade and with Agatston.
pub fn standard_methods(backbone: BackboneConfig, stage1: TrainConfig, stage2: TrainConfig) -> Vec<Box<dyn RiskMethod>> {
    vec![
        Box::new(FixedScore::Agatston),
        Box::new(FixedScore::RiskCategory),
        Box::new(FixedScore::Volume),
        Box::new(FixedScore::SqrtVolume),
        Box::new(FixedScore::Grade),
        Box::new(NetworkMethod::risknet(backbone, stage1.clone())),
        Box::new(NetworkMethod::hyrisknet(backbone, stage1.clone(), ScoreSource::SubjectiveGrade, stage2.clone())),
        Box::new(NetworkMethod::hyrisknet(backbone, stage1, ScoreSource::Agatston, stage2)),
    ]
}
