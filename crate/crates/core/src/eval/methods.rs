//! Running any imputer on a common set of held-out targets.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::baselines::fill::{FillImputer, FillSpec};
use crate::baselines::iterative::{iterative_fit, IterativeConfig};
use crate::baselines::knn::{KnnImputer, KnnSpec};
use crate::baselines::regression::{regression_fit, RegressionConfig};
use crate::error::{Error, Result};
use crate::eval::split::{Part, StratifiedSplit};
use crate::model::train::{fit, predict_instances, Instance, TrainConfig, TrainLog, TrainingSet};
use crate::model::view::ParticipantView;
use crate::model::AttentionModel;
use crate::series::{is_eval_hour, HourMask, ParticipantSeries};
use crate::{par, rng};

/// Samples drawn by multiple-imputation inference.
pub const MI_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSpec {
    Fill(FillSpec),
    Knn(KnnSpec),
    Regression,
    Iterative,
    Attention,
}

impl MethodSpec {
    pub fn is_trained(&self) -> bool {
        matches!(self, Self::Regression | Self::Iterative | Self::Attention)
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Fill(s) => s.fmt(f),
            Self::Knn(s) => s.fmt(f),
            Self::Regression => f.write_str("regression"),
            Self::Iterative => f.write_str("iterative"),
            Self::Attention => f.write_str("attention"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regression" => Ok(Self::Regression),
            "iterative" => Ok(Self::Iterative),
            "attention" => Ok(Self::Attention),
            _ if s.starts_with("knn:") => s.parse().map(Self::Knn),
            _ => s.parse().map(Self::Fill),
        }
    }
}

/// Held-out targets shared by every method.
#[derive(Debug, Clone)]
pub struct EvalTask<'a> {
    pub series: &'a [ParticipantSeries],
    pub train: Vec<HourMask>,
    pub validation: Vec<HourMask>,
    /// Hidden from every method at prediction time.
    pub holdout: Vec<HourMask>,
    /// Scored hours per participant, ascending; all lie in `holdout`.
    pub targets: Vec<Vec<usize>>,
}

impl<'a> EvalTask<'a> {
    /// Score the test part of `split`.
    pub fn from_split(series: &'a [ParticipantSeries], split: &StratifiedSplit) -> Result<Self> {
        if split.participants.len() != series.len() {
            return Err(Error::Shape("split and cohort differ in participants".into()));
        }
        let test = split.masks(Part::Test, series);
        Ok(Self {
            series,
            train: split.masks(Part::Train, series),
            validation: split.masks(Part::Validation, series),
            targets: split.participants.iter().map(|p| p.test.clone()).collect(),
            holdout: test,
        })
    }

    /// Score the test part plus every artificially masked 6:00–22:00 hour.
    /// `truth` is the complete cohort the split was drawn from after
    /// masking; `masked` marks the hours removed.
    pub fn with_masked(truth: &'a [ParticipantSeries], split: &StratifiedSplit, masked: &[HourMask]) -> Result<Self> {
        let mut task = Self::from_split(truth, split)?;
        if masked.len() != truth.len() {
            return Err(Error::Shape("one masked set per participant required".into()));
        }
        for (p, s) in truth.iter().enumerate() {
            if task.train[p].indices().chain(task.validation[p].indices()).any(|t| masked[p].contains(t)) {
                return Err(Error::InvalidInput(format!(
                    "participant {}: split uses hours that were masked",
                    s.id
                )));
            }
            let extra = masked[p].indices().filter(|&t| s.is_observed(t) && is_eval_hour(s.block(t).hour_of_day));
            let mut all: Vec<usize> = task.targets[p].iter().copied().chain(extra).collect();
            all.sort_unstable();
            all.dedup();
            task.targets[p] = all;
            task.holdout[p] = task.holdout[p].union(&masked[p]);
        }
        Ok(task)
    }

    pub fn n_targets(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }

    pub fn instances(&self) -> Vec<Instance> {
        self.targets
            .iter()
            .enumerate()
            .flat_map(|(p, ts)| ts.iter().map(move |&hour| Instance { participant: p, hour }))
            .collect()
    }

    /// True step counts of the targets.
    pub fn truths(&self) -> Vec<Vec<u64>> {
        self.targets
            .iter()
            .zip(self.series)
            .map(|(ts, s)| ts.iter().map(|&t| s.block(t).steps).collect())
            .collect()
    }

    pub fn training_set(&self) -> Result<TrainingSet<'a>> {
        TrainingSet::from_masks(self.series, &self.train, &self.validation, &self.holdout)
    }

    pub fn eval_views(&self) -> Result<Vec<ParticipantView<'a>>> {
        self.series.iter().zip(&self.holdout).map(|(s, h)| ParticipantView::new(s, h.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MethodConfig {
    pub attention: TrainConfig,
    pub regression: RegressionConfig,
    pub iterative: IterativeConfig,
    pub mi_samples: usize,
}

impl MethodConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self {
            mi_samples: MI_SAMPLES,
            ..Self::default()
        };
        c.attention.seed = seed;
        c.regression.seed = seed;
        c.iterative.seed = seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub name: String,
    /// Aligned with `EvalTask::targets`.
    pub predictions: Vec<Vec<f64>>,
    pub log: Option<TrainLog>,
    pub model: Option<AttentionModel>,
}

fn regroup(task: &EvalTask<'_>, flat: Vec<f64>) -> Vec<Vec<f64>> {
    let mut it = flat.into_iter();
    task.targets.iter().map(|ts| it.by_ref().take(ts.len()).collect()).collect()
}

/// Run one method. `attention` supplies a trained model instead of
/// training one.
pub fn run_method(
    spec: MethodSpec,
    task: &EvalTask<'_>,
    cfg: &MethodConfig,
    attention: Option<&AttentionModel>,
) -> Result<MethodRun> {
    let name = alloc::string::ToString::to_string(&spec);
    let mut log = None;
    let mut model_out = None;
    let idx: Vec<usize> = (0..task.series.len()).collect();
    let predictions = match spec {
        MethodSpec::Fill(fs) => par::map(&idx, |&p| {
            let imp = FillImputer::new(&task.series[p], fs, &task.holdout[p])?;
            Ok(task.targets[p].iter().map(|&t| imp.predict(t)).collect())
        })
        .into_iter()
        .collect::<Result<Vec<Vec<f64>>>>()?,
        MethodSpec::Knn(ks) => par::map(&idx, |&p| {
            let imp = KnnImputer::new(&task.series[p], &task.holdout[p])?;
            Ok(task.targets[p].iter().map(|&t| imp.predict(t, ks)).collect())
        })
        .into_iter()
        .collect::<Result<Vec<Vec<f64>>>>()?,
        MethodSpec::Regression => {
            let (m, l) = regression_fit(&task.training_set()?, &cfg.regression)?;
            log = Some(l);
            regroup(task, m.predict_instances(&task.eval_views()?, &task.instances()))
        }
        MethodSpec::Iterative => {
            let imp = iterative_fit(&task.training_set()?, &cfg.iterative)?;
            let views = task.eval_views()?;
            par::map(&idx, |&p| {
                let seed = rng::derive(cfg.iterative.seed, &[0x1717, p as u64]);
                task.targets[p]
                    .iter()
                    .map(|&t| imp.infer(&views[p], t, cfg.mi_samples.max(1), seed).steps)
                    .collect()
            })
        }
        MethodSpec::Attention => {
            let model = match attention {
                Some(m) => m.clone(),
                None => {
                    let tc = &cfg.attention;
                    let mut m = AttentionModel::new(tc.shape, tc.d_k, tc.seed)?;
                    log = Some(fit(&mut m, &task.training_set()?, tc)?);
                    m
                }
            };
            let p = predict_instances(&model, &task.eval_views()?, &task.instances(), cfg.attention.chunk_size)?;
            model_out = Some(model);
            regroup(task, p)
        }
    };
    Ok(MethodRun {
        name,
        predictions,
        log,
        model: model_out,
    })
}
