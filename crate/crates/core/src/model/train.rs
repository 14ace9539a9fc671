//! Mini-batch training with Adam, early stopping on validation Micro MAE
//! and a learning-rate × d_k grid search.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::attention::{AttentionModel, Scratch, Trace};
use crate::model::view::ParticipantView;
use crate::nn::Adam;
use crate::series::{HourMask, ParticipantSeries};
use crate::window::WindowShape;
use crate::{par, rng};

/// One prediction target: a participant (index into the views) and an hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Instance {
    pub participant: usize,
    pub hour: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub d_k: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Train on a fresh random subset of this size each epoch.
    pub max_instances_per_epoch: Option<usize>,
    /// Instances per gradient work unit. Fixed so that the reduction order
    /// does not depend on the thread count.
    pub chunk_size: usize,
    pub shape: WindowShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            d_k: 8,
            batch_size: 20_000,
            epochs: 30,
            seed: 0,
            patience: None,
            max_instances_per_epoch: None,
            chunk_size: 128,
            shape: WindowShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.d_k == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return bad("d_k, batch size and chunk size must be positive");
        }
        if self.max_instances_per_epoch == Some(0) {
            return bad("max instances per epoch must be positive");
        }
        Ok(())
    }
}

/// Model inputs for every participant plus the train and validation targets.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    pub views: Vec<ParticipantView<'a>>,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
}

impl<'a> TrainingSet<'a> {
    /// Views hide validation and test hours; training targets stay visible
    /// and are masked per instance.
    pub fn from_masks(
        series: &'a [ParticipantSeries],
        train: &[HourMask],
        val: &[HourMask],
        test: &[HourMask],
    ) -> Result<Self> {
        if train.len() != series.len() || val.len() != series.len() || test.len() != series.len() {
            return Err(Error::Shape("one mask per participant required".into()));
        }
        let mut views = Vec::with_capacity(series.len());
        let mut tr = Vec::new();
        let mut va = Vec::new();
        for (p, s) in series.iter().enumerate() {
            views.push(ParticipantView::new(s, val[p].union(&test[p]))?);
            tr.extend(train[p].indices().map(|hour| Instance { participant: p, hour }));
            va.extend(val[p].indices().map(|hour| Instance { participant: p, hour }));
        }
        Ok(Self {
            views,
            train: tr,
            val: va,
        })
    }

    fn truth(&self, i: Instance) -> f64 {
        self.views[i.participant].series.block(i.hour).steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_mae: f64,
    /// NaN without validation targets.
    pub val_micro_mae: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochLog> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

/// Group instances by participant and cut them into fixed-size chunks.
fn chunks(instances: &[(usize, Instance)], size: usize) -> Vec<Vec<(usize, Instance)>> {
    let mut sorted = instances.to_vec();
    sorted.sort_by_key(|&(_, i)| i);
    let mut out: Vec<Vec<(usize, Instance)>> = Vec::new();
    for item in sorted {
        match out.last_mut() {
            Some(c) if c.len() < size && c[0].1.participant == item.1.participant => c.push(item),
            _ => out.push(vec![item]),
        }
    }
    out
}

/// Predicted step counts for `instances`, in input order.
pub fn predict_instances(
    model: &AttentionModel,
    views: &[ParticipantView<'_>],
    instances: &[Instance],
    chunk_size: usize,
) -> Result<Vec<f64>> {
    let indexed: Vec<(usize, Instance)> = instances.iter().copied().enumerate().collect();
    let work = chunks(&indexed, chunk_size.max(1));
    let results = par::map(&work, |chunk| -> Result<Vec<(usize, f64)>> {
        let view = &views[chunk[0].1.participant];
        let prep = model.prepare(view);
        let mut trace = Trace::default();
        chunk
            .iter()
            .map(|&(k, i)| Ok((k, model.predict_with(view, &prep, i.hour, &mut trace)?.steps)))
            .collect()
    });
    let mut out = vec![0.0; instances.len()];
    for r in results {
        for (k, v) in r? {
            out[k] = v;
        }
    }
    Ok(out)
}

fn micro_mae(model: &AttentionModel, data: &TrainingSet<'_>, instances: &[Instance], chunk: usize) -> Result<f64> {
    if instances.is_empty() {
        return Ok(f64::NAN);
    }
    let pred = predict_instances(model, &data.views, instances, chunk)?;
    let total: f64 = instances.iter().zip(&pred).map(|(&i, p)| (p - data.truth(i)).abs()).sum();
    Ok(total / instances.len() as f64)
}

/// Gradient of the batch-mean absolute error and each instance's loss.
fn batch_gradient(
    model: &AttentionModel,
    data: &TrainingSet<'_>,
    batch: &[(usize, Instance)],
    chunk_size: usize,
) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    let n = batch.len() as f64;
    let work = chunks(batch, chunk_size);
    let results = par::map(&work, |chunk| -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
        let view = &data.views[chunk[0].1.participant];
        let prep = model.prepare(view);
        let mut grads = model.gradients(view);
        let mut trace = Trace::default();
        let mut scratch = Scratch::default();
        let mut losses = Vec::with_capacity(chunk.len());
        for &(k, i) in chunk {
            let y = data.truth(i);
            let p = model.predict_with(view, &prep, i.hour, &mut trace)?;
            losses.push((k, (p.steps - y).abs()));
            if !p.fallback {
                let d = crate::nn::mae_grad(p.steps, y, 1) / n;
                model.backward(view, &trace, d, &mut grads, &mut scratch)?;
            }
        }
        Ok((model.finish_gradients(view, grads), losses))
    });
    let mut total = vec![0.0; model.n_values()];
    let mut losses = Vec::with_capacity(batch.len());
    for r in results {
        let (g, l) = r?;
        for (a, b) in total.iter_mut().zip(&g) {
            *a += b;
        }
        losses.extend(l);
    }
    Ok((total, losses))
}

/// Train `model` in place and leave it at the best-validation checkpoint.
pub fn fit(model: &mut AttentionModel, data: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::InsufficientData("no training targets".into()));
    }
    let chunk = cfg.chunk_size;
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    let val0 = micro_mae(model, data, &data.val, chunk)?;
    log.epochs.push(EpochLog {
        epoch: 0,
        train_mae: micro_mae(model, data, &data.train, chunk)?,
        val_micro_mae: val0,
        steps: 0,
    });
    let mut best = (val0, model.flat_values());
    let mut since_best = 0;
    let mut losses = vec![f64::NAN; data.train.len()];

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[0x7EA1, epoch as u64]));
        if let Some(m) = cfg.max_instances_per_epoch {
            order.truncate(m);
        }
        losses.iter_mut().for_each(|l| *l = f64::NAN);
        for batch in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, Instance)> = batch.iter().map(|&k| (k, data.train[k])).collect();
            let (grad, batch_losses) = batch_gradient(model, data, &batch, chunk)?;
            for (k, l) in batch_losses {
                losses[k] = l;
            }
            let mut at = 0;
            for p in model.params_mut() {
                let n = p.len();
                p.grad.copy_from_slice(&grad[at..at + n]);
                at += n;
            }
            adam.step(model.params_mut().iter_mut());
        }
        // summed in instance order so the value is independent of batching
        let (sum, count) = losses.iter().filter(|l| !l.is_nan()).fold((0.0, 0usize), |(s, c), l| (s + l, c + 1));
        let val = micro_mae(model, data, &data.val, chunk)?;
        log.epochs.push(EpochLog {
            epoch,
            train_mae: sum / count as f64,
            val_micro_mae: val,
            steps: adam.step_count,
        });
        if val < best.0 || (best.0.is_nan() && !val.is_nan()) {
            best = (val, model.flat_values());
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        if data.val.is_empty() {
            log.best_epoch = epoch;
            best.1 = model.flat_values();
        }
        if cfg.patience.is_some_and(|p| since_best >= p) {
            break;
        }
    }
    model.set_flat_values(&best.1)?;
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub lr: f64,
    pub d_k: usize,
    /// `(lr, d_k, mean best validation Micro MAE across folds)` per grid point.
    pub scores: Vec<(f64, usize, f64)>,
}

/// Pick `(lr, d_k)` by mean best-validation Micro MAE over `folds`.
pub fn grid_search(folds: &[TrainingSet<'_>], lrs: &[f64], d_ks: &[usize], base: &TrainConfig) -> Result<GridResult> {
    if folds.is_empty() || lrs.is_empty() || d_ks.is_empty() {
        return Err(Error::InvalidConfig("grid search needs folds, learning rates and d_k values".into()));
    }
    let mut scores = Vec::new();
    for &lr in lrs {
        for &d_k in d_ks {
            let cfg = TrainConfig { lr, d_k, ..*base };
            let mut total = 0.0;
            for (f, data) in folds.iter().enumerate() {
                let mut model = AttentionModel::new(cfg.shape, d_k, rng::derive(cfg.seed, &[f as u64]))?;
                let log = fit(&mut model, data, &TrainConfig { seed: rng::derive(cfg.seed, &[f as u64]), ..cfg })?;
                total += log.best().map_or(f64::NAN, |e| e.val_micro_mae);
            }
            scores.push((lr, d_k, total / folds.len() as f64));
        }
    }
    let &(lr, d_k, _) = scores
        .iter()
        .filter(|s| !s.2.is_nan())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .unwrap_or(&scores[0]);
    Ok(GridResult { lr, d_k, scores })
}

/// Mean prediction of several models.
pub fn ensemble_predict(
    models: &[AttentionModel],
    views: &[ParticipantView<'_>],
    instances: &[Instance],
    chunk_size: usize,
) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    let mut sum = vec![0.0; instances.len()];
    for m in models {
        for (s, p) in sum.iter_mut().zip(predict_instances(m, views, instances, chunk_size)?) {
            *s += p;
        }
    }
    let k = models.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_cohort, SynthConfig};

    fn small_set(series: &[ParticipantSeries]) -> (Vec<HourMask>, Vec<HourMask>, Vec<HourMask>) {
        let mut tr = Vec::new();
        let mut va = Vec::new();
        let mut te = Vec::new();
        for s in series {
            let (mut a, mut b, mut c) = (HourMask::empty(s.len()), HourMask::empty(s.len()), HourMask::empty(s.len()));
            let mut k = 0;
            for t in 0..s.len() {
                if !s.is_observed(t) || !crate::series::is_eval_hour(s.block(t).hour_of_day) {
                    continue;
                }
                match k % 20 {
                    0..=15 => a.insert(t),
                    16..=18 => b.insert(t),
                    _ => c.insert(t),
                }
                k += 1;
            }
            tr.push(a);
            va.push(b);
            te.push(c);
        }
        (tr, va, te)
    }

    fn cohort() -> Vec<ParticipantSeries> {
        let cfg = SynthConfig {
            n_participants: 2,
            n_weeks: 4,
            seed: 3,
            ..SynthConfig::default()
        };
        generate_synthetic_cohort(&cfg).unwrap().observed
    }

    #[test]
    fn zero_learning_rate_is_a_fixed_point() {
        let series = cohort();
        let (tr, va, te) = small_set(&series);
        let data = TrainingSet::from_masks(&series, &tr, &va, &te).unwrap();
        let mut model = AttentionModel::new(WindowShape::default(), 4, 1).unwrap();
        let before = model.flat_values();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 64, ..TrainConfig::default() };
        let log = fit(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.flat_values(), before);
        for e in &log.epochs {
            assert!((e.train_mae - log.epochs[0].train_mae).abs() < 1e-9 * log.epochs[0].train_mae);
            assert_eq!(e.val_micro_mae, log.epochs[0].val_micro_mae);
        }
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let series = cohort();
        let (tr, va, te) = small_set(&series);
        let data = TrainingSet::from_masks(&series, &tr, &va, &te).unwrap();
        let cfg = TrainConfig { lr: 0.01, epochs: 2, batch_size: 32, seed: 5, ..TrainConfig::default() };
        let run = || {
            let mut m = AttentionModel::new(WindowShape::default(), 4, 7).unwrap();
            let log = fit(&mut m, &data, &cfg).unwrap();
            (m, log)
        };
        let (m1, l1) = run();
        let (m2, l2) = run();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
        assert!(l1.epochs[2].train_mae < l1.epochs[0].train_mae, "{:?}", l1.epochs);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let series = cohort();
        let (_, va, te) = small_set(&series);
        let empty: Vec<HourMask> = series.iter().map(|s| HourMask::empty(s.len())).collect();
        let data = TrainingSet::from_masks(&series, &empty, &va, &te).unwrap();
        let mut m = AttentionModel::new(WindowShape::default(), 4, 7).unwrap();
        assert!(fit(&mut m, &data, &TrainConfig::default()).is_err());
    }
}
