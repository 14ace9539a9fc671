//! Linear regression imputation from the context window.
//!
//! Features are the normalized step rate and heart rate of every context
//! cell (zero when hidden, missing or outside the series) followed by the
//! target's day-of-week and hour-of-day one-hots. Training minimizes the
//! same step-count MAE as the attention model.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::baselines::fill::prediction_wear;
use crate::error::{Error, Result};
use crate::model::train::{EpochLog, Instance, TrainLog, TrainingSet};
use crate::model::view::ParticipantView;
use crate::nn::{mae_grad, Adam, ParamTensor};
use crate::series::{clip_rate, MAX_RATE_MULTIPLIER};
use crate::window::WindowShape;
use crate::{par, rng};

/// `2 · n_context + 7 + 24`.
pub fn n_features(shape: WindowShape) -> usize {
    2 * shape.n_context() + 7 + 24
}

/// Context-cell visibility and regression features of hour `t`. Returns
/// whether any context cell is visible.
pub fn regression_features(view: &ParticipantView<'_>, offsets: &[i64], t: usize, out: &mut Vec<f64>) -> bool {
    let n = offsets.len();
    out.clear();
    out.resize(2 * n + 31, 0.0);
    let mut any = false;
    for (i, &o) in offsets.iter().enumerate() {
        let h = t as i64 + o;
        if (0..view.len() as i64).contains(&h) && view.is_visible(h as usize) {
            out[i] = view.z_rate(h as usize);
            out[n + i] = view.z_hr(h as usize);
            any = true;
        }
    }
    let b = view.series.block(t);
    out[2 * n + b.day_of_week as usize] = 1.0;
    out[2 * n + 7 + b.hour_of_day as usize] = 1.0;
    any
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shape: WindowShape,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 50_000,
            epochs: 20,
            seed: 0,
            shape: WindowShape::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    pub shape: WindowShape,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl RegressionModel {
    /// All-zero weights: predicts each participant's mean rate.
    pub fn zeros(shape: WindowShape) -> Self {
        Self {
            shape,
            weights: vec![0.0; n_features(shape)],
            bias: 0.0,
        }
    }

    fn forward(&self, view: &ParticipantView<'_>, offsets: &[i64], t: usize, feat: &mut Vec<f64>) -> Option<(f64, f64)> {
        if !regression_features(view, offsets, t, feat) {
            return None;
        }
        let z = self.bias + self.weights.iter().zip(feat.iter()).map(|(w, x)| w * x).sum::<f64>();
        let rate = view.stats.denormalize_rate(z);
        Some((rate, f64::from(prediction_wear(view.series, t)) * clip_rate(rate, view.stats.max_train_step_rate)))
    }

    /// Predicted step count; the DW+HD median fill answers when no context
    /// cell is visible.
    pub fn predict(&self, view: &ParticipantView<'_>, t: usize) -> f64 {
        let offsets = self.shape.offsets();
        self.forward(view, &offsets, t, &mut Vec::new())
            .map_or_else(|| view.fallback().predict(t), |(_, steps)| steps)
    }

    pub fn predict_instances(&self, views: &[ParticipantView<'_>], instances: &[Instance]) -> Vec<f64> {
        let offsets = self.shape.offsets();
        let mut feat = Vec::new();
        instances
            .iter()
            .map(|i| {
                let view = &views[i.participant];
                self.forward(view, &offsets, i.hour, &mut feat)
                    .map_or_else(|| view.fallback().predict(i.hour), |(_, s)| s)
            })
            .collect()
    }
}

fn micro_mae(model: &RegressionModel, data: &TrainingSet<'_>, instances: &[Instance]) -> f64 {
    if instances.is_empty() {
        return f64::NAN;
    }
    let pred = model.predict_instances(&data.views, instances);
    let total: f64 = instances
        .iter()
        .zip(&pred)
        .map(|(i, p)| (p - data.views[i.participant].series.block(i.hour).steps as f64).abs())
        .sum();
    total / instances.len() as f64
}

/// Train with Adam on the batch-mean step-count MAE, keeping the
/// best-validation weights.
pub fn regression_fit(data: &TrainingSet<'_>, cfg: &RegressionConfig) -> Result<(RegressionModel, TrainLog)> {
    if data.train.is_empty() {
        return Err(Error::InsufficientData("no training targets".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) {
        return Err(Error::InvalidConfig("batch size must be positive and lr non-negative".into()));
    }
    let mut model = RegressionModel::zeros(cfg.shape);
    let offsets = cfg.shape.offsets();
    let nf = n_features(cfg.shape);
    let mut w = ParamTensor::zeros("regression.weight", &[nf]);
    let mut b = ParamTensor::zeros("regression.bias", &[1]);
    let mut adam = Adam::new(cfg.lr);
    let mut log = TrainLog::default();
    let val0 = micro_mae(&model, data, &data.val);
    log.epochs.push(EpochLog {
        epoch: 0,
        train_mae: micro_mae(&model, data, &data.train),
        val_micro_mae: val0,
        steps: 0,
    });
    let mut best = (val0, model.clone());
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<Instance> = data.train.clone();
        order.shuffle(&mut rng::stream(cfg.seed, &[0x8E6, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let n = batch.len() as f64;
            let parts = par::map(&batch.chunks(1024).collect::<Vec<_>>(), |chunk| {
                let mut g = vec![0.0; nf + 1];
                let mut feat = Vec::new();
                let mut loss = 0.0;
                for i in chunk.iter() {
                    let view = &data.views[i.participant];
                    let y = view.series.block(i.hour).steps as f64;
                    match model.forward(view, &offsets, i.hour, &mut feat) {
                        Some((rate, steps)) => {
                            loss += (steps - y).abs();
                            let cap = MAX_RATE_MULTIPLIER * view.stats.max_train_step_rate;
                            if rate > 0.0 && rate < cap {
                                let wear = f64::from(prediction_wear(view.series, i.hour));
                                let d = mae_grad(steps, y, 1) / n * wear * view.stats.step_rate_std;
                                for (gj, x) in g.iter_mut().zip(&feat) {
                                    *gj += d * x;
                                }
                                g[nf] += d;
                            }
                        }
                        None => loss += (view.fallback().predict(i.hour) - y).abs(),
                    }
                }
                (g, loss)
            });
            for (g, l) in parts {
                for (a, v) in w.grad.iter_mut().zip(&g[..nf]) {
                    *a += v;
                }
                b.grad[0] += g[nf];
                loss_sum += l;
            }
            adam.step([&mut w, &mut b]);
            model.weights.copy_from_slice(&w.values);
            model.bias = b.values[0];
        }
        let val = micro_mae(&model, data, &data.val);
        log.epochs.push(EpochLog {
            epoch,
            train_mae: loss_sum / order.len() as f64,
            val_micro_mae: val,
            steps: adam.step_count,
        });
        if val < best.0 || data.val.is_empty() {
            best = (val, model.clone());
            log.best_epoch = epoch;
        }
    }
    Ok((best.1, log))
}
