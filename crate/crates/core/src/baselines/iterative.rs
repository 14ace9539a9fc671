//! Chained-equation iterative imputation over the context window.
//!
//! Every grid position (the center included) gets a linear regression on
//! the normalized step rates of all other positions, the heart rates of the
//! context cells and the target's calendar one-hots. Training imputes
//! deterministically in the alternating order; inference draws several
//! noisy chained sweeps and averages the resulting center step counts.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::baselines::fill::prediction_wear;
use crate::error::{Error, Result};
use crate::math;
use crate::model::train::{Instance, TrainingSet};
use crate::model::view::ParticipantView;
use crate::rng;
use crate::series::MAX_RATE_MULTIPLIER;
use crate::window::WindowShape;

/// Alternate between the first and last unvisited position of a row-major
/// grid: `0, n−1, 1, n−2, …`. For an odd-sized grid with a centered target
/// the center comes last.
pub fn imputation_order(n_positions: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_positions);
    let (mut lo, mut hi) = (0usize, n_positions);
    while lo < hi {
        out.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            out.push(hi);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeConfig {
    /// Initial SGD step size; decays as `eta0 / t^power_t`.
    pub eta0: f64,
    pub power_t: f64,
    /// Half-width of the epsilon-insensitive loss.
    pub epsilon: f64,
    /// L2 penalty.
    pub alpha: f64,
    /// Passes over the data per regression fit.
    pub epochs: usize,
    /// Chained sweeps during training.
    pub iterations: usize,
    pub seed: u64,
    pub shape: WindowShape,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            eta0: 0.001,
            power_t: 0.25,
            epsilon: 0.01,
            alpha: 1e-4,
            epochs: 2,
            iterations: 2,
            seed: 0,
            shape: WindowShape::default(),
        }
    }
}

/// One participant-hour laid out on the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    /// Normalized step rate per grid position, 0 where unobserved.
    pub x: Vec<f64>,
    pub observed: Vec<bool>,
    /// Normalized heart rate per grid position (0 at the center and where
    /// unobserved).
    pub hr: Vec<f64>,
    pub day_of_week: u8,
    pub hour_of_day: u8,
    /// Normalized-rate clamp `[−μ/σ, (1.5·s_max − μ)/σ]`.
    pub bounds: (f64, f64),
}

impl WindowRow {
    /// `center_visible` keeps the target's own value (training rows only).
    pub fn build(view: &ParticipantView<'_>, shape: WindowShape, t: usize, center_visible: bool) -> Self {
        let (rows, cols) = (shape.rows(), shape.cols());
        let (cr, cc) = shape.center();
        let days = shape.day_offsets();
        let n = rows * cols;
        let mut row = Self {
            x: vec![0.0; n],
            observed: vec![false; n],
            hr: vec![0.0; n],
            day_of_week: view.series.block(t).day_of_week,
            hour_of_day: view.series.block(t).hour_of_day,
            bounds: {
                let s = &view.stats;
                (s.normalize_rate(0.0), s.normalize_rate(MAX_RATE_MULTIPLIER * s.max_train_step_rate))
            },
        };
        for r in 0..rows {
            for (c, d) in days.iter().enumerate() {
                let f = r * cols + c;
                let h = t as i64 + d * 24 + r as i64 - shape.hour_radius as i64;
                if !(0..view.len() as i64).contains(&h) || !view.is_visible(h as usize) {
                    continue;
                }
                let center = (r, c) == (cr, cc);
                if center && !center_visible {
                    continue;
                }
                row.x[f] = view.z_rate(h as usize);
                row.observed[f] = true;
                if !center {
                    row.hr[f] = view.z_hr(h as usize);
                }
            }
        }
        row
    }

    #[inline]
    fn clamp(&self, v: f64) -> f64 {
        v.max(self.bounds.0).min(self.bounds.1)
    }
}

/// Per-sample record of a multiple-imputation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputationSample {
    /// Normalized center rate after the sweep.
    pub center_z: f64,
    pub rate: f64,
    pub steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultipleImputation {
    pub steps: f64,
    pub samples: Vec<ImputationSample>,
}

/// Fitted chained equations.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeImputer {
    pub shape: WindowShape,
    pub order: Vec<usize>,
    /// Per position: `[rates (n) ‖ heart rates (n) ‖ dow (7) ‖ hod (24)]`;
    /// the position's own rate weight stays 0.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Residual variance per position.
    pub sigma2: Vec<f64>,
}

impl IterativeImputer {
    pub fn zeros(shape: WindowShape) -> Self {
        let n = shape.rows() * shape.cols();
        Self {
            shape,
            order: imputation_order(n),
            weights: vec![vec![0.0; 2 * n + 31]; n],
            bias: vec![0.0; n],
            sigma2: vec![0.0; n],
        }
    }

    pub fn n_positions(&self) -> usize {
        self.bias.len()
    }

    pub fn center(&self) -> usize {
        let (r, c) = self.shape.center();
        r * self.shape.cols() + c
    }

    /// `g^i` evaluated on `row`, ignoring the row's own value at `i`.
    pub fn regress(&self, i: usize, row: &WindowRow) -> f64 {
        let n = self.n_positions();
        let w = &self.weights[i];
        let mut acc = self.bias[i];
        for j in 0..n {
            if j != i {
                acc += w[j] * row.x[j];
            }
            acc += w[n + j] * row.hr[j];
        }
        acc + w[2 * n + row.day_of_week as usize] + w[2 * n + 7 + row.hour_of_day as usize]
    }

    fn sgd_update(&mut self, i: usize, row: &WindowRow, eta: f64, cfg: &IterativeConfig) {
        let resid = self.regress(i, row) - row.x[i];
        let d = if resid > cfg.epsilon {
            1.0
        } else if resid < -cfg.epsilon {
            -1.0
        } else {
            0.0
        };
        let n = self.n_positions();
        let w = &mut self.weights[i];
        let decay = 1.0 - eta * cfg.alpha;
        w.iter_mut().for_each(|v| *v *= decay);
        if d != 0.0 {
            let g = eta * d;
            for j in 0..n {
                if j != i {
                    w[j] -= g * row.x[j];
                }
                w[n + j] -= g * row.hr[j];
            }
            w[2 * n + row.day_of_week as usize] -= g;
            w[2 * n + 7 + row.hour_of_day as usize] -= g;
            self.bias[i] -= g;
        }
    }

    /// One deterministic chained sweep over the unobserved positions.
    pub fn sweep(&self, row: &mut WindowRow) {
        for &i in &self.order {
            if !row.observed[i] {
                row.x[i] = row.clamp(self.regress(i, row));
            }
        }
    }

    /// Deterministic chained prediction of the target (noise-free sweep).
    pub fn infer_deterministic(&self, view: &ParticipantView<'_>, t: usize) -> f64 {
        let mut row = WindowRow::build(view, self.shape, t, false);
        self.sweep(&mut row);
        let rate = view.stats.denormalize_rate(row.x[self.center()]);
        rate * f64::from(prediction_wear(view.series, t))
    }

    /// Multiple-imputation inference: `samples` noisy chained sweeps with
    /// noise `N(0, σ_i²)` on every imputed position, clamped, averaged over
    /// the resulting center step counts.
    pub fn infer(&self, view: &ParticipantView<'_>, t: usize, samples: usize, seed: u64) -> MultipleImputation {
        let base = WindowRow::build(view, self.shape, t, false);
        let wear = f64::from(prediction_wear(view.series, t));
        let sd: Vec<f64> = self.sigma2.iter().map(|&v| math::sqrt(v.max(0.0))).collect();
        let mut r = rng::stream(seed, &[0x3C1E, t as u64]);
        let mut records = Vec::with_capacity(samples);
        for _ in 0..samples {
            let mut row = base.clone();
            for &i in &self.order {
                if !row.observed[i] {
                    let eps: f64 = StandardNormal.sample(&mut r);
                    row.x[i] = row.clamp(self.regress(i, &row) + sd[i] * eps);
                }
            }
            let center_z = row.x[self.center()];
            let rate = view.stats.denormalize_rate(center_z);
            records.push(ImputationSample {
                center_z,
                rate,
                steps: rate * wear,
            });
        }
        let steps = records.iter().map(|s| s.steps).sum::<f64>() / samples.max(1) as f64;
        MultipleImputation { steps, samples: records }
    }
}

/// Fit the chained regressions on training windows and estimate residual
/// variances on validation windows.
pub fn iterative_fit(data: &TrainingSet<'_>, cfg: &IterativeConfig) -> Result<IterativeImputer> {
    if data.train.is_empty() {
        return Err(Error::InsufficientData("no training targets".into()));
    }
    let mut imp = IterativeImputer::zeros(cfg.shape);
    let n = imp.n_positions();
    let build = |list: &[Instance], center: bool| -> Vec<WindowRow> {
        list.iter()
            .map(|i| WindowRow::build(&data.views[i.participant], cfg.shape, i.hour, center))
            .collect()
    };
    let mut rows = build(&data.train, true);
    let order = imp.order.clone();
    let mut steps = vec![1u64; n];
    for sweep in 0..cfg.iterations {
        for &i in &order {
            let mut members: Vec<usize> = (0..rows.len()).filter(|&k| rows[k].observed[i]).collect();
            for epoch in 0..cfg.epochs {
                members.shuffle(&mut rng::stream(cfg.seed, &[0x51CE, sweep as u64, i as u64, epoch as u64]));
                for &k in &members {
                    let eta = cfg.eta0 / math::powf(steps[i] as f64, cfg.power_t);
                    imp.sgd_update(i, &rows[k], eta, cfg);
                    steps[i] += 1;
                }
            }
            for row in rows.iter_mut().filter(|r| !r.observed[i]) {
                row.x[i] = row.clamp(imp.regress(i, row));
            }
        }
    }

    // σ² from a deterministic sweep over validation windows, whose centers
    // are compared against the held-out truth.
    let mut sq = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    let center = imp.center();
    for inst in &data.val {
        let view = &data.views[inst.participant];
        let mut row = WindowRow::build(view, cfg.shape, inst.hour, false);
        for &i in &order {
            let p = imp.regress(i, &row);
            if row.observed[i] {
                sq[i] += (p - row.x[i]) * (p - row.x[i]);
                cnt[i] += 1;
            } else {
                row.x[i] = row.clamp(p);
            }
        }
        let truth = view.stats.normalize_rate(view.series.rate(inst.hour).unwrap_or(0.0));
        let p = row.x[center];
        sq[center] += (p - truth) * (p - truth);
        cnt[center] += 1;
    }
    imp.sigma2 = sq.iter().zip(&cnt).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
    Ok(imp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{HourMask, HourlyBlock, ParticipantSeries};

    #[test]
    fn order_alternates_and_ends_at_center() {
        assert_eq!(imputation_order(9), vec![0, 8, 1, 7, 2, 6, 3, 5, 4]);
        let o = imputation_order(207);
        assert_eq!(*o.last().unwrap(), 4 * 23 + 11);
        let mut s = o.clone();
        s.sort();
        assert_eq!(s, (0..207).collect::<Vec<_>>());
    }

    fn series(weeks: usize, rate_of: impl Fn(usize) -> Option<u64>) -> ParticipantSeries {
        let blocks = (0..weeks * 168)
            .map(|t| {
                let (dow, hod) = (((t / 24) % 7) as u8, (t % 24) as u8);
                match rate_of(t) {
                    Some(r) => HourlyBlock::new(r * 60, 60, Some(70.0), dow, hod).unwrap(),
                    None => HourlyBlock::missing(dow, hod),
                }
            })
            .collect();
        ParticipantSeries::new("i", blocks).unwrap()
    }

    #[test]
    fn constant_data_gives_zero_residuals() {
        let s = series(12, |t| if t % 5 == 0 { None } else { Some(7) });
        let eligible: Vec<usize> = (900..1100).filter(|&t| s.is_observed(t)).collect();
        let train = HourMask::from_indices(s.len(), eligible.iter().copied().filter(|t| t % 3 != 0));
        let val = HourMask::from_indices(s.len(), eligible.iter().copied().filter(|t| t % 3 == 0));
        let empty = HourMask::empty(s.len());
        let series_list = [s.clone()];
        let data = TrainingSet::from_masks(&series_list, &[train], &[val], &[empty]).unwrap();
        let imp = iterative_fit(&data, &IterativeConfig::default()).unwrap();
        assert!(imp.sigma2.iter().all(|&v| v < 1e-4), "{:?}", imp.sigma2);
        let view = &data.views[0];
        let t = 1000 + (0..5).find(|k| (1000 + k) % 5 == 0).unwrap();
        assert!((imp.infer_deterministic(view, t) - 7.0 * 60.0).abs() < 1.0);
    }

    #[test]
    fn zero_variance_matches_deterministic_and_samples_replay() {
        let s = series(12, |t| if t % 7 == 3 { None } else { Some(((t * 13) % 29) as u64) });
        let view = ParticipantView::new(&s, HourMask::from_indices(s.len(), [1000])).unwrap();
        let mut imp = IterativeImputer::zeros(WindowShape::default());
        let mut r = rng::stream(1, &[]);
        for w in imp.weights.iter_mut() {
            for v in w.iter_mut() {
                *v = rand::Rng::gen_range(&mut r, -0.01..0.01);
            }
        }
        let det = imp.infer_deterministic(&view, 1000);
        let mi = imp.infer(&view, 1000, 5, 9);
        assert!((mi.steps - det).abs() <= 1e-12 * det.abs().max(1.0));

        imp.sigma2.iter_mut().for_each(|v| *v = 0.5);
        let mi = imp.infer(&view, 1000, 5, 9);
        let replay = mi.samples.iter().map(|s| s.steps).sum::<f64>() / 5.0;
        assert_eq!(mi.steps, replay);
        let (lo, hi) = (
            view.stats.normalize_rate(0.0),
            view.stats.normalize_rate(1.5 * view.stats.max_train_step_rate),
        );
        for smp in &mi.samples {
            assert!(smp.center_z >= lo && smp.center_z <= hi);
        }
        assert_eq!(mi, imp.infer(&view, 1000, 5, 9));
    }
}
