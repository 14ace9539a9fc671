//! k-nearest-neighbour imputation over local activity profiles.
//!
//! Neighbours are every visible observed hour of the same participant. Each
//! hour is described by its profile with its own entry hidden, and distance
//! is squared Euclidean. The softmax variant weights neighbours by
//! `exp(−B / τ)`.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::baselines::fill::prediction_wear;
use crate::error::{Error, Result};
use crate::math;
use crate::model::view::{ParticipantView, LAPR_LEN};
use crate::series::{clip_to_step_count, HourMask, ParticipantSeries};

pub const K_GRID: [usize; 6] = [1, 7, 14, 21, 28, 35];
pub const TAU_GRID: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnnWeighting {
    Uniform,
    Softmax { tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnSpec {
    pub k: usize,
    pub weighting: KnnWeighting,
}

impl fmt::Display for KnnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.weighting {
            KnnWeighting::Uniform => write!(f, "knn:uniform:{}", self.k),
            KnnWeighting::Softmax { tau } => write!(f, "knn:softmax:{}:{}", self.k, tau),
        }
    }
}

impl FromStr for KnnSpec {
    type Err = Error;

    /// `knn:uniform:<k>` or `knn:softmax:<k>:<tau>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(alloc::format!("cannot parse kNN spec `{s}`"));
        let parts: Vec<&str> = s.split(':').collect();
        let k = |p: &str| p.parse::<usize>().ok().filter(|&k| k > 0).ok_or_else(bad);
        match parts.as_slice() {
            ["knn", "uniform", kk] => Ok(Self {
                k: k(kk)?,
                weighting: KnnWeighting::Uniform,
            }),
            ["knn", "softmax", kk, tau] => {
                let tau: f64 = tau.parse().ok().filter(|t: &f64| *t > 0.0 && t.is_finite()).ok_or_else(bad)?;
                Ok(Self {
                    k: k(kk)?,
                    weighting: KnnWeighting::Softmax { tau },
                })
            }
            _ => Err(bad()),
        }
    }
}

/// Normalized weights for neighbours at squared distances `dist`.
pub fn neighbor_weights(dist: &[f64], weighting: KnnWeighting) -> Vec<f64> {
    match weighting {
        KnnWeighting::Uniform => alloc::vec![1.0 / dist.len() as f64; dist.len()],
        KnnWeighting::Softmax { tau } => {
            let min = dist.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = dist.iter().map(|d| math::exp(-(d - min) / tau)).collect();
            let sum: f64 = w.iter().sum();
            w.into_iter().map(|v| v / sum).collect()
        }
    }
}

/// Neighbour pool and profiles of one participant under a hold-out set.
#[derive(Debug, Clone)]
pub struct KnnImputer<'a> {
    view: ParticipantView<'a>,
    pool: Vec<usize>,
    /// Row-major `[pool, 145]`.
    features: Vec<f64>,
}

impl<'a> KnnImputer<'a> {
    pub fn new(series: &'a ParticipantSeries, holdout: &HourMask) -> Result<Self> {
        let view = ParticipantView::new(series, holdout.clone())?;
        let pool: Vec<usize> = (0..series.len()).filter(|&t| view.is_visible(t)).collect();
        let mut features = alloc::vec![0.0; pool.len() * LAPR_LEN];
        for (row, &t) in pool.iter().enumerate() {
            view.lapr_into(t, Some(t), &mut features[row * LAPR_LEN..(row + 1) * LAPR_LEN]);
        }
        Ok(Self { view, pool, features })
    }

    pub fn view(&self) -> &ParticipantView<'a> {
        &self.view
    }

    /// The `k` nearest pool hours to `t` (excluding `t`), nearest first,
    /// ties broken by hour, with their squared distances.
    pub fn neighbors(&self, t: usize, k: usize) -> Vec<(usize, f64)> {
        let mut query = [0.0; LAPR_LEN];
        self.view.lapr_into(t, Some(t), &mut query);
        let mut d: Vec<(usize, f64)> = self
            .pool
            .iter()
            .enumerate()
            .filter(|&(_, &h)| h != t)
            .map(|(row, &h)| {
                let f = &self.features[row * LAPR_LEN..(row + 1) * LAPR_LEN];
                (h, f.iter().zip(&query).map(|(a, b)| (a - b) * (a - b)).sum())
            })
            .collect();
        d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        d.truncate(k);
        d
    }

    /// Unclipped predicted step rate, or `None` when the pool is empty.
    pub fn predict_rate(&self, t: usize, spec: KnnSpec) -> Option<f64> {
        let nb = self.neighbors(t, spec.k);
        if nb.is_empty() {
            return None;
        }
        let dist: Vec<f64> = nb.iter().map(|n| n.1).collect();
        let w = neighbor_weights(&dist, spec.weighting);
        let series = self.view.series;
        Some(nb.iter().zip(&w).map(|(&(h, _), w)| w * series.rate(h).unwrap_or(0.0)).sum())
    }

    /// Predicted step count, falling back to the DW+HD median fill when
    /// there are no neighbours.
    pub fn predict(&self, t: usize, spec: KnnSpec) -> f64 {
        match self.predict_rate(t, spec) {
            Some(r) => clip_to_step_count(r, prediction_wear(self.view.series, t), self.view.stats.max_train_step_rate),
            None => self.view.fallback().predict(t),
        }
    }
}

/// Predicted step counts for every held-out hour, in ascending hour order.
pub fn knn_impute(series: &ParticipantSeries, spec: KnnSpec, holdout: &HourMask) -> Result<Vec<(usize, f64)>> {
    let imp = KnnImputer::new(series, holdout)?;
    Ok(holdout.indices().map(|t| (t, imp.predict(t, spec))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::HourlyBlock;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn parse_round_trip() {
        for s in ["knn:uniform:7", "knn:softmax:14:0.001"] {
            assert_eq!(s.parse::<KnnSpec>().unwrap().to_string(), s);
        }
        assert!("knn:uniform:0".parse::<KnnSpec>().is_err());
        assert!("knn:softmax:3".parse::<KnnSpec>().is_err());
    }

    #[test]
    fn softmax_weights_normalize_and_approach_uniform() {
        let d = [0.5, 2.0, 7.0];
        let w = neighbor_weights(&d, KnnWeighting::Softmax { tau: 0.3 });
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v > 0.0));
        assert!(w[0] > w[1] && w[1] > w[2]);
        let w = neighbor_weights(&d, KnnWeighting::Softmax { tau: 1e9 });
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    fn series(rates: &[u64]) -> ParticipantSeries {
        let blocks = rates
            .iter()
            .enumerate()
            .map(|(t, &r)| HourlyBlock::new(r * 60, 60, None, ((t / 24) % 7) as u8, (t % 24) as u8).unwrap())
            .collect();
        ParticipantSeries::new("k", blocks).unwrap()
    }

    #[test]
    fn k1_returns_nearest_neighbour_rate() {
        let rates: Vec<u64> = (0..400).map(|t| ((t * 7) % 23) as u64).collect();
        let s = series(&rates);
        let target = 200;
        let imp = KnnImputer::new(&s, &HourMask::from_indices(s.len(), [target])).unwrap();
        let nb = imp.neighbors(target, 1);
        let spec = KnnSpec { k: 1, weighting: KnnWeighting::Uniform };
        let expected = s.rate(nb[0].0).unwrap() * 60.0;
        assert_eq!(imp.predict(target, spec), expected.min(60.0 * 1.5 * 22.0));
    }

    #[test]
    fn uniform_average_of_three() {
        let rates: Vec<u64> = (0..300).map(|t| ((t * 5) % 17) as u64).collect();
        let s = series(&rates);
        let imp = KnnImputer::new(&s, &HourMask::from_indices(s.len(), [150])).unwrap();
        let nb = imp.neighbors(150, 3);
        let mean: f64 = nb.iter().map(|n| s.rate(n.0).unwrap()).sum::<f64>() / 3.0;
        let spec = KnnSpec { k: 3, weighting: KnnWeighting::Uniform };
        assert!((imp.predict_rate(150, spec).unwrap() - mean).abs() < 1e-12);
        // distances are sorted, ties by hour
        assert!(nb.windows(2).all(|w| w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
    }

    #[test]
    fn pool_smaller_than_k_uses_everything() {
        let mut rates = vec![0u64; 48];
        rates[10] = 5;
        let s = {
            let blocks = rates
                .iter()
                .enumerate()
                .map(|(t, &r)| {
                    let (dow, hod) = (((t / 24) % 7) as u8, (t % 24) as u8);
                    if t == 10 || t == 11 || t == 30 {
                        HourlyBlock::new(r * 60 + 60, 60, None, dow, hod).unwrap()
                    } else {
                        HourlyBlock::missing(dow, hod)
                    }
                })
                .collect();
            ParticipantSeries::new("k", blocks).unwrap()
        };
        let imp = KnnImputer::new(&s, &HourMask::from_indices(48, [30])).unwrap();
        assert_eq!(imp.neighbors(30, 35).len(), 2);
    }
}
