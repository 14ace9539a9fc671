//! Domain types for hourly wearable data and the elementary transforms shared
//! by every imputer.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// First hour of day (inclusive) of the prediction window.
pub const EVAL_FIRST_HOUR: u8 = 6;
/// Last hour of day (inclusive) of the prediction window.
pub const EVAL_LAST_HOUR: u8 = 22;
/// Percentile above which observations are ignored for normalization.
pub const PERCENTILE_CUTOFF: f64 = 0.999;
/// Upper clip on predicted step rates, as a multiple of the participant's
/// maximum training step rate.
pub const MAX_RATE_MULTIPLIER: f64 = 1.5;

/// Whether an hour of day lies inside the 6:00–22:00 prediction window.
#[inline]
pub fn is_eval_hour(hour_of_day: u8) -> bool {
    (EVAL_FIRST_HOUR..=EVAL_LAST_HOUR).contains(&hour_of_day)
}

/// One hour of rolled-up wearable data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HourlyBlock {
    pub steps: u64,
    pub wear_minutes: u8,
    pub heart_rate: Option<f64>,
    pub day_of_week: u8,
    pub hour_of_day: u8,
}

impl HourlyBlock {
    pub fn new(
        steps: u64,
        wear_minutes: u8,
        heart_rate: Option<f64>,
        day_of_week: u8,
        hour_of_day: u8,
    ) -> Result<Self> {
        let block = Self {
            steps,
            wear_minutes,
            heart_rate,
            day_of_week,
            hour_of_day,
        };
        block.validate()?;
        Ok(block)
    }

    /// A block with no wear time.
    pub fn missing(day_of_week: u8, hour_of_day: u8) -> Self {
        Self {
            steps: 0,
            wear_minutes: 0,
            heart_rate: None,
            day_of_week,
            hour_of_day,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.wear_minutes > 60 {
            return Err(Error::InvalidInput(alloc::format!(
                "wear_minutes {} exceeds 60",
                self.wear_minutes
            )));
        }
        if self.day_of_week > 6 || self.hour_of_day > 23 {
            return Err(Error::InvalidInput(alloc::format!(
                "calendar coordinates out of range: day_of_week {}, hour_of_day {}",
                self.day_of_week,
                self.hour_of_day
            )));
        }
        if self.wear_minutes == 0 && (self.steps != 0 || self.heart_rate.is_some()) {
            return Err(Error::InvalidInput(
                "a block with zero wear minutes must have zero steps and no heart rate".into(),
            ));
        }
        if let Some(hr) = self.heart_rate {
            if !(hr >= 0.0 && hr.is_finite()) {
                return Err(Error::InvalidInput(alloc::format!("invalid heart rate {hr}")));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn is_observed(&self) -> bool {
        self.wear_minutes > 0
    }
}

/// Response indicator: 1 when the block has any wear time, else 0.
#[inline]
pub fn response_indicator(block: &HourlyBlock) -> u8 {
    u8::from(block.wear_minutes > 0)
}

/// Steps per worn minute. Errors on blocks without wear time.
pub fn step_rate(block: &HourlyBlock) -> Result<f64> {
    if block.wear_minutes == 0 {
        return Err(Error::NoWearTime(usize::MAX));
    }
    Ok(block.steps as f64 / f64::from(block.wear_minutes))
}

/// One participant's dense hourly series. Block `i` sits at absolute hour `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantSeries {
    pub id: String,
    pub start_day_of_week: u8,
    pub start_hour: u8,
    blocks: Vec<HourlyBlock>,
}

impl ParticipantSeries {
    /// Build a series, checking block invariants and calendar consistency.
    /// The calendar anchor is taken from the first block.
    pub fn new(id: impl Into<String>, blocks: Vec<HourlyBlock>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::InvalidInput("a series needs at least one block".into()))?;
        let series = Self {
            id: id.into(),
            start_day_of_week: first.day_of_week,
            start_hour: first.hour_of_day,
            blocks,
        };
        for (t, b) in series.blocks.iter().enumerate() {
            b.validate()?;
            let (dow, hod) = series.calendar_at(t as i64);
            if (b.day_of_week, b.hour_of_day) != (dow, hod) {
                return Err(Error::InvalidInput(alloc::format!(
                    "block {t} of {} has calendar ({}, {}), expected ({dow}, {hod})",
                    series.id,
                    b.day_of_week,
                    b.hour_of_day
                )));
            }
        }
        Ok(series)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn blocks(&self) -> &[HourlyBlock] {
        &self.blocks
    }

    #[inline]
    pub fn block(&self, t: usize) -> &HourlyBlock {
        &self.blocks[t]
    }

    /// Day of week and hour of day at absolute hour `t`. Works for hours
    /// before the start or past the end by extending the calendar.
    pub fn calendar_at(&self, t: i64) -> (u8, u8) {
        let hours = i64::from(self.start_hour) + t;
        let hod = hours.rem_euclid(24) as u8;
        let day = hours.div_euclid(24);
        let dow = (i64::from(self.start_day_of_week) + day).rem_euclid(7) as u8;
        (dow, hod)
    }

    /// Step rate at `t`, with the hour in the error on missing blocks.
    pub fn step_rate(&self, t: usize) -> Result<f64> {
        step_rate(&self.blocks[t]).map_err(|_| Error::NoWearTime(t))
    }

    /// Step rate at `t` if the block is observed.
    #[inline]
    pub fn rate(&self, t: usize) -> Option<f64> {
        let b = &self.blocks[t];
        (b.wear_minutes > 0).then(|| b.steps as f64 / f64::from(b.wear_minutes))
    }

    #[inline]
    pub fn is_observed(&self, t: usize) -> bool {
        self.blocks[t].wear_minutes > 0
    }

    /// Replace the step count of block `t`, keeping every other field.
    pub fn with_steps(&self, t: usize, steps: u64) -> Result<Self> {
        let mut out = self.clone();
        out.blocks[t].steps = steps;
        out.blocks[t].validate()?;
        Ok(out)
    }

    /// Relabel days of week by a cyclic shift of `shift` days.
    pub fn shift_days(&self, shift: u8) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.day_of_week = (b.day_of_week + shift) % 7;
        }
        out.start_day_of_week = (out.start_day_of_week + shift) % 7;
        out
    }
}

/// A set of hour indices of one participant (hold-out sets, split parts).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HourMask {
    bits: Vec<bool>,
}

impl HourMask {
    pub fn empty(len: usize) -> Self {
        Self {
            bits: alloc::vec![false; len],
        }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(len);
        for t in indices {
            m.insert(t);
        }
        m
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn contains(&self, t: usize) -> bool {
        self.bits.get(t).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, t: usize) {
        if t >= self.bits.len() {
            self.bits.resize(t + 1, false);
        }
        self.bits[t] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn union(&self, other: &Self) -> Self {
        let len = self.len().max(other.len());
        Self {
            bits: (0..len).map(|i| self.contains(i) || other.contains(i)).collect(),
        }
    }
}

/// Per-participant normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub step_rate_mean: f64,
    pub step_rate_std: f64,
    pub heart_rate_mean: f64,
    pub heart_rate_std: f64,
    /// Largest observed step rate among training-visible blocks (`s_max`).
    pub max_train_step_rate: f64,
    pub percentile_cutoff: f64,
    /// Step-rate variance was zero and the std was coerced to 1.
    pub degenerate: bool,
}

impl NormStats {
    /// Statistics over every observed block.
    pub fn compute(series: &ParticipantSeries) -> Result<Self> {
        Self::compute_excluding(series, &HourMask::empty(series.len()))
    }

    /// Statistics over observed blocks not in `holdout`. Values above the
    /// 99.9th nearest-rank percentile of their variable are ignored for
    /// mean and std; `s_max` uses all visible rates.
    pub fn compute_excluding(series: &ParticipantSeries, holdout: &HourMask) -> Result<Self> {
        let mut rates = Vec::new();
        let mut hrs = Vec::new();
        for (t, b) in series.blocks().iter().enumerate() {
            if b.wear_minutes == 0 || holdout.contains(t) {
                continue;
            }
            rates.push(b.steps as f64 / f64::from(b.wear_minutes));
            if let Some(hr) = b.heart_rate {
                hrs.push(hr);
            }
        }
        if rates.len() < 2 {
            return Err(Error::InsufficientData(alloc::format!(
                "participant {} has {} visible observed blocks, need at least 2",
                series.id,
                rates.len()
            )));
        }
        let max_rate = rates.iter().copied().fold(0.0, f64::max);
        let (rate_mean, rate_std, degenerate) = trimmed_moments(rates);
        let (hr_mean, hr_std) = if hrs.is_empty() {
            (0.0, 1.0)
        } else {
            let (m, s, _) = trimmed_moments(hrs);
            (m, s)
        };
        Ok(Self {
            step_rate_mean: rate_mean,
            step_rate_std: rate_std,
            heart_rate_mean: hr_mean,
            heart_rate_std: hr_std,
            max_train_step_rate: max_rate,
            percentile_cutoff: PERCENTILE_CUTOFF,
            degenerate,
        })
    }

    #[inline]
    pub fn normalize_rate(&self, rate: f64) -> f64 {
        (rate - self.step_rate_mean) / self.step_rate_std
    }

    #[inline]
    pub fn denormalize_rate(&self, z: f64) -> f64 {
        z * self.step_rate_std + self.step_rate_mean
    }

    /// Normalized heart rate; a missing value maps to the participant mean (0).
    #[inline]
    pub fn normalize_heart_rate(&self, hr: Option<f64>) -> f64 {
        hr.map_or(0.0, |h| (h - self.heart_rate_mean) / self.heart_rate_std)
    }

    /// Upper bound on predicted step rates.
    #[inline]
    pub fn rate_cap(&self) -> f64 {
        MAX_RATE_MULTIPLIER * self.max_train_step_rate
    }
}

/// Mean and population std of values at or below the cutoff percentile.
fn trimmed_moments(mut values: Vec<f64>) -> (f64, f64, bool) {
    values.sort_by(f64::total_cmp);
    let cutoff = math::nearest_rank(&values, PERCENTILE_CUTOFF);
    let kept: Vec<f64> = values.into_iter().filter(|&v| v <= cutoff).collect();
    let mean = math::mean(&kept);
    let std = math::pop_std(&kept);
    if std > 0.0 {
        (mean, std, false)
    } else {
        (mean, 1.0, true)
    }
}

pub fn z_normalize(x: f64, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::NonPositiveStd(std));
    }
    Ok((x - mean) / std)
}

pub fn denormalize(z: f64, mean: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(Error::NonPositiveStd(std));
    }
    Ok(z * std + mean)
}

/// `wear · min(1.5·s_max, max(0, rate))`.
#[inline]
pub fn clip_to_step_count(predicted_rate: f64, wear_minutes: u8, s_max: f64) -> f64 {
    f64::from(wear_minutes) * clip_rate(predicted_rate, s_max)
}

/// `min(1.5·s_max, max(0, rate))`.
#[inline]
pub fn clip_rate(rate: f64, s_max: f64) -> f64 {
    rate.max(0.0).min(MAX_RATE_MULTIPLIER * s_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn series_from_rates(rates: &[(u64, u8)]) -> ParticipantSeries {
        let blocks = rates
            .iter()
            .enumerate()
            .map(|(t, &(steps, wear))| {
                let hod = (t % 24) as u8;
                let dow = ((t / 24) % 7) as u8;
                HourlyBlock::new(steps, wear, None, dow, hod).unwrap()
            })
            .collect();
        ParticipantSeries::new("p", blocks).unwrap()
    }

    #[test]
    fn response_indicator_cases() {
        let b = |w| HourlyBlock::new(0, w, None, 0, 0).unwrap();
        assert_eq!(response_indicator(&b(60)), 1);
        assert_eq!(response_indicator(&b(0)), 0);
        assert_eq!(response_indicator(&b(1)), 1);
    }

    #[test]
    fn step_rate_cases() {
        let b = |s, w| HourlyBlock::new(s, w, None, 0, 0).unwrap();
        assert_eq!(step_rate(&b(1200, 60)).unwrap(), 20.0);
        assert_eq!(step_rate(&b(0, 30)).unwrap(), 0.0);
        assert_eq!(step_rate(&b(500, 25)).unwrap(), 20.0);
        assert!(matches!(step_rate(&b(0, 0)), Err(Error::NoWearTime(_))));
    }

    #[test]
    fn block_invariants_enforced() {
        assert!(HourlyBlock::new(5, 0, None, 0, 0).is_err());
        assert!(HourlyBlock::new(0, 0, Some(70.0), 0, 0).is_err());
        assert!(HourlyBlock::new(0, 61, None, 0, 0).is_err());
        assert!(HourlyBlock::new(0, 10, None, 7, 0).is_err());
    }

    #[test]
    fn calendar_must_be_consistent() {
        let blocks = vec![
            HourlyBlock::missing(2, 23),
            HourlyBlock::missing(3, 0),
            HourlyBlock::missing(3, 2),
        ];
        assert!(ParticipantSeries::new("x", blocks).is_err());
        let s = ParticipantSeries::new("x", vec![HourlyBlock::missing(6, 23), HourlyBlock::missing(0, 0)])
            .unwrap();
        assert_eq!(s.calendar_at(-1), (6, 22));
        assert_eq!(s.calendar_at(-24), (5, 23));
        assert_eq!(s.calendar_at(25), (1, 0));
    }

    #[test]
    fn norm_stats_small_oracle() {
        let s = series_from_rates(&[(600, 60), (1200, 60), (1800, 60), (0, 0)]);
        let st = NormStats::compute(&s).unwrap();
        assert_eq!(st.step_rate_mean, 20.0);
        // population std of {10,20,30}
        let expect = ((100.0 + 0.0 + 100.0) / 3.0f64).sqrt();
        assert!((st.step_rate_std - expect).abs() < 1e-12);
        assert_eq!(st.max_train_step_rate, 30.0);
        assert!(!st.degenerate);
    }

    #[test]
    fn norm_stats_excludes_outlier() {
        let mut rates = vec![(600u64, 60u8); 1001];
        rates.push((600_000, 60));
        let st = NormStats::compute(&series_from_rates(&rates)).unwrap();
        assert_eq!(st.step_rate_mean, 10.0);
        assert!(st.degenerate);
        assert_eq!(st.step_rate_std, 1.0);
        assert_eq!(st.max_train_step_rate, 10_000.0);
    }

    #[test]
    fn norm_stats_constant_series_is_degenerate() {
        let st = NormStats::compute(&series_from_rates(&[(300, 60); 10])).unwrap();
        assert_eq!(st.step_rate_mean, 5.0);
        assert_eq!(st.step_rate_std, 1.0);
        assert!(st.degenerate);
    }

    #[test]
    fn norm_stats_needs_two_blocks() {
        let s = series_from_rates(&[(300, 60), (0, 0)]);
        assert!(matches!(NormStats::compute(&s), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn norm_stats_ignores_holdout() {
        let s = series_from_rates(&[(600, 60), (1200, 60), (1800, 60), (999_999, 60)]);
        let st = NormStats::compute_excluding(&s, &HourMask::from_indices(4, [3])).unwrap();
        assert_eq!(st.step_rate_mean, 20.0);
        assert_eq!(st.max_train_step_rate, 30.0);
    }

    #[test]
    fn z_normalize_cases() {
        assert_eq!(z_normalize(20.0, 20.0, 5.0).unwrap(), 0.0);
        assert_eq!(z_normalize(30.0, 20.0, 5.0).unwrap(), 2.0);
        let z = z_normalize(13.7, 4.2, 3.3).unwrap();
        assert!((denormalize(z, 4.2, 3.3).unwrap() - 13.7).abs() <= 1e-12 * 13.7);
        assert!(z_normalize(1.0, 0.0, 0.0).is_err());
        assert!(denormalize(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip_to_step_count(-5.0, 60, 40.0), 0.0);
        assert_eq!(clip_to_step_count(100.0, 60, 40.0), 3600.0);
        assert_eq!(clip_to_step_count(20.0, 30, 40.0), 600.0);
    }

    #[test]
    fn hour_mask_basics() {
        let a = HourMask::from_indices(5, [1, 3]);
        let b = HourMask::from_indices(5, [3, 4]);
        let u = a.union(&b);
        assert_eq!(u.indices().collect::<Vec<_>>(), vec![1, 3, 4]);
        assert_eq!(u.count(), 3);
        assert!(!u.contains(100));
    }
}
