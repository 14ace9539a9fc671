//! Fill imputers: zero, forward, backward, their average, and the mean,
//! micro-mean and median statistics per participant, day of week, hour of
//! day, or day-of-week × hour-of-day cell.
//!
//! Every statistic is personal and ignores held-out blocks. Mean, micro-mean
//! and median use 6:00–22:00 blocks only; forward and backward fills walk
//! over all hours.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;
use crate::series::{clip_to_step_count, is_eval_hour, HourMask, ParticipantSeries};

/// Wear minutes assumed when predicting an originally-missing block.
pub const FULL_HOUR_WEAR: u8 = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FillMethod {
    Zero,
    Forward,
    Backward,
    AvgFb,
    Mean,
    MicroMean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Factor {
    #[default]
    Participant,
    DayOfWeek,
    HourOfDay,
    DwHd,
}

impl Factor {
    pub const ALL: [Factor; 4] = [Factor::Participant, Factor::DayOfWeek, Factor::HourOfDay, Factor::DwHd];

    #[inline]
    fn cell(self, dow: u8, hod: u8) -> usize {
        match self {
            Factor::Participant => 0,
            Factor::DayOfWeek => dow as usize,
            Factor::HourOfDay => hod as usize,
            Factor::DwHd => dow as usize * 24 + hod as usize,
        }
    }

    fn n_cells(self) -> usize {
        match self {
            Factor::Participant => 1,
            Factor::DayOfWeek => 7,
            Factor::HourOfDay => 24,
            Factor::DwHd => 168,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Factor::Participant => "participant",
            Factor::DayOfWeek => "day_of_week",
            Factor::HourOfDay => "hour_of_day",
            Factor::DwHd => "dw_hd",
        }
    }
}

/// A fill method with its grouping factor (ignored by zero/forward/backward/avg_fb).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FillSpec {
    pub method: FillMethod,
    pub factor: Factor,
}

impl FillSpec {
    pub fn new(method: FillMethod, factor: Factor) -> Self {
        let factor = if method.uses_factor() { factor } else { Factor::Participant };
        Self { method, factor }
    }

    pub fn dw_hd_median() -> Self {
        Self::new(FillMethod::Median, Factor::DwHd)
    }
}

impl FillMethod {
    pub fn uses_factor(self) -> bool {
        matches!(self, FillMethod::Mean | FillMethod::MicroMean | FillMethod::Median)
    }

    fn as_str(self) -> &'static str {
        match self {
            FillMethod::Zero => "zero",
            FillMethod::Forward => "forward",
            FillMethod::Backward => "backward",
            FillMethod::AvgFb => "avg_fb",
            FillMethod::Mean => "mean",
            FillMethod::MicroMean => "micro_mean",
            FillMethod::Median => "median",
        }
    }
}

impl fmt::Display for FillSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.method.uses_factor() {
            write!(f, "{}:{}", self.method.as_str(), self.factor.as_str())
        } else {
            f.write_str(self.method.as_str())
        }
    }
}

impl FromStr for FillSpec {
    type Err = Error;

    /// `zero`, `forward`, `backward`, `avg_fb`, or `<mean|micro_mean|median>:<factor>`
    /// with factor one of `participant`, `day_of_week`, `hour_of_day`, `dw_hd`.
    fn from_str(s: &str) -> Result<Self> {
        let (m, f) = match s.split_once(':') {
            Some((m, f)) => (m, Some(f)),
            None => (s, None),
        };
        let method = match m {
            "zero" => FillMethod::Zero,
            "forward" => FillMethod::Forward,
            "backward" => FillMethod::Backward,
            "avg_fb" => FillMethod::AvgFb,
            "mean" => FillMethod::Mean,
            "micro_mean" => FillMethod::MicroMean,
            "median" => FillMethod::Median,
            other => return Err(Error::InvalidInput(alloc::format!("unknown fill method `{other}`"))),
        };
        let factor = match (method.uses_factor(), f) {
            (false, None) => Factor::Participant,
            (false, Some(_)) => {
                return Err(Error::InvalidInput(alloc::format!("`{m}` takes no factor")))
            }
            (true, None) => {
                return Err(Error::InvalidInput(alloc::format!("`{m}` needs a factor, e.g. `{m}:dw_hd`")))
            }
            (true, Some(f)) => match f {
                "participant" => Factor::Participant,
                "day_of_week" | "dw" => Factor::DayOfWeek,
                "hour_of_day" | "hd" => Factor::HourOfDay,
                "dw_hd" => Factor::DwHd,
                other => return Err(Error::InvalidInput(alloc::format!("unknown factor `{other}`"))),
            },
        };
        Ok(Self { method, factor })
    }
}

/// Which hours feed a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HourScope {
    /// 6:00–22:00 only.
    EvalHours,
    All,
}

/// A per-cell step-rate statistic with participant-median fallback for
/// empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    factor: Factor,
    cells: Vec<Option<f64>>,
    participant_median: Option<f64>,
}

impl RateTable {
    /// `method` must be one of mean, micro-mean or median.
    pub fn build(
        series: &ParticipantSeries,
        holdout: &HourMask,
        method: FillMethod,
        factor: Factor,
        scope: HourScope,
    ) -> Result<Self> {
        if !method.uses_factor() {
            return Err(Error::InvalidInput(alloc::format!(
                "{} is not a statistic",
                method.as_str()
            )));
        }
        let n = factor.n_cells();
        let mut rates: Vec<Vec<f64>> = alloc::vec![Vec::new(); n];
        let mut steps = alloc::vec![0u64; n];
        let mut wear = alloc::vec![0u64; n];
        let mut all_rates = Vec::new();
        for (t, b) in series.blocks().iter().enumerate() {
            if !b.is_observed() || holdout.contains(t) {
                continue;
            }
            if scope == HourScope::EvalHours && !is_eval_hour(b.hour_of_day) {
                continue;
            }
            let c = factor.cell(b.day_of_week, b.hour_of_day);
            let r = b.steps as f64 / f64::from(b.wear_minutes);
            rates[c].push(r);
            steps[c] += b.steps;
            wear[c] += u64::from(b.wear_minutes);
            all_rates.push(r);
        }
        let cells = (0..n)
            .map(|c| {
                if rates[c].is_empty() {
                    return None;
                }
                Some(match method {
                    FillMethod::Mean => math::mean(&rates[c]),
                    FillMethod::MicroMean => steps[c] as f64 / wear[c] as f64,
                    _ => math::median(&rates[c]).expect("non-empty"),
                })
            })
            .collect();
        Ok(Self {
            factor,
            cells,
            participant_median: math::median(&all_rates),
        })
    }

    /// Statistic for a calendar cell, falling back to the participant median.
    /// `None` only when the participant has no visible data at all.
    #[inline]
    pub fn lookup(&self, dow: u8, hod: u8) -> Option<f64> {
        self.cells[self.factor.cell(dow, hod)].or(self.participant_median)
    }

    pub fn participant_median(&self) -> Option<f64> {
        self.participant_median
    }
}

/// Largest visible observed step rate (`s_max`), or 0 when nothing is visible.
pub fn max_visible_rate(series: &ParticipantSeries, holdout: &HourMask) -> f64 {
    (0..series.len())
        .filter(|&t| !holdout.contains(t))
        .filter_map(|t| series.rate(t))
        .fold(0.0, f64::max)
}

/// Wear minutes used to turn a predicted rate into a count.
#[inline]
pub fn prediction_wear(series: &ParticipantSeries, t: usize) -> u8 {
    match series.block(t).wear_minutes {
        0 => FULL_HOUR_WEAR,
        w => w,
    }
}

/// A fitted fill imputer for one participant and hold-out set.
#[derive(Debug, Clone)]
pub struct FillImputer<'a> {
    series: &'a ParticipantSeries,
    spec: FillSpec,
    table: Option<RateTable>,
    /// Median over all visible observed blocks (forward/backward edge fallback).
    all_hours_median: Option<f64>,
    s_max: f64,
}

impl<'a> FillImputer<'a> {
    pub fn new(series: &'a ParticipantSeries, spec: FillSpec, holdout: &HourMask) -> Result<Self> {
        let table = if spec.method.uses_factor() {
            Some(RateTable::build(series, holdout, spec.method, spec.factor, HourScope::EvalHours)?)
        } else {
            None
        };
        let visible: Vec<f64> = (0..series.len())
            .filter(|&t| !holdout.contains(t))
            .filter_map(|t| series.rate(t))
            .collect();
        if visible.is_empty() {
            return Err(Error::InsufficientData(alloc::format!(
                "participant {} has no visible observed blocks",
                series.id
            )));
        }
        if let Some(tb) = &table {
            if tb.participant_median.is_none() {
                return Err(Error::InsufficientData(alloc::format!(
                    "participant {} has no visible 6:00-22:00 blocks",
                    series.id
                )));
            }
        }
        Ok(Self {
            series,
            spec,
            table,
            all_hours_median: math::median(&visible),
            s_max: visible.iter().copied().fold(0.0, f64::max),
        })
    }

    pub fn spec(&self) -> FillSpec {
        self.spec
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    /// Unclipped predicted step rate for hour `t`.
    pub fn predict_rate(&self, t: usize) -> f64 {
        let b = self.series.block(t);
        match self.spec.method {
            FillMethod::Zero => 0.0,
            FillMethod::Forward => self.forward(t).or(self.all_hours_median).unwrap_or(0.0),
            FillMethod::Backward => self.backward(t).or(self.all_hours_median).unwrap_or(0.0),
            FillMethod::AvgFb => match (self.forward(t), self.backward(t)) {
                (Some(f), Some(k)) => 0.5 * (f + k),
                (Some(v), None) | (None, Some(v)) => v,
                (None, None) => self.all_hours_median.unwrap_or(0.0),
            },
            _ => self
                .table
                .as_ref()
                .and_then(|tb| tb.lookup(b.day_of_week, b.hour_of_day))
                .unwrap_or(0.0),
        }
    }

    /// Predicted step count for hour `t` (clipped, scaled by wear).
    pub fn predict(&self, t: usize) -> f64 {
        clip_to_step_count(self.predict_rate(t), prediction_wear(self.series, t), self.s_max)
    }

    // Forward/backward fills may read other held-out blocks next to the
    // target; only the target itself is hidden.
    fn forward(&self, t: usize) -> Option<f64> {
        (0..t).rev().find_map(|u| self.series.rate(u))
    }

    fn backward(&self, t: usize) -> Option<f64> {
        (t + 1..self.series.len()).find_map(|u| self.series.rate(u))
    }
}

/// Predicted step counts for every held-out hour, in ascending hour order.
pub fn fill_impute(
    series: &ParticipantSeries,
    spec: FillSpec,
    holdout: &HourMask,
) -> Result<Vec<(usize, f64)>> {
    let imputer = FillImputer::new(series, spec, holdout)?;
    Ok(holdout.indices().map(|t| (t, imputer.predict(t))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::HourlyBlock;
    use alloc::string::ToString;
    use alloc::vec;

    /// Series starting Monday 00:00 with (steps, wear) per hour.
    fn series(data: &[(u64, u8)]) -> ParticipantSeries {
        let blocks = data
            .iter()
            .enumerate()
            .map(|(t, &(s, w))| HourlyBlock::new(s, w, None, ((t / 24) % 7) as u8, (t % 24) as u8).unwrap())
            .collect();
        ParticipantSeries::new("f", blocks).unwrap()
    }

    #[test]
    fn parse_and_display() {
        for s in ["zero", "avg_fb", "median:dw_hd", "micro_mean:participant", "mean:hour_of_day"] {
            assert_eq!(s.parse::<FillSpec>().unwrap().to_string(), s);
        }
        assert!("median".parse::<FillSpec>().is_err());
        assert!("zero:dw_hd".parse::<FillSpec>().is_err());
        assert!("nope".parse::<FillSpec>().is_err());
    }

    #[test]
    fn zero_fill() {
        let mut d = vec![(0u64, 0u8); 24];
        d[8] = (600, 60);
        d[9] = (900, 60);
        let s = series(&d);
        let out = fill_impute(&s, "zero".parse().unwrap(), &HourMask::from_indices(24, [9])).unwrap();
        assert_eq!(out, vec![(9, 0.0)]);
    }

    #[test]
    fn micro_mean_participant() {
        let mut d = vec![(0u64, 0u8); 24];
        d[8] = (100, 50);
        d[9] = (300, 50);
        d[10] = (9999, 60);
        let s = series(&d);
        let imp = FillImputer::new(&s, "micro_mean:participant".parse().unwrap(), &HourMask::from_indices(24, [10]))
            .unwrap();
        assert_eq!(imp.predict_rate(10), 4.0);
        // s_max = 6 -> cap 9, no clip; wear 60 -> 240
        assert_eq!(imp.predict(10), 240.0);
    }

    #[test]
    fn dw_hd_median_picks_middle() {
        // three Mondays... use three weeks: Tuesday 9am at t = 24 + 9 + 168k
        let len = 24 * 7 * 4;
        let mut d = vec![(0u64, 0u8); len];
        for (k, rate) in [2u64, 4, 100].iter().enumerate() {
            d[24 + 9 + 168 * k] = (rate * 60, 60);
        }
        let target = 24 + 9 + 168 * 3;
        d[target] = (50 * 60, 60);
        let s = series(&d);
        let out = fill_impute(&s, "median:dw_hd".parse().unwrap(), &HourMask::from_indices(len, [target])).unwrap();
        assert_eq!(out, vec![(target, 4.0 * 60.0)]);
    }

    #[test]
    fn forward_backward_and_average() {
        let mut d = vec![(0u64, 0u8); 24];
        d[7] = (600, 60); // rate 10
        d[11] = (1800, 60); // rate 30
        d[9] = (1200, 30); // target, rate 40
        let s = series(&d);
        let h = HourMask::from_indices(24, [9]);
        let f = fill_impute(&s, "forward".parse().unwrap(), &h).unwrap()[0].1;
        let b = fill_impute(&s, "backward".parse().unwrap(), &h).unwrap()[0].1;
        let a = fill_impute(&s, "avg_fb".parse().unwrap(), &h).unwrap()[0].1;
        assert_eq!(f, 300.0);
        assert_eq!(b, 900.0);
        assert_eq!(a, 600.0);
    }

    #[test]
    fn forward_edge_falls_back_to_median() {
        let mut d = vec![(0u64, 0u8); 24];
        d[3] = (600, 60); // target at the start
        d[10] = (120, 60);
        d[11] = (240, 60);
        d[12] = (360, 60);
        let s = series(&d);
        let h = HourMask::from_indices(24, [3]);
        let f = fill_impute(&s, "forward".parse().unwrap(), &h).unwrap()[0].1;
        assert_eq!(f, 4.0 * 60.0);
        let a = fill_impute(&s, "avg_fb".parse().unwrap(), &h).unwrap()[0].1;
        assert_eq!(a, 2.0 * 60.0);
    }

    #[test]
    fn empty_cell_falls_back_to_participant_median() {
        let mut d = vec![(0u64, 0u8); 48];
        d[8] = (60, 60);
        d[9] = (180, 60);
        d[10] = (300, 60);
        let target = 24 + 15;
        d[target] = (6000, 60);
        let s = series(&d);
        let out = fill_impute(&s, "mean:dw_hd".parse().unwrap(), &HourMask::from_indices(48, [target])).unwrap();
        assert_eq!(out[0].1, 3.0 * 60.0);
    }

    #[test]
    fn statistics_ignore_night_hours() {
        let mut d = vec![(0u64, 0u8); 24];
        d[2] = (6000, 60);
        d[8] = (60, 60);
        d[9] = (180, 60);
        let s = series(&d);
        let imp = FillImputer::new(&s, "mean:participant".parse().unwrap(), &HourMask::from_indices(24, [9])).unwrap();
        assert_eq!(imp.predict_rate(9), 1.0);
    }

    #[test]
    fn unobserved_participant_errors() {
        let s = series(&[(0, 0); 24]);
        assert!(fill_impute(&s, "zero".parse().unwrap(), &HourMask::from_indices(24, [8])).is_err());
    }

    #[test]
    fn predictions_are_clipped() {
        let mut d = vec![(0u64, 0u8); 24];
        d[8] = (60, 60);
        d[9] = (6000, 60);
        d[10] = (600, 60);
        d[11] = (120, 60);
        let s = series(&d);
        // 9 and 10 held out: s_max = 2, cap = 3 steps/min; forward fill of
        // 10 reads the neighbouring held-out block at rate 100
        let imp = FillImputer::new(&s, "forward".parse().unwrap(), &HourMask::from_indices(24, [9, 10])).unwrap();
        assert_eq!(imp.s_max(), 2.0);
        assert_eq!(imp.predict_rate(10), 100.0);
        assert_eq!(imp.predict(10), 180.0);
    }
}
