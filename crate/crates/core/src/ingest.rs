//! Minute-to-hour rollup, day-of-week alignment and synthetic cohorts.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::series::{is_eval_hour, HourMask, HourlyBlock, ParticipantSeries};

/// One minute of device data.
#[derive(Debug, Clone, PartialEq)]
pub struct MinuteRecord {
    pub participant_id: String,
    /// Minutes since the calendar epoch.
    pub minute: i64,
    pub steps: u64,
    pub heart_rate: Option<f64>,
}

/// Calendar position of minute 0: midnight of a day with this day of week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CalendarAnchor {
    pub epoch_day_of_week: u8,
}

impl CalendarAnchor {
    fn calendar(&self, hour: i64) -> (u8, u8) {
        let hod = hour.rem_euclid(24) as u8;
        let dow = (i64::from(self.epoch_day_of_week) + hour.div_euclid(24)).rem_euclid(7) as u8;
        (dow, hod)
    }
}

/// Roll one participant's minute records up to a dense hourly grid running
/// from the first to the last recorded hour.
///
/// Steps are summed, heart rate is averaged over minutes that carry one, and
/// wear time counts minutes with a record (even a zero-step one).
pub fn rollup_minutes_to_hours(
    records: &[MinuteRecord],
    anchor: CalendarAnchor,
) -> Result<ParticipantSeries> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no minute records".into()))?;
    for pair in records.windows(2) {
        if pair[1].participant_id != first.participant_id {
            return Err(Error::InvalidInput(alloc::format!(
                "records from several participants ({} and {})",
                first.participant_id,
                pair[1].participant_id
            )));
        }
        if pair[1].minute <= pair[0].minute {
            return Err(Error::InvalidInput(alloc::format!(
                "minute records not strictly increasing at minute {}",
                pair[1].minute
            )));
        }
    }
    let first_hour = first.minute.div_euclid(60);
    let last_hour = records[records.len() - 1].minute.div_euclid(60);
    let n = (last_hour - first_hour + 1) as usize;

    let mut steps = vec![0u64; n];
    let mut wear = vec![0u8; n];
    let mut hr_sum = vec![0.0f64; n];
    let mut hr_n = vec![0u32; n];
    for r in records {
        let i = (r.minute.div_euclid(60) - first_hour) as usize;
        steps[i] += r.steps;
        wear[i] += 1;
        if let Some(h) = r.heart_rate {
            hr_sum[i] += h;
            hr_n[i] += 1;
        }
    }
    let blocks = (0..n)
        .map(|i| {
            let (dow, hod) = anchor.calendar(first_hour + i as i64);
            let hr = (hr_n[i] > 0).then(|| hr_sum[i] / f64::from(hr_n[i]));
            HourlyBlock::new(steps[i], wear[i], hr, dow, hod)
        })
        .collect::<Result<Vec<_>>>()?;
    ParticipantSeries::new(first.participant_id.clone(), blocks)
}

/// Mean daily step count per day of week, over calendar days with at least
/// one observed block. Days of week without data are `NaN`.
pub fn daily_step_profile(series: &ParticipantSeries) -> [f64; 7] {
    let mut totals = [0.0f64; 7];
    let mut days = [0u32; 7];
    let mut t = 0;
    while t < series.len() {
        let dow = series.block(t).day_of_week;
        let mut day_steps = 0u64;
        let mut observed = false;
        let start = t;
        while t < series.len() && (t == start || series.block(t).hour_of_day != 0) {
            let b = series.block(t);
            day_steps += b.steps;
            observed |= b.is_observed();
            t += 1;
        }
        if observed {
            totals[dow as usize] += day_steps as f64;
            days[dow as usize] += 1;
        }
    }
    core::array::from_fn(|d| {
        if days[d] > 0 {
            totals[d] / f64::from(days[d])
        } else {
            f64::NAN
        }
    })
}

/// Cyclic shift in `0..7` minimizing the summed squared difference between
/// `profile[d]` and `reference[(d + shift) % 7]`; ties go to the smallest
/// shift. Terms with a `NaN` on either side are skipped.
pub fn best_day_shift(profile: &[f64; 7], reference: &[f64; 7]) -> u8 {
    let mut best = (f64::INFINITY, 0u8);
    for shift in 0..7u8 {
        let ssd: f64 = (0..7)
            .map(|d| {
                let diff = profile[d] - reference[(d + shift as usize) % 7];
                if diff.is_nan() {
                    0.0
                } else {
                    diff * diff
                }
            })
            .sum();
        if ssd < best.0 {
            best = (ssd, shift);
        }
    }
    best.1
}

/// Day shift aligning `target` to a reference weekly profile. Apply it with
/// [`ParticipantSeries::shift_days`].
pub fn align_day_shift(target: &ParticipantSeries, reference_profile: &[f64; 7]) -> u8 {
    best_day_shift(&daily_step_profile(target), reference_profile)
}

/// Parameters of the synthetic cohort generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub n_weeks: usize,
    pub seed: u64,
    /// Height of the mid-day activity bump relative to the waking baseline.
    pub diurnal_amplitude: f64,
    pub weekend_multiplier: f64,
    /// Week-to-week AR(1) coefficient of the log activity level.
    pub ar_coefficient: f64,
    /// Chance that a waking hour is sedentary (zero steps).
    pub zero_inflation_prob: f64,
    /// Target fraction of 6:00–22:00 blocks removed by random missing runs.
    pub missing_rate: f64,
    /// Chance that a night (23:00–5:59) is entirely unworn.
    pub overnight_nonwear_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_participants: 20,
            n_weeks: 26,
            seed: 0,
            diurnal_amplitude: 1.5,
            weekend_multiplier: 0.7,
            ar_coefficient: 0.9,
            zero_inflation_prob: 0.08,
            missing_rate: 0.2,
            overnight_nonwear_prob: 0.7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.n_participants == 0 || self.n_weeks == 0 {
            return bad("n_participants and n_weeks must be positive");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.overnight_nonwear_prob)
            || !(0.0..=1.0).contains(&self.zero_inflation_prob)
        {
            return bad("probabilities must lie in [0, 1]");
        }
        if !(self.ar_coefficient > -1.0 && self.ar_coefficient < 1.0) {
            return bad("ar_coefficient must lie in (-1, 1)");
        }
        if !(self.diurnal_amplitude >= 0.0 && self.weekend_multiplier > 0.0) {
            return bad("diurnal_amplitude must be >= 0 and weekend_multiplier > 0");
        }
        Ok(())
    }
}

/// A generated cohort: what a device would report, the complete ground
/// truth, and which hours were masked out.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub observed: Vec<ParticipantSeries>,
    pub truth: Vec<ParticipantSeries>,
    pub masked: Vec<HourMask>,
}

const NIGHT_LEVEL: f64 = 0.01;
const WAKING_BASELINE: f64 = 0.2;
const MEAN_MISSING_RUN: f64 = 3.0;

/// Generate a cohort. A pure function of the configuration.
pub fn generate_synthetic_cohort(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let mut out = SyntheticCohort {
        observed: Vec::with_capacity(config.n_participants),
        truth: Vec::with_capacity(config.n_participants),
        masked: Vec::with_capacity(config.n_participants),
    };
    for p in 0..config.n_participants {
        let (obs, truth, mask) = generate_participant(config, p)?;
        out.observed.push(obs);
        out.truth.push(truth);
        out.masked.push(mask);
    }
    Ok(out)
}

fn generate_participant(
    config: &SynthConfig,
    index: usize,
) -> Result<(ParticipantSeries, ParticipantSeries, HourMask)> {
    let mut r = rng::stream(config.seed, &[0x5157, index as u64]);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let gauss = |r: &mut rng::Rng, sd: f64| sd * std_normal.sample(r);

    let start_dow: u8 = r.gen_range(0..7);
    let base_rate = math::exp(math::ln(9.0) + gauss(&mut r, 0.3));
    let peak_hour = r.gen_range(11.0..16.0);
    let width = r.gen_range(3.0..5.0);
    let dow_mult: [f64; 7] = core::array::from_fn(|d| {
        let weekend = if d >= 5 { config.weekend_multiplier } else { 1.0 };
        weekend * math::exp(0.1 * std_normal.sample(&mut r))
    });

    let n_days = config.n_weeks * 7;
    let len = n_days * 24;
    let week_sd = 0.35;
    let innov = math::sqrt(1.0 - config.ar_coefficient * config.ar_coefficient);
    let mut week_level = vec![0.0; config.n_weeks];
    week_level[0] = gauss(&mut r, week_sd);
    for w in 1..config.n_weeks {
        week_level[w] = config.ar_coefficient * week_level[w - 1] + innov * gauss(&mut r, week_sd);
    }
    let day_level: Vec<f64> = (0..n_days).map(|_| gauss(&mut r, 0.3)).collect();

    let curve = |h: u8| -> f64 {
        if is_eval_hour(h) {
            let z = (f64::from(h) - peak_hour) / width;
            WAKING_BASELINE + config.diurnal_amplitude * math::exp(-0.5 * z * z)
        } else {
            NIGHT_LEVEL
        }
    };

    let hour_rho = 0.6;
    let hour_innov = math::sqrt(1.0 - hour_rho * hour_rho);
    let mut hour_noise = 0.0;
    let mut truth_blocks = Vec::with_capacity(len);
    for t in 0..len {
        let day = t / 24;
        let hod = (t % 24) as u8;
        let dow = ((usize::from(start_dow) + day) % 7) as u8;
        hour_noise = hour_rho * hour_noise + hour_innov * gauss(&mut r, 0.45);
        let sedentary = is_eval_hour(hod) && r.gen_bool(config.zero_inflation_prob);
        let level = week_level[day / 7] + day_level[day] + hour_noise;
        let rate = if sedentary {
            0.0
        } else {
            base_rate * curve(hod) * dow_mult[dow as usize] * math::exp(level)
        };
        let wear: u8 = if r.gen_bool(0.1) { r.gen_range(5..60) } else { 60 };
        let steps = math::round(rate * f64::from(wear)) as u64;
        let hr_noise = gauss(&mut r, 5.0);
        let hr = (65.0 + 0.8 * steps as f64 / f64::from(wear) + hr_noise).max(40.0);
        truth_blocks.push(HourlyBlock::new(steps, wear, Some(hr), dow, hod)?);
    }

    // Missingness: whole unworn nights, then random runs from a two-state
    // Markov chain whose stationary missing fraction is `missing_rate`.
    let mut mask = HourMask::empty(len);
    for day in 0..n_days {
        if r.gen_bool(config.overnight_nonwear_prob) {
            let start = day * 24 + 23;
            for t in start..(start + 7).min(len) {
                mask.insert(t);
            }
        }
    }
    if config.missing_rate > 0.0 {
        let stay = 1.0 - 1.0 / MEAN_MISSING_RUN;
        let enter = (config.missing_rate * (1.0 - stay) / (1.0 - config.missing_rate)).min(1.0);
        let mut missing = r.gen_bool(config.missing_rate);
        for t in 0..len {
            if missing {
                mask.insert(t);
            }
            missing = r.gen_bool(if missing { stay } else { enter });
        }
    }

    let observed_blocks = truth_blocks
        .iter()
        .enumerate()
        .map(|(t, b)| {
            if mask.contains(t) {
                HourlyBlock::missing(b.day_of_week, b.hour_of_day)
            } else {
                *b
            }
        })
        .collect();
    let id = alloc::format!("synth{index:04}");
    let truth = ParticipantSeries::new(id.clone(), truth_blocks)?;
    let observed = ParticipantSeries::new(id, observed_blocks)?;
    Ok((observed, truth, mask))
}
