//! Missing-rate per participant and its five bins.

use alloc::vec::Vec;

use crate::series::{is_eval_hour, ParticipantSeries};

pub const N_MISSING_BINS: usize = 5;

/// Bin labels in percent.
pub const MISSING_BIN_LABELS: [&str; N_MISSING_BINS] = ["0-20", "20-40", "40-60", "60-80", "80-100"];

/// `(missing, total)` 6:00–22:00 block counts.
pub fn missing_counts(series: &ParticipantSeries) -> (usize, usize) {
    series.blocks().iter().filter(|b| is_eval_hour(b.hour_of_day)).fold((0, 0), |(m, n), b| {
        (m + usize::from(!b.is_observed()), n + 1)
    })
}

/// Fraction of 6:00–22:00 blocks without wear time; 0 when there are none.
pub fn missing_rate(series: &ParticipantSeries) -> f64 {
    match missing_counts(series) {
        (_, 0) => 0.0,
        (m, n) => m as f64 / n as f64,
    }
}

/// Bin of a missing rate: `[0, .2), …, [.8, 1]`.
pub fn missing_rate_bin(rate: f64) -> usize {
    ((rate * N_MISSING_BINS as f64) as usize).min(N_MISSING_BINS - 1)
}

fn bin_of_counts(missing: usize, total: usize) -> usize {
    if total == 0 {
        0
    } else {
        (missing * N_MISSING_BINS / total).min(N_MISSING_BINS - 1)
    }
}

/// Missing-rate bin of every participant, computed exactly on counts.
pub fn participant_missing_bins(cohort: &[ParticipantSeries]) -> Vec<usize> {
    cohort.iter().map(|s| {
        let (m, n) = missing_counts(s);
        bin_of_counts(m, n)
    }).collect()
}

/// Participant indices grouped by bin.
pub fn bin_by_missing_rate(cohort: &[ParticipantSeries]) -> [Vec<usize>; N_MISSING_BINS] {
    let mut out: [Vec<usize>; N_MISSING_BINS] = Default::default();
    for (p, b) in participant_missing_bins(cohort).into_iter().enumerate() {
        out[b].push(p);
    }
    out
}
