//! Stratified train / validation / test partitioning.
//!
//! Each participant's eligible blocks (observed, 6:00–22:00) are sorted by
//! step count and cut into equal-count strata. Every stratum is shuffled and
//! divided by rounded proportions, so each part is within one block of its
//! target share per stratum.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::series::{is_eval_hour, HourMask, ParticipantSeries};

pub const N_FOLDS: usize = 10;
pub const N_STRATA: usize = 10;
pub const DEFAULT_PROPORTIONS: Proportions = Proportions {
    train: 0.80,
    validation: 0.15,
    test: 0.05,
};
/// Participants with fewer eligible blocks get a warning.
pub const MIN_ELIGIBLE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Part {
    Train,
    Validation,
    Test,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Validation => "validation",
            Part::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Proportions {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|p| !(*p >= 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("split proportions must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    /// `(train, validation, test)` counts for a stratum of `n` blocks.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let nf = n as f64;
        let test = (math::round(nf * self.test) as usize).min(n);
        let val = (math::round(nf * self.validation) as usize).min(n - test);
        (n - test - val, val, test)
    }
}

/// The partition of one participant.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParticipantSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// Eligible hours of each stratum, ascending.
    pub strata: Vec<Vec<usize>>,
    /// Lowest step count of each stratum.
    pub bin_edges: Vec<u64>,
}

impl ParticipantSplit {
    pub fn part_of(&self, t: usize) -> Option<Part> {
        if self.train.binary_search(&t).is_ok() {
            Some(Part::Train)
        } else if self.validation.binary_search(&t).is_ok() {
            Some(Part::Validation)
        } else if self.test.binary_search(&t).is_ok() {
            Some(Part::Test)
        } else {
            None
        }
    }

    pub fn mask(&self, part: Part, len: usize) -> HourMask {
        let idx = match part {
            Part::Train => &self.train,
            Part::Validation => &self.validation,
            Part::Test => &self.test,
        };
        HourMask::from_indices(len, idx.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedSplit {
    pub fold: usize,
    pub seed: u64,
    pub proportions: Proportions,
    pub participants: Vec<ParticipantSplit>,
    pub warnings: Vec<String>,
}

impl StratifiedSplit {
    /// Per-participant masks of one part.
    pub fn masks(&self, part: Part, cohort: &[ParticipantSeries]) -> Vec<HourMask> {
        self.participants.iter().zip(cohort).map(|(p, s)| p.mask(part, s.len())).collect()
    }
}

/// Observed 6:00–22:00 hours, ascending.
pub fn eligible_blocks(series: &ParticipantSeries) -> Vec<usize> {
    (0..series.len())
        .filter(|&t| series.is_observed(t) && is_eval_hour(series.block(t).hour_of_day))
        .collect()
}

fn split_participant(series: &ParticipantSeries, props: Proportions, r: &mut rng::Rng) -> ParticipantSplit {
    let mut eligible = eligible_blocks(series);
    eligible.sort_by_key(|&t| (series.block(t).steps, t));
    let n = eligible.len();
    let mut out = ParticipantSplit::default();
    for k in 0..N_STRATA.min(n) {
        let (lo, hi) = (k * n / N_STRATA.min(n), (k + 1) * n / N_STRATA.min(n));
        let mut stratum = eligible[lo..hi].to_vec();
        out.bin_edges.push(series.block(stratum[0]).steps);
        let (_, val, test) = props.counts(stratum.len());
        stratum.shuffle(r);
        out.test.extend_from_slice(&stratum[..test]);
        out.validation.extend_from_slice(&stratum[test..test + val]);
        out.train.extend_from_slice(&stratum[test + val..]);
        stratum.sort_unstable();
        out.strata.push(stratum);
    }
    out.train.sort_unstable();
    out.validation.sort_unstable();
    out.test.sort_unstable();
    out
}

/// Split fold `fold` of a cohort. Deterministic in `(seed, fold)`.
pub fn stratified_split(
    cohort: &[ParticipantSeries],
    fold: usize,
    proportions: Proportions,
    seed: u64,
) -> Result<StratifiedSplit> {
    proportions.validate()?;
    let mut warnings = Vec::new();
    let participants = cohort
        .iter()
        .enumerate()
        .map(|(p, s)| {
            let split = split_participant(s, proportions, &mut rng::stream(seed, &[0x5917, fold as u64, p as u64]));
            let n = split.train.len() + split.validation.len() + split.test.len();
            if n < MIN_ELIGIBLE {
                warnings.push(format!("participant {} has only {n} eligible blocks", s.id));
            }
            split
        })
        .collect();
    Ok(StratifiedSplit {
        fold,
        seed,
        proportions,
        participants,
        warnings,
    })
}

/// Folds `0..n_folds`.
pub fn stratified_folds(
    cohort: &[ParticipantSeries],
    n_folds: usize,
    proportions: Proportions,
    seed: u64,
) -> Result<Vec<StratifiedSplit>> {
    (0..n_folds).map(|f| stratified_split(cohort, f, proportions, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::HourlyBlock;

    fn series(n_days: usize) -> ParticipantSeries {
        let blocks = (0..n_days * 24)
            .map(|t| {
                let (dow, hod) = (((t / 24) % 7) as u8, (t % 24) as u8);
                HourlyBlock::new(((t * 37) % 1000) as u64, 60, None, dow, hod).unwrap()
            })
            .collect();
        ParticipantSeries::new("s", blocks).unwrap()
    }

    #[test]
    fn counts_round() {
        assert_eq!(DEFAULT_PROPORTIONS.counts(100), (80, 15, 5));
        assert_eq!(DEFAULT_PROPORTIONS.counts(1000), (800, 150, 50));
        assert_eq!(DEFAULT_PROPORTIONS.counts(0), (0, 0, 0));
    }

    #[test]
    fn partition_and_determinism() {
        let s = [series(60)];
        let a = stratified_split(&s, 3, DEFAULT_PROPORTIONS, 11).unwrap();
        let p = &a.participants[0];
        let mut all: Vec<usize> = p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, eligible_blocks(&s[0]));
        assert_eq!(p.strata.len(), N_STRATA);
        assert_eq!(a, stratified_split(&s, 3, DEFAULT_PROPORTIONS, 11).unwrap());
        assert_ne!(a.participants, stratified_split(&s, 4, DEFAULT_PROPORTIONS, 11).unwrap().participants);
    }

    #[test]
    fn small_participant_warns() {
        let s = [series(1)];
        let a = stratified_split(&s, 0, DEFAULT_PROPORTIONS, 1).unwrap();
        assert_eq!(a.warnings.len(), 1);
    }
}
