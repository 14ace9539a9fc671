//! Autocorrelation of step rates under missingness.

use alloc::vec::Vec;

use crate::math;
use crate::par;
use crate::series::ParticipantSeries;

pub const DEFAULT_MAX_LAG: usize = 504;
/// Fewest observed pairs needed for a participant to count at a lag.
pub const MIN_PAIRS: usize = 30;

/// Pearson correlation between `rate(t)` and `rate(t + lag)` over pairs where
/// both hours are observed. `None` with too few pairs or zero variance.
pub fn participant_acf(rates: &[Option<f64>], lag: usize) -> Option<f64> {
    if lag >= rates.len() {
        return None;
    }
    let pairs = || rates.iter().zip(&rates[lag..]).filter_map(|(a, b)| Some(((*a)?, (*b)?)));
    let n = pairs().count();
    if n < MIN_PAIRS {
        return None;
    }
    let (sa, sb) = pairs().fold((0.0, 0.0), |(x, y), (a, b)| (x + a, y + b));
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs() {
        cov += (a - ma) * (b - mb);
        va += (a - ma) * (a - ma);
        vb += (b - mb) * (b - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some((cov / math::sqrt(va * vb)).clamp(-1.0, 1.0))
}

/// Median over participants of the per-participant ACF at lags
/// `1..=max_lag` (element `k − 1` is lag `k`). `None` where no participant
/// qualifies.
pub fn acf(cohort: &[ParticipantSeries], max_lag: usize) -> Vec<Option<f64>> {
    let rates: Vec<Vec<Option<f64>>> =
        cohort.iter().map(|s| (0..s.len()).map(|t| s.rate(t)).collect()).collect();
    let lags: Vec<usize> = (1..=max_lag).collect();
    par::map(&lags, |&lag| {
        let vals: Vec<f64> = rates.iter().filter_map(|r| participant_acf(r, lag)).collect();
        math::median(&vals)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn periodic_signal() {
        let r: Vec<Option<f64>> = (0..2000)
            .map(|t| (t % 11 != 0).then(|| libm::sin(t as f64 * core::f64::consts::TAU / 168.0)))
            .collect();
        let a168 = participant_acf(&r, 168).unwrap();
        assert!(a168 > 0.99);
        assert!(participant_acf(&r, 84).unwrap() < -0.9);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(participant_acf(&vec![Some(3.0); 500], 5), None);
        assert_eq!(participant_acf(&vec![Some(1.0); 20], 1), None);
        let sparse: Vec<Option<f64>> = (0..200).map(|t| (t % 2 == 0).then_some(t as f64)).collect();
        assert_eq!(participant_acf(&sparse, 1), None);
        assert!(participant_acf(&sparse, 2).unwrap() > 0.99);
    }
}
