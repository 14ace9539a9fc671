//! Micro and Macro MAE / RMSE.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Aggregate errors. Micro averages weight every block equally; macro
/// averages weight every participant equally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub macro_mae: f64,
    pub micro_mae: f64,
    pub macro_rmse: f64,
    pub micro_rmse: f64,
    /// Participants with at least one error.
    pub n_participants: usize,
    pub n_blocks: usize,
}

/// Metrics of per-participant error lists (prediction − truth; the sign is
/// irrelevant). Participants without errors are left out of macro averages.
pub fn metrics<E: AsRef<[f64]>>(errors: &[E]) -> Result<Metrics> {
    let (mut sum_ae, mut sum_se, mut n) = (0.0, 0.0, 0usize);
    let (mut macro_mae, mut macro_rmse, mut k) = (0.0, 0.0, 0usize);
    for e in errors.iter().map(AsRef::as_ref).filter(|e| !e.is_empty()) {
        let ae: f64 = e.iter().map(|x| x.abs()).sum();
        let se: f64 = e.iter().map(|x| x * x).sum();
        sum_ae += ae;
        sum_se += se;
        n += e.len();
        macro_mae += ae / e.len() as f64;
        macro_rmse += math::sqrt(se / e.len() as f64);
        k += 1;
    }
    if k == 0 {
        return Err(Error::InsufficientData("no errors to aggregate".into()));
    }
    Ok(Metrics {
        macro_mae: macro_mae / k as f64,
        micro_mae: sum_ae / n as f64,
        macro_rmse: macro_rmse / k as f64,
        micro_rmse: math::sqrt(sum_se / n as f64),
        n_participants: k,
        n_blocks: n,
    })
}

/// Mean absolute error of each participant, `None` when it has no errors.
pub fn participant_maes<E: AsRef<[f64]>>(errors: &[E]) -> Vec<Option<f64>> {
    errors
        .iter()
        .map(|e| {
            let e = e.as_ref();
            (!e.is_empty()).then(|| e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64)
        })
        .collect()
}

/// Half-width of the 95% confidence interval of a mean: `1.96 · s / √n`
/// with the sample standard deviation. 0 for fewer than two values.
pub fn ci95(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = math::mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
    1.96 * math::sqrt(var / n as f64)
}
