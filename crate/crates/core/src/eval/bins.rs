//! Error breakdown by ground-truth step count.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const STEP_BIN_WIDTH: u64 = 500;

/// Bin 0 holds zero steps; bin `k ≥ 1` holds `[500(k−1)+1, 500k]`.
pub fn step_count_bin(truth: u64) -> usize {
    truth.div_ceil(STEP_BIN_WIDTH) as usize
}

/// Inclusive step-count range of a bin.
pub fn step_bin_range(bin: usize) -> (u64, u64) {
    if bin == 0 {
        (0, 0)
    } else {
        let b = bin as u64;
        (STEP_BIN_WIDTH * (b - 1) + 1, STEP_BIN_WIDTH * b)
    }
}

/// One non-empty bin.
#[derive(Debug, Clone, PartialEq)]
pub struct StepBinRow {
    pub bin: usize,
    pub count: usize,
    /// Micro MAE of each method.
    pub micro_mae: Vec<f64>,
    /// `micro_mae[m] / micro_mae[reference]`; 1 when both are 0.
    pub ratio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBinBreakdown {
    pub reference: usize,
    /// Non-empty bins, ascending.
    pub rows: Vec<StepBinRow>,
}

/// Per-bin Micro MAE of several methods' predictions against shared truths.
pub fn step_count_bin_breakdown<P: AsRef<[f64]>>(
    predictions: &[P],
    truths: &[u64],
    reference: usize,
) -> Result<StepBinBreakdown> {
    if reference >= predictions.len() {
        return Err(Error::InvalidInput("reference method out of range".into()));
    }
    if predictions.iter().any(|p| p.as_ref().len() != truths.len()) {
        return Err(Error::Shape("predictions and truths differ in length".into()));
    }
    let n_bins = truths.iter().map(|&t| step_count_bin(t) + 1).max().unwrap_or(0);
    let mut count = vec![0usize; n_bins];
    let mut sums = vec![vec![0.0; n_bins]; predictions.len()];
    for (i, &t) in truths.iter().enumerate() {
        let b = step_count_bin(t);
        count[b] += 1;
        for (m, p) in predictions.iter().enumerate() {
            sums[m][b] += (p.as_ref()[i] - t as f64).abs();
        }
    }
    let rows = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let micro_mae: Vec<f64> = sums.iter().map(|s| s[b] / count[b] as f64).collect();
            let r = micro_mae[reference];
            let ratio = micro_mae
                .iter()
                .map(|&m| if m == r { 1.0 } else { m / r })
                .collect();
            StepBinRow {
                bin: b,
                count: count[b],
                micro_mae,
                ratio,
            }
        })
        .collect();
    Ok(StepBinBreakdown { reference, rows })
}
