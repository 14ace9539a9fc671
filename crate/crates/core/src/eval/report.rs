//! Evaluation report over several methods.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::eval::bins::{step_count_bin_breakdown, StepBinBreakdown};
use crate::eval::metrics::{ci95, metrics, participant_maes, Metrics};
use crate::eval::missing::N_MISSING_BINS;

/// Macro MAE of the participants in one missing-rate bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinSummary {
    pub macro_mae: f64,
    pub ci95: f64,
    pub n_participants: usize,
    pub n_blocks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub name: String,
    pub metrics: Metrics,
    /// Half-width of the 95% CI of the Macro MAE.
    pub ci95: f64,
    pub participant_mae: Vec<Option<f64>>,
    pub by_missing_bin: [Option<BinSummary>; N_MISSING_BINS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub methods: Vec<MethodSummary>,
    pub step_bins: StepBinBreakdown,
    /// Missing-rate bin of each participant.
    pub missing_bins: Vec<usize>,
    pub n_blocks: usize,
}

impl EvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.name == name)
    }
}

/// Assemble a report. `predictions[m][p]` aligns with `truths[p]`;
/// `reference` names the method the step-bin ratios divide by.
pub fn build_report(
    names: &[String],
    predictions: &[Vec<Vec<f64>>],
    truths: &[Vec<u64>],
    missing_bins: &[usize],
    reference: usize,
) -> Result<EvalReport> {
    if names.len() != predictions.len() || names.is_empty() {
        return Err(Error::InvalidInput("one name per method required".into()));
    }
    if missing_bins.len() != truths.len() {
        return Err(Error::Shape("one missing-rate bin per participant required".into()));
    }
    let mut methods = Vec::with_capacity(names.len());
    for (name, pred) in names.iter().zip(predictions) {
        if pred.len() != truths.len() || pred.iter().zip(truths).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape(alloc::format!("predictions of `{name}` do not match the targets")));
        }
        let errors: Vec<Vec<f64>> = pred
            .iter()
            .zip(truths)
            .map(|(p, t)| p.iter().zip(t).map(|(p, &t)| p - t as f64).collect())
            .collect();
        let pmae = participant_maes(&errors);
        let present: Vec<f64> = pmae.iter().flatten().copied().collect();
        let by_missing_bin = core::array::from_fn(|b| {
            let members: Vec<&Vec<f64>> = errors
                .iter()
                .zip(missing_bins)
                .filter(|(e, &mb)| mb == b && !e.is_empty())
                .map(|(e, _)| e)
                .collect();
            let m = metrics(&members).ok()?;
            let maes: Vec<f64> = participant_maes(&members).into_iter().flatten().collect();
            Some(BinSummary {
                macro_mae: m.macro_mae,
                ci95: ci95(&maes),
                n_participants: m.n_participants,
                n_blocks: m.n_blocks,
            })
        });
        methods.push(MethodSummary {
            name: name.clone(),
            metrics: metrics(&errors)?,
            ci95: ci95(&present),
            participant_mae: pmae,
            by_missing_bin,
        });
    }
    let flat_truth: Vec<u64> = truths.iter().flatten().copied().collect();
    let flat_pred: Vec<Vec<f64>> = predictions.iter().map(|p| p.iter().flatten().copied().collect()).collect();
    Ok(EvalReport {
        methods,
        step_bins: step_count_bin_breakdown(&flat_pred, &flat_truth, reference)?,
        missing_bins: missing_bins.to_vec(),
        n_blocks: flat_truth.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn bins_account_for_every_block() {
        let names = vec!["a".to_string(), "b".to_string()];
        let truths = vec![vec![0, 700, 1200], vec![30]];
        let preds = vec![vec![vec![0.0, 600.0, 1000.0], vec![40.0]], vec![vec![10.0; 3], vec![30.0]]];
        let r = build_report(&names, &preds, &truths, &[0, 4], 0).unwrap();
        assert_eq!(r.step_bins.rows.iter().map(|b| b.count).sum::<usize>(), r.n_blocks);
        let mb: usize = r.methods[0].by_missing_bin.iter().flatten().map(|b| b.n_blocks).sum();
        assert_eq!(mb, r.n_blocks);
        assert_eq!(r.methods[0].by_missing_bin[4].unwrap().macro_mae, 10.0);
        assert!(r.method("b").is_some());
    }
}
