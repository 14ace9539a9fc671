//! Paired two-sided t-test over per-participant errors.

use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_difference: f64,
    pub t: f64,
    pub p_value: f64,
}

/// Paired t-test of `a` against `b`, using pairs where both are present.
/// `None` with fewer than two pairs or zero spread of the differences.
pub fn paired_t_test(a: &[Option<f64>], b: &[Option<f64>]) -> Option<PairedTTest> {
    let d: Vec<f64> = a.iter().zip(b).filter_map(|(x, y)| Some((*x)? - (*y)?)).collect();
    let n = d.len();
    if n < 2 {
        return None;
    }
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return None;
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?;
    Some(PairedTTest {
        n,
        mean_difference: mean,
        t,
        p_value: 2.0 * dist.sf(t.abs()),
    })
}
