//! A participant as seen by a model: which blocks are visible, their
//! normalized values, and the filled activity track that local activity
//! profiles are cut from.

use alloc::vec::Vec;

use crate::baselines::fill::{FillImputer, FillMethod, FillSpec, Factor, HourScope, RateTable};
use crate::error::Result;
use crate::series::{HourMask, NormStats, ParticipantSeries};

/// Hours on each side of the profile center.
pub const LAPR_RADIUS: usize = 72;
/// Profile length, `2·72 + 1`.
pub const LAPR_LEN: usize = 2 * LAPR_RADIUS + 1;

/// A local activity profile: normalized step rates over `t−72 … t+72`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lapr {
    pub values: Vec<f64>,
    /// Entries that were filled rather than observed.
    pub fill_mask: Vec<bool>,
}

/// Read-only model input for one participant under a hold-out set.
#[derive(Debug, Clone)]
pub struct ParticipantView<'a> {
    pub series: &'a ParticipantSeries,
    pub holdout: HourMask,
    pub stats: NormStats,
    visible: Vec<bool>,
    z_rate: Vec<f64>,
    z_hr: Vec<f64>,
    /// Normalized DW+HD-median fill per hour, padded by `LAPR_RADIUS` on
    /// both ends.
    fill: Vec<f64>,
    /// Like `fill` but carrying observed values where visible.
    track: Vec<f64>,
    fallback: FillImputer<'a>,
}

impl<'a> ParticipantView<'a> {
    /// Normalization statistics are computed from the visible blocks.
    pub fn new(series: &'a ParticipantSeries, holdout: HourMask) -> Result<Self> {
        let stats = NormStats::compute_excluding(series, &holdout)?;
        Self::with_stats(series, holdout, stats)
    }

    pub fn with_stats(series: &'a ParticipantSeries, holdout: HourMask, stats: NormStats) -> Result<Self> {
        let n = series.len();
        let visible: Vec<bool> = (0..n).map(|t| series.is_observed(t) && !holdout.contains(t)).collect();
        let z_rate = (0..n)
            .map(|t| if visible[t] { stats.normalize_rate(series.rate(t).unwrap_or(0.0)) } else { 0.0 })
            .collect();
        let z_hr = (0..n)
            .map(|t| if visible[t] { stats.normalize_heart_rate(series.block(t).heart_rate) } else { 0.0 })
            .collect();
        let table = RateTable::build(series, &holdout, FillMethod::Median, Factor::DwHd, HourScope::All)?;
        let fill: Vec<f64> = (0..n + 2 * LAPR_RADIUS)
            .map(|p| {
                let (dow, hod) = series.calendar_at(p as i64 - LAPR_RADIUS as i64);
                stats.normalize_rate(table.lookup(dow, hod).unwrap_or(0.0))
            })
            .collect();
        let mut track = fill.clone();
        for t in 0..n {
            if visible[t] {
                track[t + LAPR_RADIUS] = stats.normalize_rate(series.rate(t).unwrap_or(0.0));
            }
        }
        let fallback = FillImputer::new(series, FillSpec::dw_hd_median(), &holdout)?;
        Ok(Self {
            series,
            holdout,
            stats,
            visible,
            z_rate,
            z_hr,
            fill,
            track,
            fallback,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.series.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Observed and not held out.
    #[inline]
    pub fn is_visible(&self, t: usize) -> bool {
        self.visible[t]
    }

    /// Normalized step rate of a visible block, 0 otherwise.
    #[inline]
    pub fn z_rate(&self, t: usize) -> f64 {
        self.z_rate[t]
    }

    /// Normalized heart rate of a visible block (0 when absent or hidden).
    #[inline]
    pub fn z_hr(&self, t: usize) -> f64 {
        self.z_hr[t]
    }

    /// Normalized fill value at any hour, including outside the series.
    #[inline]
    pub fn fill_z(&self, t: i64) -> f64 {
        self.fill[(t + LAPR_RADIUS as i64) as usize]
    }

    /// The filled track: position `p` holds hour `p − 72`, so the profile
    /// of hour `h` is `track()[h..h + 145]`.
    #[inline]
    pub fn track(&self) -> &[f64] {
        &self.track
    }

    /// Write the profile centered on `center` into `out`, hiding `masked`
    /// (the prediction target) when it falls inside the profile.
    pub fn lapr_into(&self, center: usize, masked: Option<usize>, out: &mut [f64]) {
        debug_assert_eq!(out.len(), LAPR_LEN);
        out.copy_from_slice(&self.track[center..center + LAPR_LEN]);
        if let Some(m) = masked {
            let offset = m as i64 - center as i64 + LAPR_RADIUS as i64;
            if (0..LAPR_LEN as i64).contains(&offset) {
                out[offset as usize] = self.fill[m + LAPR_RADIUS];
            }
        }
    }

    /// Profile of `center` with `masked` hidden, plus its fill mask.
    pub fn lapr(&self, center: usize, masked: Option<usize>) -> Lapr {
        let mut values = alloc::vec![0.0; LAPR_LEN];
        self.lapr_into(center, masked, &mut values);
        let fill_mask = (0..LAPR_LEN)
            .map(|i| {
                let t = center as i64 + i as i64 - LAPR_RADIUS as i64;
                !(0..self.len() as i64).contains(&t) || !self.visible[t as usize] || Some(t as usize) == masked
            })
            .collect();
        Lapr { values, fill_mask }
    }

    /// The DW+HD median fill prediction, used when no context is visible.
    pub fn fallback(&self) -> &FillImputer<'a> {
        &self.fallback
    }
}

/// Profile of hour `t` with `t` and every held-out hour treated as missing.
pub fn build_lapr(series: &ParticipantSeries, t: usize, holdout: &HourMask, stats: NormStats) -> Result<Lapr> {
    let view = ParticipantView::with_stats(series, holdout.clone(), stats)?;
    Ok(view.lapr(t, Some(t)))
}
