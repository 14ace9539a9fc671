//! The multi-timescale context grid.
//!
//! Rows are hour offsets (ascending), columns are day offsets (ascending).
//! With the default shape the grid is 9×23: hours −4…4 and days −35, −28,
//! −21, −14, −7…7, 14, 21, 28, 35. Non-center cells are numbered row-major,
//! skipping the center, which gives the relative index used by the learned
//! attention bias.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::series::{HourMask, ParticipantSeries};

/// Geometry of the context grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowShape {
    /// Hours on each side of the target hour.
    pub hour_radius: usize,
    /// Weeks on each side; the first week is always complete.
    pub weeks: usize,
}

impl Default for WindowShape {
    fn default() -> Self {
        Self {
            hour_radius: 4,
            weeks: 5,
        }
    }
}

impl WindowShape {
    pub fn new(hour_radius: usize, weeks: usize) -> Result<Self> {
        if weeks == 0 || weeks > 52 || hour_radius > 11 {
            return Err(Error::InvalidConfig(alloc::format!(
                "unsupported window shape: hour_radius {hour_radius}, weeks {weeks}"
            )));
        }
        Ok(Self { hour_radius, weeks })
    }

    pub fn hour_offsets(&self) -> Vec<i64> {
        let r = self.hour_radius as i64;
        (-r..=r).collect()
    }

    pub fn day_offsets(&self) -> Vec<i64> {
        let w = self.weeks as i64;
        let mut days: Vec<i64> = (2..=w).rev().map(|k| -7 * k).collect();
        days.extend(-7..=7);
        days.extend((2..=w).map(|k| 7 * k));
        days
    }

    #[inline]
    pub fn rows(&self) -> usize {
        2 * self.hour_radius + 1
    }

    #[inline]
    pub fn cols(&self) -> usize {
        2 * (7 + self.weeks - 1) + 1
    }

    /// Number of attendable cells (grid size minus the center).
    #[inline]
    pub fn n_context(&self) -> usize {
        self.rows() * self.cols() - 1
    }

    #[inline]
    pub fn center(&self) -> (usize, usize) {
        (self.hour_radius, self.cols() / 2)
    }

    /// Hour offset from the target for a grid cell.
    pub fn cell_offset(&self, row: usize, col: usize) -> i64 {
        let days = self.day_offsets();
        days[col] * 24 + row as i64 - self.hour_radius as i64
    }

    /// Row-major index skipping the center.
    pub fn relative_index(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.rows() || col >= self.cols() {
            return Err(Error::Shape(alloc::format!(
                "cell ({row}, {col}) outside a {}x{} grid",
                self.rows(),
                self.cols()
            )));
        }
        let flat = row * self.cols() + col;
        let (cr, cc) = self.center();
        let center = cr * self.cols() + cc;
        match flat.cmp(&center) {
            core::cmp::Ordering::Less => Ok(flat),
            core::cmp::Ordering::Equal => Err(Error::CenterCell),
            core::cmp::Ordering::Greater => Ok(flat - 1),
        }
    }

    /// Inverse of [`relative_index`](Self::relative_index).
    pub fn cell_of(&self, index: usize) -> (usize, usize) {
        let (cr, cc) = self.center();
        let center = cr * self.cols() + cc;
        let flat = if index < center { index } else { index + 1 };
        (flat / self.cols(), flat % self.cols())
    }

    /// Hour offsets of every attendable cell, in relative-index order.
    pub fn offsets(&self) -> Vec<i64> {
        let days = self.day_offsets();
        let r = self.hour_radius as i64;
        let mut out = Vec::with_capacity(self.n_context());
        for row in 0..self.rows() {
            for (col, d) in days.iter().enumerate() {
                if (row, col) == self.center() {
                    continue;
                }
                out.push(d * 24 + row as i64 - r);
            }
        }
        out
    }
}

/// The attention candidates of one target hour.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWindow {
    pub shape: WindowShape,
    pub target: usize,
    /// Absolute hour per relative index; `None` when outside the series.
    pub cells: Vec<Option<usize>>,
}

impl ContextWindow {
    /// Lay the grid over hour `t` of a series of length `len`.
    pub fn build(shape: WindowShape, t: usize, len: usize) -> Result<Self> {
        let offsets = shape.offsets();
        Self::build_with_offsets(shape, &offsets, t, len)
    }

    /// Same as [`build`](Self::build) with precomputed offsets.
    pub fn build_with_offsets(
        shape: WindowShape,
        offsets: &[i64],
        t: usize,
        len: usize,
    ) -> Result<Self> {
        if t >= len {
            return Err(Error::HourOutOfRange { index: t, len });
        }
        let cells = offsets
            .iter()
            .map(|&o| {
                let idx = t as i64 + o;
                (0..len as i64).contains(&idx).then_some(idx as usize)
            })
            .collect();
        Ok(Self {
            shape,
            target: t,
            cells,
        })
    }

    /// Absolute hour at a grid position. The center maps to the target.
    pub fn cell(&self, row: usize, col: usize) -> Result<Option<usize>> {
        match self.shape.relative_index(row, col) {
            Ok(i) => Ok(self.cells[i]),
            Err(Error::CenterCell) => Ok(Some(self.target)),
            Err(e) => Err(e),
        }
    }

    /// Candidates inside the series.
    pub fn in_range(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    /// Attention mask for a grid position: 1 iff in range, not the
    /// center, and observed.
    pub fn mask(&self, row: usize, col: usize, series: &ParticipantSeries) -> u8 {
        match self.shape.relative_index(row, col) {
            Ok(i) => u8::from(self.cells[i].is_some_and(|t| series.is_observed(t))),
            Err(_) => 0,
        }
    }

    /// Mask by relative index, additionally hiding held-out hours.
    #[inline]
    pub fn visible(&self, index: usize, series: &ParticipantSeries, holdout: &HourMask) -> bool {
        self.cells[index].is_some_and(|t| series.is_observed(t) && !holdout.contains(t))
    }

    /// Attention set: relative indices with a nonzero mask.
    pub fn attention_set(&self, series: &ParticipantSeries, holdout: &HourMask) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| self.visible(i, series, holdout))
            .collect()
    }
}
