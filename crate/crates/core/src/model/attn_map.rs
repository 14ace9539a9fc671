//! Mean attention weights laid out on the context grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::model::attention::AttentionModel;
use crate::model::train::Instance;
use crate::model::view::ParticipantView;
use crate::window::WindowShape;

/// Row-major `rows × cols` grids of mean attention weight. The center cell
/// is always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub shape: WindowShape,
    pub overall: Vec<f64>,
    /// Indexed by the target's day of week.
    pub by_day_of_week: [Vec<f64>; 7],
    pub count: usize,
    pub count_by_day_of_week: [usize; 7],
    /// Targets without any visible context, left out of the means.
    pub skipped: usize,
}

/// Average the attention weights of `targets` overall and per target day
/// of week.
pub fn export_attention_maps(
    model: &AttentionModel,
    views: &[ParticipantView<'_>],
    targets: &[Instance],
) -> Result<AttentionMaps> {
    let shape = model.shape();
    let cells = shape.rows() * shape.cols();
    let mut maps = AttentionMaps {
        shape,
        overall: vec![0.0; cells],
        by_day_of_week: core::array::from_fn(|_| vec![0.0; cells]),
        count: 0,
        count_by_day_of_week: [0; 7],
        skipped: 0,
    };
    let grid: Vec<usize> = (0..shape.n_context())
        .map(|i| {
            let (r, c) = shape.cell_of(i);
            r * shape.cols() + c
        })
        .collect();
    let mut sorted = targets.to_vec();
    sorted.sort();
    let mut current: Option<(usize, crate::model::Prepared)> = None;
    for inst in sorted {
        let view = &views[inst.participant];
        if current.as_ref().map(|c| c.0) != Some(inst.participant) {
            current = Some((inst.participant, model.prepare(view)));
        }
        let prep = &current.as_ref().expect("set above").1;
        let w = match model.attention_weights(view, prep, inst.hour) {
            Ok(w) => w,
            Err(crate::Error::NoObservedContext(_)) => {
                maps.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let dow = view.series.block(inst.hour).day_of_week as usize;
        for (i, &a) in w.iter().enumerate() {
            maps.overall[grid[i]] += a;
            maps.by_day_of_week[dow][grid[i]] += a;
        }
        maps.count += 1;
        maps.count_by_day_of_week[dow] += 1;
    }
    if maps.count > 0 {
        let k = maps.count as f64;
        maps.overall.iter_mut().for_each(|v| *v /= k);
    }
    for d in 0..7 {
        if maps.count_by_day_of_week[d] > 0 {
            let k = maps.count_by_day_of_week[d] as f64;
            maps.by_day_of_week[d].iter_mut().for_each(|v| *v /= k);
        }
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic_cohort, SynthConfig};
    use crate::series::HourMask;

    #[test]
    fn grids_sum_to_one_with_empty_center() {
        let cohort = generate_synthetic_cohort(&SynthConfig {
            n_participants: 1,
            n_weeks: 6,
            seed: 1,
            ..SynthConfig::default()
        })
        .unwrap();
        let s = &cohort.observed[0];
        let view = ParticipantView::new(s, HourMask::empty(s.len())).unwrap();
        let model = AttentionModel::new(WindowShape::default(), 4, 3).unwrap();
        let targets: Vec<Instance> = (400..460).map(|hour| Instance { participant: 0, hour }).collect();
        let maps = export_attention_maps(&model, core::slice::from_ref(&view), &targets).unwrap();
        assert!(maps.count > 0);
        assert!((maps.overall.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(maps.overall[4 * 23 + 11], 0.0);

        let one = export_attention_maps(&model, core::slice::from_ref(&view), &targets[..1]).unwrap();
        let prep = model.prepare(&view);
        let w = model.attention_weights(&view, &prep, 400).unwrap();
        for (i, &a) in w.iter().enumerate() {
            let (r, c) = model.shape().cell_of(i);
            assert_eq!(one.overall[r * 23 + c], a);
        }
    }
}
