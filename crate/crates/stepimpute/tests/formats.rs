use std::path::Path;

use proptest::prelude::*;

use stepimpute::checkpoint::{checkpoint_string, parse_checkpoint};
use stepimpute::csvio::{hourly_csv_bytes, parse_hourly_csv, parse_split_csv, split_csv_bytes};
use stepimpute_core::eval::{stratified_split, DEFAULT_PROPORTIONS};
use stepimpute_core::model::AttentionModel;
use stepimpute_core::{HourMask, HourlyBlock, ParticipantSeries, WindowShape};

fn cohort_strategy() -> impl Strategy<Value = Vec<ParticipantSeries>> {
    let series = (
        0..7u8,
        0..24u8,
        prop::collection::vec(prop::option::weighted(0.8, (0..5000u64, 1..=60u8, prop::option::of(40.0..190.0f64))), 1..200),
    );
    prop::collection::vec(series, 1..4).prop_map(|ps| {
        ps.into_iter()
            .enumerate()
            .map(|(i, (dow0, hod0, raw))| {
                let blocks = raw
                    .into_iter()
                    .enumerate()
                    .map(|(t, b)| {
                        let h = usize::from(hod0) + t;
                        let (dow, hod) = (((usize::from(dow0) + h / 24) % 7) as u8, (h % 24) as u8);
                        match b {
                            Some((steps, wear, hr)) => HourlyBlock::new(steps, wear, hr, dow, hod).unwrap(),
                            None => HourlyBlock::missing(dow, hod),
                        }
                    })
                    .collect();
                ParticipantSeries::new(format!("p{i}"), blocks).unwrap()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hourly_csv_round_trips(cohort in cohort_strategy(), mask_seed in any::<u64>()) {
        let text = String::from_utf8(hourly_csv_bytes(&cohort, None)).unwrap();
        let back = parse_hourly_csv(Path::new("c.csv"), &text).unwrap();
        prop_assert_eq!(&back.cohort, &cohort);
        prop_assert!(back.masked.is_none());

        let masked: Vec<HourMask> = cohort
            .iter()
            .map(|s| HourMask::from_indices(s.len(), (0..s.len()).filter(|t| (mask_seed >> (t % 64)) & 1 == 1)))
            .collect();
        let text = String::from_utf8(hourly_csv_bytes(&cohort, Some(&masked))).unwrap();
        let back = parse_hourly_csv(Path::new("c.csv"), &text).unwrap();
        prop_assert_eq!(&back.cohort, &cohort);
        prop_assert_eq!(back.masked, Some(masked));
    }

    #[test]
    fn split_csv_round_trips(cohort in cohort_strategy(), fold in 0..10usize, seed in any::<u64>()) {
        let split = stratified_split(&cohort, fold, DEFAULT_PROPORTIONS, seed).unwrap();
        let text = String::from_utf8(split_csv_bytes(&cohort, &split)).unwrap();
        let back = parse_split_csv(Path::new("s.csv"), &text, &cohort, fold, seed, DEFAULT_PROPORTIONS).unwrap();
        for (a, b) in split.participants.iter().zip(&back.participants) {
            prop_assert_eq!(&a.train, &b.train);
            prop_assert_eq!(&a.validation, &b.validation);
            prop_assert_eq!(&a.test, &b.test);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly(seed in any::<u64>(), d_k in 1..12usize) {
        let model = AttentionModel::new(WindowShape::default(), d_k, seed).unwrap();
        let text = checkpoint_string(&model);
        let back = parse_checkpoint(Path::new("m.ckpt"), &text).unwrap();
        let (a, b) = (model.flat_values(), back.flat_values());
        prop_assert_eq!(a.len(), b.len());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(checkpoint_string(&back), text);
    }
}

#[test]
fn parse_errors_name_the_line() {
    let text = "participant_id,day_index,day_of_week,hour_of_day,steps,wear_minutes,heart_rate\n\
                p,0,0,0,10,60,\n\
                p,0,0,1,ten,60,\n";
    let err = parse_hourly_csv(Path::new("c.csv"), text).unwrap_err().to_string();
    assert!(err.contains("c.csv") && err.contains('3'), "{err}");
}
