//! CSV formats.
//!
//! Hourly: `participant_id,day_index,day_of_week,hour_of_day,steps,wear_minutes,heart_rate`
//! with an empty heart rate when absent. The ground-truth file adds
//! `was_masked` (0/1). Minute: `participant_id,minute_index,steps,heart_rate`.
//! Split: `participant_id,hour_index,part`.

use std::collections::HashMap;
use std::path::Path;

use stepimpute_core::eval::split::{ParticipantSplit, Part, Proportions, StratifiedSplit};
use stepimpute_core::ingest::{rollup_minutes_to_hours, CalendarAnchor, MinuteRecord};
use stepimpute_core::series::{HourMask, HourlyBlock, ParticipantSeries};

use crate::error::{Error, Result};
use crate::fs::{atomic_write, read_to_string};

pub const HOURLY_HEADER: [&str; 7] =
    ["participant_id", "day_index", "day_of_week", "hour_of_day", "steps", "wear_minutes", "heart_rate"];
pub const MINUTE_HEADER: [&str; 4] = ["participant_id", "minute_index", "steps", "heart_rate"];
pub const SPLIT_HEADER: [&str; 3] = ["participant_id", "hour_index", "part"];
pub const PREDICTION_HEADER: [&str; 7] =
    ["method", "participant_id", "hour_index", "day_of_week", "hour_of_day", "prediction", "truth"];

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("writing to memory cannot fail")
}

fn record<I, T>(w: &mut csv::Writer<Vec<u8>>, fields: I)
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(fields).expect("writing to memory cannot fail");
}

/// Hourly CSV bytes; `masked` adds the `was_masked` column.
pub fn hourly_csv_bytes(cohort: &[ParticipantSeries], masked: Option<&[HourMask]>) -> Vec<u8> {
    let mut w = writer();
    let mut header: Vec<&str> = HOURLY_HEADER.to_vec();
    if masked.is_some() {
        header.push("was_masked");
    }
    record(&mut w, &header);
    for (p, s) in cohort.iter().enumerate() {
        for (t, b) in s.blocks().iter().enumerate() {
            let day = (usize::from(s.start_hour) + t) / 24;
            let mut row = vec![
                s.id.clone(),
                day.to_string(),
                b.day_of_week.to_string(),
                b.hour_of_day.to_string(),
                b.steps.to_string(),
                b.wear_minutes.to_string(),
                b.heart_rate.map(|h| h.to_string()).unwrap_or_default(),
            ];
            if let Some(m) = masked {
                row.push(if m[p].contains(t) { "1" } else { "0" }.into());
            }
            record(&mut w, &row);
        }
    }
    finish(w)
}

pub fn write_hourly_csv(path: &Path, cohort: &[ParticipantSeries]) -> Result<()> {
    atomic_write(path, &hourly_csv_bytes(cohort, None))
}

pub fn write_truth_csv(path: &Path, truth: &[ParticipantSeries], masked: &[HourMask]) -> Result<()> {
    atomic_write(path, &hourly_csv_bytes(truth, Some(masked)))
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn check_header(path: &Path, rd: &mut csv::Reader<&[u8]>, expected: &[&str]) -> Result<Vec<String>> {
    let h = rd.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let got: Vec<String> = h.iter().map(str::to_owned).collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(Error::parse(path, 1, format!("expected header `{}`", expected.join(","))));
    }
    Ok(got)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::parse(path, line, format!("missing column `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("invalid {name} `{raw}`")))
}

fn optional_f64(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<Option<f64>> {
    match rec.get(i).map(str::trim) {
        None | Some("") => Ok(None),
        Some(_) => field(path, line, rec, i, name).map(Some),
    }
}

/// Parsed hourly data, in order of first appearance of each participant.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlyData {
    pub cohort: Vec<ParticipantSeries>,
    /// Present when the file carries `was_masked`.
    pub masked: Option<Vec<HourMask>>,
}

pub fn parse_hourly_csv(path: &Path, text: &str) -> Result<HourlyData> {
    let mut rd = reader(text);
    let header = check_header(path, &mut rd, &HOURLY_HEADER)?;
    let has_mask = header.get(7).map(String::as_str) == Some("was_masked");
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (i64, Vec<HourlyBlock>, Vec<usize>)> = HashMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default().to_owned();
        if id.is_empty() {
            return Err(Error::parse(path, line, "empty participant_id"));
        }
        let day: i64 = field(path, line, &rec, 1, "day_index")?;
        let dow: u8 = field(path, line, &rec, 2, "day_of_week")?;
        let hod: u8 = field(path, line, &rec, 3, "hour_of_day")?;
        let steps: u64 = field(path, line, &rec, 4, "steps")?;
        let wear: u8 = field(path, line, &rec, 5, "wear_minutes")?;
        let hr = optional_f64(path, line, &rec, 6, "heart_rate")?;
        let block = HourlyBlock::new(steps, wear, hr, dow, hod).map_err(|e| Error::parse(path, line, e.to_string()))?;
        let abs = day * 24 + i64::from(hod);
        let entry = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (abs - 1, Vec::new(), Vec::new())
        });
        if abs != entry.0 + 1 {
            return Err(Error::parse(path, line, format!("participant {id}: hours are not consecutive")));
        }
        entry.0 = abs;
        if has_mask {
            let m: u8 = field(path, line, &rec, 7, "was_masked")?;
            match m {
                0 => {}
                1 => entry.2.push(entry.1.len()),
                _ => return Err(Error::parse(path, line, "was_masked must be 0 or 1")),
            }
        }
        entry.1.push(block);
    }
    let mut cohort = Vec::with_capacity(order.len());
    let mut masked = Vec::with_capacity(order.len());
    for id in order {
        let (_, blocks, m) = rows.remove(&id).expect("inserted above");
        let n = blocks.len();
        cohort.push(ParticipantSeries::new(id, blocks)?);
        masked.push(HourMask::from_indices(n, m));
    }
    Ok(HourlyData {
        cohort,
        masked: has_mask.then_some(masked),
    })
}

pub fn read_hourly_csv(path: &Path) -> Result<HourlyData> {
    parse_hourly_csv(path, &read_to_string(path)?)
}

/// Minute CSV rolled up per participant.
pub fn parse_minute_csv(path: &Path, text: &str, anchor: CalendarAnchor) -> Result<Vec<ParticipantSeries>> {
    let mut rd = reader(text);
    check_header(path, &mut rd, &MINUTE_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<MinuteRecord>> = HashMap::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default().to_owned();
        let r = MinuteRecord {
            participant_id: id.clone(),
            minute: field(path, line, &rec, 1, "minute_index")?,
            steps: field(path, line, &rec, 2, "steps")?,
            heart_rate: optional_f64(path, line, &rec, 3, "heart_rate")?,
        };
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(r);
    }
    order
        .into_iter()
        .map(|id| Ok(rollup_minutes_to_hours(&groups[&id], anchor)?))
        .collect()
}

pub fn read_minute_csv(path: &Path, anchor: CalendarAnchor) -> Result<Vec<ParticipantSeries>> {
    parse_minute_csv(path, &read_to_string(path)?, anchor)
}

pub fn split_csv_bytes(cohort: &[ParticipantSeries], split: &StratifiedSplit) -> Vec<u8> {
    let mut w = writer();
    record(&mut w, SPLIT_HEADER);
    for (s, p) in cohort.iter().zip(&split.participants) {
        let mut rows: Vec<(usize, Part)> = p
            .train
            .iter()
            .map(|&t| (t, Part::Train))
            .chain(p.validation.iter().map(|&t| (t, Part::Validation)))
            .chain(p.test.iter().map(|&t| (t, Part::Test)))
            .collect();
        rows.sort_unstable();
        for (t, part) in rows {
            record(&mut w, [s.id.as_str(), &t.to_string(), part.as_str()]);
        }
    }
    finish(w)
}

pub fn write_split_csv(path: &Path, cohort: &[ParticipantSeries], split: &StratifiedSplit) -> Result<()> {
    atomic_write(path, &split_csv_bytes(cohort, split))
}

/// Read a split file, aligned to `cohort`. Fold and seed are not stored and
/// come back as given.
pub fn parse_split_csv(
    path: &Path,
    text: &str,
    cohort: &[ParticipantSeries],
    fold: usize,
    seed: u64,
    proportions: Proportions,
) -> Result<StratifiedSplit> {
    let index: HashMap<&str, usize> = cohort.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let mut parts = vec![ParticipantSplit::default(); cohort.len()];
    let mut rd = reader(text);
    check_header(path, &mut rd, &SPLIT_HEADER)?;
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        let &p = index
            .get(id)
            .ok_or_else(|| Error::parse(path, line, format!("unknown participant `{id}`")))?;
        let t: usize = field(path, line, &rec, 1, "hour_index")?;
        if t >= cohort[p].len() || !cohort[p].is_observed(t) {
            return Err(Error::parse(path, line, format!("hour {t} is not an observed block of `{id}`")));
        }
        let list = match rec.get(2).unwrap_or_default() {
            "train" => &mut parts[p].train,
            "validation" => &mut parts[p].validation,
            "test" => &mut parts[p].test,
            other => return Err(Error::parse(path, line, format!("unknown part `{other}`"))),
        };
        list.push(t);
    }
    for p in &mut parts {
        for list in [&mut p.train, &mut p.validation, &mut p.test] {
            list.sort_unstable();
        }
        let mut all: Vec<usize> = p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        if all.len() != n {
            return Err(Error::Invalid(format!("{}: an hour is assigned twice", path.display())));
        }
    }
    Ok(StratifiedSplit {
        fold,
        seed,
        proportions,
        participants: parts,
        warnings: Vec::new(),
    })
}

/// One row of the predictions file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow<'a> {
    pub method: &'a str,
    pub participant: &'a ParticipantSeries,
    pub hour: usize,
    pub prediction: f64,
    pub truth: Option<u64>,
}

pub fn predictions_csv_bytes<'a>(rows: impl IntoIterator<Item = PredictionRow<'a>>) -> Vec<u8> {
    let mut w = writer();
    record(&mut w, PREDICTION_HEADER);
    for r in rows {
        let b = r.participant.block(r.hour);
        record(
            &mut w,
            [
                r.method.to_owned(),
                r.participant.id.clone(),
                r.hour.to_string(),
                b.day_of_week.to_string(),
                b.hour_of_day.to_string(),
                r.prediction.to_string(),
                r.truth.map(|t| t.to_string()).unwrap_or_default(),
            ],
        );
    }
    finish(w)
}
