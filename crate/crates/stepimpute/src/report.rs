//! Report, ACF, attention-map and training-log files.

use serde::Serialize;

use stepimpute_core::eval::bins::step_bin_range;
use stepimpute_core::eval::missing::{MISSING_BIN_LABELS, N_MISSING_BINS};
use stepimpute_core::eval::EvalReport;
use stepimpute_core::model::{AttentionMaps, TrainLog};

use crate::stats::PairedTTest;

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Vec<u8> {
    w.into_inner().expect("writing to memory cannot fail")
}

fn put<I: IntoIterator<Item = String>>(w: &mut csv::Writer<Vec<u8>>, row: I) {
    w.write_record(row).expect("writing to memory cannot fail");
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One row per method: overall metrics, then Macro MAE and CI per
/// missing-rate bin.
pub fn summary_csv(report: &EvalReport) -> Vec<u8> {
    let mut w = writer();
    let mut header: Vec<String> = ["method", "macro_mae", "ci95", "micro_mae", "macro_rmse", "micro_rmse", "n_participants", "n_blocks"]
        .map(String::from)
        .to_vec();
    for l in MISSING_BIN_LABELS {
        header.push(format!("macro_mae_{l}"));
        header.push(format!("ci95_{l}"));
        header.push(format!("n_participants_{l}"));
    }
    put(&mut w, header);
    for m in &report.methods {
        let x = &m.metrics;
        let mut row = vec![
            m.name.clone(),
            num(x.macro_mae),
            num(m.ci95),
            num(x.micro_mae),
            num(x.macro_rmse),
            num(x.micro_rmse),
            x.n_participants.to_string(),
            x.n_blocks.to_string(),
        ];
        for b in &m.by_missing_bin {
            row.push(opt(b.map(|b| b.macro_mae)));
            row.push(opt(b.map(|b| b.ci95)));
            row.push(b.map_or(0, |b| b.n_participants).to_string());
        }
        put(&mut w, row);
    }
    finish(w)
}

/// Long format: one row per (step-count bin, method).
pub fn step_bins_csv(report: &EvalReport) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["bin", "lower", "upper", "count", "method", "micro_mae", "ratio"].map(String::from));
    for row in &report.step_bins.rows {
        let (lo, hi) = step_bin_range(row.bin);
        for (m, s) in report.methods.iter().enumerate() {
            put(
                &mut w,
                [
                    row.bin.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    row.count.to_string(),
                    s.name.clone(),
                    num(row.micro_mae[m]),
                    num(row.ratio[m]),
                ],
            );
        }
    }
    finish(w)
}

#[derive(Serialize)]
struct MethodLine<'a> {
    kind: &'static str,
    method: &'a str,
    macro_mae: f64,
    ci95: f64,
    micro_mae: f64,
    macro_rmse: f64,
    micro_rmse: f64,
    n_participants: usize,
    n_blocks: usize,
    missing_bins: Vec<MissingBinLine<'a>>,
    participant_mae: &'a [Option<f64>],
}

#[derive(Serialize)]
struct MissingBinLine<'a> {
    bin: &'a str,
    macro_mae: Option<f64>,
    ci95: Option<f64>,
    n_participants: usize,
    n_blocks: usize,
}

#[derive(Serialize)]
struct StepBinLine<'a> {
    kind: &'static str,
    bin: usize,
    lower: u64,
    upper: u64,
    count: usize,
    reference: &'a str,
    micro_mae: Vec<(&'a str, f64)>,
    ratio: Vec<(&'a str, f64)>,
}

/// JSON lines: one object per method, then one per step-count bin.
pub fn report_jsonl(report: &EvalReport) -> Vec<u8> {
    let mut out = Vec::new();
    for m in &report.methods {
        let line = MethodLine {
            kind: "method",
            method: &m.name,
            macro_mae: m.metrics.macro_mae,
            ci95: m.ci95,
            micro_mae: m.metrics.micro_mae,
            macro_rmse: m.metrics.macro_rmse,
            micro_rmse: m.metrics.micro_rmse,
            n_participants: m.metrics.n_participants,
            n_blocks: m.metrics.n_blocks,
            missing_bins: (0..N_MISSING_BINS)
                .map(|b| {
                    let s = m.by_missing_bin[b];
                    MissingBinLine {
                        bin: MISSING_BIN_LABELS[b],
                        macro_mae: s.map(|s| s.macro_mae),
                        ci95: s.map(|s| s.ci95),
                        n_participants: s.map_or(0, |s| s.n_participants),
                        n_blocks: s.map_or(0, |s| s.n_blocks),
                    }
                })
                .collect(),
            participant_mae: &m.participant_mae,
        };
        serde_json::to_writer(&mut out, &line).expect("serializing to memory cannot fail");
        out.push(b'\n');
    }
    let reference = &report.methods[report.step_bins.reference].name;
    for row in &report.step_bins.rows {
        let (lower, upper) = step_bin_range(row.bin);
        let names = report.methods.iter().map(|m| m.name.as_str());
        let line = StepBinLine {
            kind: "step_bin",
            bin: row.bin,
            lower,
            upper,
            count: row.count,
            reference,
            micro_mae: names.clone().zip(row.micro_mae.iter().copied()).collect(),
            ratio: names.zip(row.ratio.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut out, &line).expect("serializing to memory cannot fail");
        out.push(b'\n');
    }
    out
}

pub fn ttest_csv(rows: &[(String, String, Option<PairedTTest>)]) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["method", "reference", "n", "mean_difference", "t", "p_value"].map(String::from));
    for (m, r, t) in rows {
        put(
            &mut w,
            [
                m.clone(),
                r.clone(),
                t.map_or(String::new(), |t| t.n.to_string()),
                opt(t.map(|t| t.mean_difference)),
                opt(t.map(|t| t.t)),
                opt(t.map(|t| t.p_value)),
            ],
        );
    }
    finish(w)
}

/// `lag,acf` with an empty value where no participant qualifies.
pub fn acf_csv(values: &[Option<f64>]) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["lag", "acf"].map(String::from));
    for (i, v) in values.iter().enumerate() {
        put(&mut w, [(i + 1).to_string(), opt(*v)]);
    }
    finish(w)
}

/// One grid: rows are hour offsets, columns day offsets.
pub fn attention_grid_csv(maps: &AttentionMaps, grid: &[f64]) -> Vec<u8> {
    let shape = maps.shape;
    let mut w = writer();
    let mut header = vec!["hour_offset".to_string()];
    header.extend(shape.day_offsets().iter().map(|d| format!("day{d:+}")));
    put(&mut w, header);
    for (r, h) in shape.hour_offsets().into_iter().enumerate() {
        let mut row = vec![format!("{h:+}")];
        row.extend((0..shape.cols()).map(|c| num(grid[r * shape.cols() + c])));
        put(&mut w, row);
    }
    finish(w)
}

pub fn train_log_csv(log: &TrainLog) -> Vec<u8> {
    let mut w = writer();
    put(&mut w, ["epoch", "train_mae", "val_micro_mae", "optimizer_steps", "best"].map(String::from));
    for e in &log.epochs {
        put(
            &mut w,
            [
                e.epoch.to_string(),
                num(e.train_mae),
                num(e.val_micro_mae),
                e.steps.to_string(),
                u8::from(e.epoch == log.best_epoch).to_string(),
            ],
        );
    }
    finish(w)
}
