//! CSV outputs: per-round trace, per-run summary, cross-run comparison.
//!
//! Column sets and order are fixed. Reals are written with Rust's shortest
//! round-trip formatting, so a fixed seed gives byte-identical files.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::domain::RoundDecision;
use crate::error::{Error, Result};
use crate::sim::{run_simulation, RoundRecord, RunSummary};
use crate::strategy::StrategyKind;

pub const UNREACHED: &str = "unreached";
pub const SKIP: &str = "skip";

/// Window of the moving average applied to loss curves at report time.
pub const LOSS_SMOOTHING_WINDOW: usize = 10;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io("<csv>", io),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn trace_header(labels: usize) -> Vec<String> {
    let mut cols = vec!["round".to_string(), "node_or_skip".to_string()];
    cols.extend((0..labels).map(|c| format!("samples_label_{c}")));
    cols.extend(
        [
            "t_comp",
            "t_comm",
            "t_idle",
            "t_total_cum",
            "s_total_cum",
            "accuracy",
            "local_loss",
            "global_loss",
            "variance",
        ]
        .map(String::from),
    );
    cols
}

pub fn write_trace<W: Write>(out: W, trace: &[RoundRecord], labels: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trace_header(labels)).map_err(csv_err)?;
    for r in trace {
        let mut row = vec![r.round.to_string()];
        match &r.decision {
            RoundDecision::Train { node, counts, .. } => {
                row.push(node.to_string());
                row.extend(counts.iter().map(|c| c.to_string()));
            }
            RoundDecision::Skip => {
                row.push(SKIP.to_string());
                row.extend(std::iter::repeat_n("0".to_string(), labels));
            }
        }
        row.extend(
            [
                r.timing.comp,
                r.timing.comm,
                r.timing.idle,
                r.cumulative_time,
                r.cumulative_samples,
                r.accuracy,
                r.local_loss,
                r.global_loss,
                r.variance,
            ]
            .iter()
            .map(|v| v.to_string()),
        );
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// One parsed row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// `None` for a skipped round.
    pub node: Option<usize>,
    pub samples: Vec<u64>,
    pub t_comp: f64,
    pub t_comm: f64,
    pub t_idle: f64,
    pub t_total_cum: f64,
    pub s_total_cum: f64,
    pub accuracy: f64,
    pub local_loss: f64,
    pub global_loss: f64,
    pub variance: f64,
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let labels = header
        .len()
        .checked_sub(11)
        .ok_or_else(|| Error::Parse("trace header too short".into()))?;
    if header.iter().map(String::from).collect::<Vec<_>>() != trace_header(labels) {
        return Err(Error::Parse("unexpected trace header".into()));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f: Vec<&str> = rec.iter().collect();
        let node = match f[1] {
            SKIP => None,
            n => Some(n.parse().map_err(|e| Error::Parse(format!("{n}: {e}")))?),
        };
        let samples = f[2..2 + labels]
            .iter()
            .map(|s| s.parse().map_err(|e| Error::Parse(format!("{s}: {e}"))))
            .collect::<Result<Vec<u64>>>()?;
        let v = f[2 + labels..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
        rows.push(TraceRow {
            round: f[0].parse().map_err(|e| Error::Parse(format!("round: {e}")))?,
            node,
            samples,
            t_comp: v[0],
            t_comm: v[1],
            t_idle: v[2],
            t_total_cum: v[3],
            s_total_cum: v[4],
            accuracy: v[5],
            local_loss: v[6],
            global_loss: v[7],
            variance: v[8],
        });
    }
    Ok(rows)
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) if t.is_finite() => t.to_string(),
        _ => UNREACHED.to_string(),
    }
}

pub fn write_summary<W: Write>(out: W, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["strategy", "seed", "threshold", "time_to_accuracy"])
        .map_err(csv_err)?;
    for s in summaries {
        for (threshold, t) in &s.time_to_accuracy {
            w.write_record([
                s.strategy.to_string(),
                s.seed.to_string(),
                threshold.to_string(),
                fmt_time(*t),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Linear-interpolation quantile of an ascending slice; infinities propagate.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::INFINITY;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    if sorted[hi].is_infinite() {
        return f64::INFINITY;
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and spread of time-to-accuracy over seeds; unreached counts as infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub strategy: String,
    pub threshold: f64,
    pub runs: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub unreached: usize,
}

impl Aggregate {
    pub fn from_times(strategy: &str, threshold: f64, times: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = times.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
        v.sort_by(f64::total_cmp);
        Self {
            strategy: strategy.to_string(),
            threshold,
            runs: v.len(),
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
            unreached: times.iter().filter(|t| t.is_none()).count(),
        }
    }

    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Groups summaries by `(threshold, strategy)`, preserving first-seen order.
pub fn aggregate(summaries: &[RunSummary]) -> Vec<Aggregate> {
    let mut keys: Vec<(f64, String)> = Vec::new();
    for s in summaries {
        for (t, _) in &s.time_to_accuracy {
            let key = (*t, s.strategy.to_string());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.sort_by(|a, b| a.0.total_cmp(&b.0));
    keys.into_iter()
        .map(|(t, strat)| {
            let times: Vec<Option<f64>> = summaries
                .iter()
                .filter(|s| s.strategy.as_str() == strat)
                .flat_map(|s| s.time_to_accuracy.iter().filter(|(th, _)| *th == t).map(|(_, v)| *v))
                .collect();
            Aggregate::from_times(&strat, t, &times)
        })
        .collect()
}

pub const COMPARISON_HEADER: [&str; 10] = [
    "row_type",
    "strategy",
    "seed",
    "threshold",
    "time_to_accuracy",
    "median",
    "q1",
    "q3",
    "iqr",
    "unreached",
];

/// Run rows then aggregate rows, grouped by threshold.
pub fn write_comparison<W: Write>(out: W, summaries: &[RunSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPARISON_HEADER).map_err(csv_err)?;
    let aggs = aggregate(summaries);
    let mut thresholds: Vec<f64> = aggs.iter().map(|a| a.threshold).collect();
    thresholds.dedup();
    for t in thresholds {
        for s in summaries {
            for (th, v) in s.time_to_accuracy.iter().filter(|(th, _)| *th == t) {
                w.write_record([
                    "run".to_string(),
                    s.strategy.to_string(),
                    s.seed.to_string(),
                    th.to_string(),
                    fmt_time(*v),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ])
                .map_err(csv_err)?;
            }
        }
        for a in aggs.iter().filter(|a| a.threshold == t) {
            let iqr = if a.q3.is_finite() { Some(a.iqr()) } else { None };
            w.write_record([
                "aggregate".to_string(),
                a.strategy.clone(),
                String::new(),
                a.threshold.to_string(),
                String::new(),
                fmt_time(Some(a.median)),
                fmt_time(Some(a.q1)),
                fmt_time(Some(a.q3)),
                fmt_time(iqr),
                a.unreached.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Trailing moving average; the first `window - 1` points average what is available.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Smoothed loss curves for plotting: round, time, accuracy, smoothed local and global loss.
pub fn write_curves<W: Write>(out: W, trace: &[RoundRecord]) -> Result<()> {
    let local = moving_average(&trace.iter().map(|r| r.local_loss).collect::<Vec<_>>(), LOSS_SMOOTHING_WINDOW);
    let global = moving_average(&trace.iter().map(|r| r.global_loss).collect::<Vec<_>>(), LOSS_SMOOTHING_WINDOW);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "t_total_cum", "accuracy", "local_loss_ma", "global_loss_ma"])
        .map_err(csv_err)?;
    for (i, r) in trace.iter().enumerate() {
        w.write_record([
            r.round.to_string(),
            r.cumulative_time.to_string(),
            r.accuracy.to_string(),
            local[i].to_string(),
            global[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Runs every `(strategy, seed)` pair of `config` in parallel.
///
/// Output order is strategies-major, seeds-minor regardless of scheduling.
pub fn run_compare(
    config: &ScenarioConfig,
    strategies: &[StrategyKind],
    seeds: &[u64],
) -> Result<Vec<RunSummary>> {
    config.validate()?;
    let jobs: Vec<(StrategyKind, u64)> = strategies
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    jobs.par_iter()
        .map(|&(strategy, seed)| {
            let mut cfg = config.clone();
            cfg.strategy = strategy;
            cfg.seed = seed;
            run_simulation(&cfg).map(|(_, summary)| summary)
        })
        .collect()
}
