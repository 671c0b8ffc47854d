use crate::error::Result;
use crate::loss::Task;
use crate::within_task::TaskTrace;

use super::{MethodName, RunRecord};

/// Mean of the task's losses at the end-of-task decision.
pub fn mse_end_of_task(task: &Task, trace: &TaskTrace) -> Result<f64> {
    Ok(task.total_loss(&trace.end_decision)? / task.n() as f64)
}

/// `R(t) = (1 / (n t)) sum_{k <= t} s_k` over per-task end-of-task sums.
pub fn regret_curve(per_task_sums: &[f64], n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    per_task_sums
        .iter()
        .enumerate()
        .map(|(k, s)| {
            acc += s;
            acc / (n as f64 * (k + 1) as f64)
        })
        .collect()
}

/// Mean over the last `ceil(T/2)` tasks.
pub fn last_half_mean(values: &[f64]) -> f64 {
    let k = values.len().div_ceil(2);
    let tail = &values[values.len() - k..];
    tail.iter().sum::<f64>() / k as f64
}

pub fn final_regret(record: &RunRecord, n: usize) -> f64 {
    regret_curve(&record.per_task_cumloss, n)
        .last()
        .copied()
        .unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub method: MethodName,
    pub r: f64,
    /// 1-based task index.
    pub task: usize,
    pub mean: f64,
    /// `1.96 * sd / sqrt(runs)`; absent with a single run.
    pub half_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryCell {
    pub method: MethodName,
    pub r: f64,
    pub mean: f64,
    pub half_width: Option<f64>,
    pub runs: usize,
}

fn mean_and_half_width(values: &[f64]) -> (f64, Option<f64>) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, Some(1.96 * var.sqrt() / k.sqrt()))
}

/// Groups by `(method, r)` in order of first appearance.
fn groups<T>(items: &[T], key: impl Fn(&T) -> (MethodName, f64)) -> Vec<((MethodName, f64), Vec<&T>)> {
    let mut out: Vec<((MethodName, f64), Vec<&T>)> = Vec::new();
    for rec in items {
        let key = key(rec);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(rec),
            None => out.push((key, vec![rec])),
        }
    }
    out
}

/// Per-task mean MSE across seeds with a normal-approximation 95% half-width.
pub fn aggregate(records: &[RunRecord]) -> Vec<CurvePoint> {
    let mut out = Vec::new();
    for ((method, r), recs) in groups(records, |rec| (rec.method, rec.r)) {
        let t_len = recs.iter().map(|r| r.per_task_mse.len()).min().unwrap_or(0);
        for t in 0..t_len {
            let vals: Vec<f64> = recs.iter().map(|rec| rec.per_task_mse[t]).collect();
            let (mean, half_width) = mean_and_half_width(&vals);
            out.push(CurvePoint { method, r, task: t + 1, mean, half_width });
        }
    }
    out
}

/// One cell per `(method, r)` from a per-record statistic.
pub fn summarize(records: &[RunRecord], stat: impl Fn(&RunRecord) -> f64) -> Vec<SummaryCell> {
    summarize_runs(records, |rec| rec, stat)
}

/// `summarize` over anything that carries a run record.
pub fn summarize_runs<T>(
    items: &[T],
    record: impl Fn(&T) -> &RunRecord,
    stat: impl Fn(&T) -> f64,
) -> Vec<SummaryCell> {
    groups(items, |it| (record(it).method, record(it).r))
        .into_iter()
        .map(|((method, r), recs)| {
            let vals: Vec<f64> = recs.iter().map(|rec| stat(rec)).collect();
            let (mean, half_width) = mean_and_half_width(&vals);
            SummaryCell { method, r, mean, half_width, runs: vals.len() }
        })
        .collect()
}
