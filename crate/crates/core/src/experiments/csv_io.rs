use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{MethodName, RunRecord};

pub const CSV_HEADER: [&str; 6] = ["method", "r", "seed", "task", "mse", "cumloss"];

/// One row per `(record, task)`, tasks numbered from 1. Reals use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for rec in records {
        for (t, (mse, cum)) in rec.per_task_mse.iter().zip(&rec.per_task_cumloss).enumerate() {
            w.write_record([
                rec.method.to_string(),
                rec.r.to_string(),
                rec.seed.to_string(),
                (t + 1).to_string(),
                mse.to_string(),
                cum.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = row.get(i).ok_or_else(|| Error::Parse(format!("missing column {}", CSV_HEADER[i])))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("bad {} value {raw:?}", CSV_HEADER[i])))
}

/// Rebuilds records from rows in file order; consecutive rows with the same
/// `(method, r, seed)` form one record.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(CSV_HEADER) {
        return Err(Error::Parse("unexpected CSV header".into()));
    }
    let mut out: Vec<RunRecord> = Vec::new();
    for row in rd.records() {
        let row = row?;
        let method: MethodName = field(&row, 0)?;
        let r: f64 = field(&row, 1)?;
        let seed: u64 = field(&row, 2)?;
        let task: usize = field(&row, 3)?;
        let mse: f64 = field(&row, 4)?;
        let cum: f64 = field(&row, 5)?;
        let same = out.last().is_some_and(|rec| {
            rec.method == method && rec.r.to_bits() == r.to_bits() && rec.seed == seed
        });
        if !same {
            out.push(RunRecord {
                method,
                r,
                seed,
                per_task_mse: Vec::new(),
                per_task_cumloss: Vec::new(),
            });
        }
        let rec = out.last_mut().expect("pushed above");
        if task != rec.per_task_mse.len() + 1 {
            return Err(Error::Parse(format!("task {task} out of sequence")));
        }
        rec.per_task_mse.push(mse);
        rec.per_task_cumloss.push(cum);
    }
    Ok(out)
}
