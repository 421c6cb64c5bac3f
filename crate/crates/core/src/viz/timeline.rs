//! Simulator timeline CSV: `issue|callback,gpu_id,curr_cycle,node_id,node_name`,
//! no header.

use std::io::{Read, Write};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowKind {
    Issue,
    Callback,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Issue => "issue",
            RowKind::Callback => "callback",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TimelineRow {
    pub kind: RowKind,
    pub gpu_id: u32,
    pub curr_cycle: u64,
    pub node_id: u64,
    pub node_name: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TimelineError {
    #[error("timeline line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn write_timeline_csv<W: Write>(out: W, rows: &[TimelineRow]) -> Result<(), TimelineError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in rows {
        w.write_record([
            r.kind.as_str(),
            &r.gpu_id.to_string(),
            &r.curr_cycle.to_string(),
            &r.node_id.to_string(),
            &r.node_name,
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn timeline_csv_string(rows: &[TimelineRow]) -> String {
    let mut buf = Vec::new();
    write_timeline_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn read_timeline_csv<R: Read>(input: R) -> Result<Vec<TimelineRow>, TimelineError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| TimelineError::Parse { line, msg };
        if rec.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", rec.len())));
        }
        let kind = match &rec[0] {
            "issue" => RowKind::Issue,
            "callback" => RowKind::Callback,
            other => return Err(bad(format!("unknown row kind {other:?}"))),
        };
        let num = |i: usize, what: &str| rec[i].parse::<u64>().map_err(|_| bad(format!("bad {what} {:?}", &rec[i])));
        let gpu = num(1, "gpu_id")?;
        rows.push(TimelineRow {
            kind,
            gpu_id: u32::try_from(gpu).map_err(|_| bad(format!("gpu_id {gpu} out of range")))?,
            curr_cycle: num(2, "curr_cycle")?,
            node_id: num(3, "node_id")?,
            node_name: rec[4].to_string(),
        });
    }
    Ok(rows)
}
