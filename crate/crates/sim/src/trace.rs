//! Tab-separated event traces.

use std::io::{self, Write};

use sgprs_core::engine::TraceRecord;
use sgprs_core::model::PriorityLevel;

pub const TSV_HEADER: &str = "time_ms\tkind\ttask\tinstance\tstage\tcontext\tdetail";

fn level(l: PriorityLevel) -> &'static str {
    match l {
        PriorityLevel::High => "high",
        PriorityLevel::Medium => "medium",
        PriorityLevel::Low => "low",
    }
}

fn or_dash<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn format_record(r: &TraceRecord) -> String {
    let mut detail = Vec::new();
    if let Some(l) = r.level {
        detail.push(format!("level={}", level(l)));
    }
    if let Some(s) = r.slot {
        detail.push(format!("slot={}", format!("{s:?}").to_lowercase()));
    }
    if let Some(d) = r.deadline {
        detail.push(format!("deadline={d:.6}"));
    }
    format!(
        "{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.time,
        r.kind.as_str(),
        or_dash(r.task.map(|t| t.0)),
        or_dash(r.instance),
        or_dash(r.stage),
        or_dash(r.context.map(|c| c.0)),
        if detail.is_empty() {
            "-".to_string()
        } else {
            detail.join(",")
        },
    )
}

pub fn write_tsv<W: Write>(trace: &[TraceRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TSV_HEADER}")?;
    for r in trace {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()
}
