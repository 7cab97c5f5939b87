//! Running scenarios and collecting their metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sgprs_core::engine::{simulate, SimResult};
use sgprs_core::metrics::{pivot_point, RunMetrics};
use sgprs_core::naive::Naive;
use sgprs_core::sgprs::{Sgprs, SgprsConfig};

use crate::config::{Scenario, SchedulerKind};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid scenario: {0}")]
    Config(#[from] crate::config::ConfigError),
    #[error("simulation failed: {0}")]
    Sim(#[from] sgprs_core::Error),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunFlags {
    pub keep_trace: bool,
    pub audit: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub result: SimResult,
    pub metrics: RunMetrics,
}

pub fn run_scenario(s: &Scenario, flags: RunFlags) -> Result<RunOutput, RunError> {
    let workload = s.workload()?;
    let mut options = s.options();
    options.keep_trace = flags.keep_trace;
    options.audit = flags.audit;
    let result = match s.scheduler {
        SchedulerKind::Naive => simulate(&workload, &mut Naive::new(), &options)?,
        SchedulerKind::Sgprs => {
            let mut policy = Sgprs::new(SgprsConfig {
                slot_borrowing: s.slot_borrowing,
                queue_metric: s.queue_metric,
            });
            simulate(&workload, &mut policy, &options)?
        }
    };
    let metrics = result.metrics();
    Ok(RunOutput { result, metrics })
}

/// Runs every scenario on up to `jobs` threads. Results come back in input
/// order regardless of which thread ran what.
pub fn run_all(
    scenarios: &[Scenario],
    jobs: usize,
    flags: RunFlags,
) -> Vec<Result<RunOutput, RunError>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutput, RunError>>>> =
        Mutex::new((0..scenarios.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, scenarios.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(s) = scenarios.get(i) else { break };
                let out = run_scenario(s, flags);
                slots.lock().expect("no panics while holding the lock")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("threads joined")
        .into_iter()
        .map(|r| r.expect("every index was claimed"))
        .collect()
}

/// One line of the sweep CSV. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario_id: String,
    pub scheduler: String,
    pub n_contexts: u32,
    pub os: f64,
    pub n_tasks: usize,
    pub total_fps: f64,
    pub dmr: f64,
    pub jobs_released: u64,
    pub jobs_missed: u64,
    pub pivot_flag: bool,
    pub jobs_due: u64,
    pub stage_misses: u64,
}

pub const CSV_HEADER: [&str; 12] = [
    "scenario_id",
    "scheduler",
    "n_contexts",
    "os",
    "n_tasks",
    "total_fps",
    "dmr",
    "jobs_released",
    "jobs_missed",
    "pivot_flag",
    "jobs_due",
    "stage_misses",
];

impl CsvRow {
    pub fn new(s: &Scenario, m: &RunMetrics) -> Self {
        Self {
            scenario_id: s.scenario_id.clone(),
            scheduler: s.variant(),
            n_contexts: s.n_contexts,
            os: s.over_subscription,
            n_tasks: s.n_tasks,
            total_fps: m.total_fps,
            dmr: m.dmr,
            jobs_released: m.jobs_released,
            jobs_missed: m.jobs_missed,
            pivot_flag: false,
            jobs_due: m.jobs_due,
            stage_misses: m.stage_misses,
        }
    }

    fn series_key(&self) -> (String, String) {
        (self.scenario_id.clone(), self.scheduler.clone())
    }
}

/// Rows of one (scenario, scheduler) pair, in first-appearance order.
pub fn group_series(rows: &[CsvRow]) -> Vec<((String, String), Vec<&CsvRow>)> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        let k = r.series_key();
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let mut v = groups.remove(&k).expect("inserted above");
            v.sort_by_key(|r| r.n_tasks);
            (k, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotRow {
    pub scenario_id: String,
    pub scheduler: String,
    pub pivot: usize,
    pub peak_fps: f64,
    pub max_n_tasks: usize,
    pub fps_at_max_n: f64,
}

/// Pivot point of every series. Series whose task counts are not `1..=N`
/// are reported as errors.
pub fn pivots(rows: &[CsvRow]) -> Vec<Result<PivotRow, (String, String, sgprs_core::Error)>> {
    group_series(rows)
        .into_iter()
        .map(|((sid, sched), series)| {
            let points: Vec<(usize, f64)> = series.iter().map(|r| (r.n_tasks, r.dmr)).collect();
            match pivot_point(&points) {
                Ok(pivot) => {
                    let last = series.last().expect("series is non-empty");
                    Ok(PivotRow {
                        scenario_id: sid,
                        scheduler: sched,
                        pivot,
                        peak_fps: series.iter().map(|r| r.total_fps).fold(0.0, f64::max),
                        max_n_tasks: last.n_tasks,
                        fps_at_max_n: last.total_fps,
                    })
                }
                Err(e) => Err((sid, sched, e)),
            }
        })
        .collect()
}

/// Sets `pivot_flag` on rows inside their series' zero-miss prefix.
pub fn mark_pivots(rows: &mut [CsvRow]) {
    let table: BTreeMap<(String, String), usize> = pivots(rows)
        .into_iter()
        .filter_map(Result::ok)
        .map(|p| ((p.scenario_id, p.scheduler), p.pivot))
        .collect();
    for r in rows.iter_mut() {
        let pivot = table.get(&r.series_key()).copied().unwrap_or(0);
        r.pivot_flag = r.n_tasks >= 1 && r.n_tasks <= pivot;
    }
}

fn fmt_f(x: f64, digits: usize) -> String {
    format!("{x:.digits$}")
}

/// Writes rows with a header and fixed float precision, so identical
/// inputs give identical bytes.
pub fn write_csv<W: Write>(rows: &[CsvRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario_id.clone(),
            r.scheduler.clone(),
            r.n_contexts.to_string(),
            format!("{:?}", r.os),
            r.n_tasks.to_string(),
            fmt_f(r.total_fps, 3),
            fmt_f(r.dmr, 6),
            r.jobs_released.to_string(),
            r.jobs_missed.to_string(),
            r.pivot_flag.to_string(),
            r.jobs_due.to_string(),
            r.stage_misses.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<CsvRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_pivots<W: Write>(rows: &[PivotRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario_id",
        "scheduler",
        "pivot",
        "peak_fps",
        "max_n_tasks",
        "fps_at_max_n",
    ])?;
    for p in rows {
        w.write_record([
            p.scenario_id.clone(),
            p.scheduler.clone(),
            p.pivot.to_string(),
            fmt_f(p.peak_fps, 3),
            p.max_n_tasks.to_string(),
            fmt_f(p.fps_at_max_n, 3),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// gnuplot-style two-column data: `n_tasks value`.
pub fn series_text(series: &[&CsvRow], value: impl Fn(&CsvRow) -> f64, column: &str) -> String {
    let mut s = format!("# n_tasks {column}\n");
    for r in series {
        s.push_str(&format!("{} {:.6}\n", r.n_tasks, value(r)));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(sid: &str, sched: &str, n: usize, dmr: f64) -> CsvRow {
        CsvRow {
            scenario_id: sid.into(),
            scheduler: sched.into(),
            n_contexts: 2,
            os: 1.0,
            n_tasks: n,
            total_fps: 30.0 * n as f64,
            dmr,
            jobs_released: 0,
            jobs_missed: 0,
            pivot_flag: false,
            jobs_due: 0,
            stage_misses: 0,
        }
    }

    #[test]
    fn pivots_per_series() {
        let mut rows = vec![
            row("a", "naive", 1, 0.0),
            row("a", "naive", 2, 0.1),
            row("a", "sgprs_1.0", 1, 0.0),
            row("a", "sgprs_1.0", 2, 0.0),
        ];
        let p: Vec<_> = pivots(&rows).into_iter().map(Result::unwrap).collect();
        assert_eq!(p[0].pivot, 1);
        assert_eq!(p[1].pivot, 2);
        assert_eq!(p[1].peak_fps, 60.0);
        mark_pivots(&mut rows);
        let flags: Vec<_> = rows.iter().map(|r| r.pivot_flag).collect();
        assert_eq!(flags, vec![true, false, true, true]);
    }

    #[test]
    fn non_contiguous_series_is_an_error() {
        let rows = vec![row("a", "naive", 1, 0.0), row("a", "naive", 3, 0.0)];
        assert!(pivots(&rows)[0].is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = vec![row("a", "naive", 1, 0.0), row("a", "naive", 2, 0.25)];
        mark_pivots(&mut rows);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }
}
