//! Throughput, deadline-miss rate and pivot point.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{Millis, TaskId};

/// What happened to one released job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JobOutcome {
    pub task: TaskId,
    pub instance: u64,
    pub release: Millis,
    pub deadline: Millis,
    pub completion: Option<Millis>,
    pub dropped: bool,
}

impl JobOutcome {
    /// Late, dropped, or never finished. Finishing exactly at the deadline
    /// is a hit.
    pub fn missed(&self) -> bool {
        self.dropped || self.completion.is_none_or(|c| c > self.deadline)
    }
}

fn in_window(t: Millis, warmup: Millis, horizon: Millis) -> bool {
    t > warmup && t <= horizon
}

fn check_window(warmup: Millis, horizon: Millis) -> Result<()> {
    if horizon > warmup {
        Ok(())
    } else {
        Err(Error::InvalidWindow { warmup, horizon })
    }
}

/// Completed frames (late ones included) per second over `(warmup, horizon]`.
pub fn total_fps(outcomes: &[JobOutcome], warmup: Millis, horizon: Millis) -> Result<f64> {
    check_window(warmup, horizon)?;
    let frames = outcomes
        .iter()
        .filter_map(|o| o.completion)
        .filter(|&c| in_window(c, warmup, horizon))
        .count();
    Ok(frames as f64 / ((horizon - warmup) / 1000.0))
}

/// Fraction of jobs with a deadline in `(warmup, horizon]` that missed it.
/// Zero when no deadline falls in the window.
pub fn dmr(outcomes: &[JobOutcome], warmup: Millis, horizon: Millis) -> Result<f64> {
    check_window(warmup, horizon)?;
    let (due, missed) = due_and_missed(outcomes, warmup, horizon);
    Ok(if due == 0 {
        0.0
    } else {
        missed as f64 / due as f64
    })
}

fn due_and_missed(outcomes: &[JobOutcome], warmup: Millis, horizon: Millis) -> (u64, u64) {
    outcomes
        .iter()
        .filter(|o| in_window(o.deadline, warmup, horizon))
        .fold((0, 0), |(due, missed), o| {
            (due + 1, missed + o.missed() as u64)
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub task: TaskId,
    pub fps: f64,
    pub jobs_due: u64,
    pub jobs_missed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub total_fps: f64,
    pub dmr: f64,
    /// Every release over the whole run.
    pub jobs_released: u64,
    pub jobs_completed: u64,
    /// Jobs whose deadline falls in the measurement window.
    pub jobs_due: u64,
    /// Jobs among `jobs_due` that missed.
    pub jobs_missed: u64,
    pub stage_misses: u64,
    pub per_task: Vec<TaskMetrics>,
}

impl RunMetrics {
    pub fn from_outcomes(
        outcomes: &[JobOutcome],
        n_tasks: usize,
        warmup: Millis,
        horizon: Millis,
        stage_misses: u64,
    ) -> Self {
        let window_s = (horizon - warmup) / 1000.0;
        let (jobs_due, jobs_missed) = due_and_missed(outcomes, warmup, horizon);
        let completed_in_window =
            |o: &&JobOutcome| o.completion.is_some_and(|c| in_window(c, warmup, horizon));
        let per_task = (0..n_tasks)
            .map(|i| {
                let task = TaskId(i as u32);
                let mine: Vec<JobOutcome> = outcomes
                    .iter()
                    .filter(|o| o.task == task)
                    .copied()
                    .collect();
                let (due, missed) = due_and_missed(&mine, warmup, horizon);
                TaskMetrics {
                    task,
                    fps: mine.iter().filter(completed_in_window).count() as f64 / window_s,
                    jobs_due: due,
                    jobs_missed: missed,
                }
            })
            .collect();
        Self {
            total_fps: outcomes.iter().filter(completed_in_window).count() as f64 / window_s,
            dmr: if jobs_due == 0 {
                0.0
            } else {
                jobs_missed as f64 / jobs_due as f64
            },
            jobs_released: outcomes.len() as u64,
            jobs_completed: outcomes.iter().filter(|o| o.completion.is_some()).count() as u64,
            jobs_due,
            jobs_missed,
            stage_misses,
            per_task,
        }
    }
}

/// Largest `n` such that every run with `1..=n` tasks had no deadline miss.
///
/// `sweep` holds `(n_tasks, dmr)` pairs in any order; the task counts must
/// be exactly `1..=N`. Runs with 0 tasks are ignored.
pub fn pivot_point(sweep: &[(usize, f64)]) -> Result<usize> {
    let mut points: Vec<(usize, f64)> = sweep.iter().copied().filter(|&(n, _)| n > 0).collect();
    points.sort_by_key(|&(n, _)| n);
    for (i, &(n, _)) in points.iter().enumerate() {
        if n != i + 1 {
            return Err(Error::NonContiguousSweep(format!(
                "expected {} tasks at position {}, found {n}",
                i + 1,
                i
            )));
        }
    }
    Ok(points.iter().take_while(|&&(_, d)| d == 0.0).count())
}
