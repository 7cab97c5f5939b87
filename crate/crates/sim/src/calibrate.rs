//! Bisection on the per-frame WCET so that the best SGPRS variant's pivot
//! point lands in a target band.

use std::ops::RangeInclusive;

use crate::config::{Scenario, SchedulerKind};
use crate::sweep::{run_scenario, RunError, RunFlags};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationStep {
    pub frame_wcet_ms: f64,
    pub best_pivot: usize,
    pub best_variant: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub frame_wcet_ms: f64,
    pub best_pivot: usize,
    pub steps: Vec<CalibrationStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("no SGPRS runs for scenario `{0}` in the config")]
    NoRuns(String),
    #[error("no WCET in [{lo}, {hi}] puts the pivot in the target band after {steps} steps")]
    NotFound { lo: f64, hi: f64, steps: usize },
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Pivot of one variant's series, stopping at the first run with a miss.
/// `runs` must be the series sorted by task count.
pub fn series_pivot(runs: &[Scenario], frame_wcet_ms: f64) -> Result<usize, RunError> {
    let mut pivot = 0;
    for s in runs.iter().filter(|s| s.n_tasks > 0) {
        if s.n_tasks != pivot + 1 {
            break;
        }
        let mut s = s.clone();
        s.task.frame_wcet_ms = frame_wcet_ms;
        if run_scenario(&s, RunFlags::default())?.metrics.dmr > 0.0 {
            break;
        }
        pivot = s.n_tasks;
    }
    Ok(pivot)
}

/// Best pivot over the SGPRS variants of `scenario_id`.
pub fn best_pivot(
    runs: &[Scenario],
    scenario_id: &str,
    frame_wcet_ms: f64,
) -> Result<CalibrationStep, CalibrationError> {
    let mut variants: Vec<String> = Vec::new();
    for s in runs {
        if s.scenario_id == scenario_id
            && s.scheduler == SchedulerKind::Sgprs
            && !variants.contains(&s.variant())
        {
            variants.push(s.variant());
        }
    }
    if variants.is_empty() {
        return Err(CalibrationError::NoRuns(scenario_id.to_string()));
    }
    let mut best: Option<CalibrationStep> = None;
    for v in variants {
        let mut series: Vec<Scenario> = runs
            .iter()
            .filter(|s| s.scenario_id == scenario_id && s.variant() == v)
            .cloned()
            .collect();
        series.sort_by_key(|s| s.n_tasks);
        let p = series_pivot(&series, frame_wcet_ms)?;
        if best.as_ref().is_none_or(|b| p > b.best_pivot) {
            best = Some(CalibrationStep {
                frame_wcet_ms,
                best_pivot: p,
                best_variant: v,
            });
        }
    }
    Ok(best.expect("at least one variant"))
}

/// Bisects `frame_wcet_ms` in `[lo, hi]` until the best pivot falls in
/// `band`. A larger WCET means fewer tasks fit, so the pivot is
/// non-increasing in the WCET.
pub fn calibrate(
    runs: &[Scenario],
    scenario_id: &str,
    (lo, hi): (f64, f64),
    band: RangeInclusive<usize>,
    max_steps: usize,
) -> Result<Calibration, CalibrationError> {
    let (mut a, mut b) = (lo, hi);
    let mut steps = Vec::new();
    for _ in 0..max_steps {
        let mid = 0.5 * (a + b);
        let step = best_pivot(runs, scenario_id, mid)?;
        let p = step.best_pivot;
        steps.push(step);
        if band.contains(&p) {
            return Ok(Calibration {
                frame_wcet_ms: mid,
                best_pivot: p,
                steps,
            });
        }
        if p > *band.end() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Err(CalibrationError::NotFound {
        lo,
        hi,
        steps: max_steps,
    })
}
