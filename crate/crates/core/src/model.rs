//! Task system, context pool, and the offline phase.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::speedup::{CurveId, CurveSet, WorkQuantity};

/// Milliseconds of simulated time.
pub type Millis = f64;

/// Streams of each class per context.
pub const HIGH_SLOTS: u8 = 2;
pub const LOW_SLOTS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContextId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BasePriority {
    High,
    Low,
}

/// Runtime priority. `Medium` is only ever given to a `Low` stage whose job
/// has already missed a stage deadline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PriorityLevel {
    High,
    Medium,
    Low,
}

impl From<BasePriority> for PriorityLevel {
    fn from(p: BasePriority) -> Self {
        match p {
            BasePriority::High => PriorityLevel::High,
            BasePriority::Low => PriorityLevel::Low,
        }
    }
}

/// Input description of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSpec {
    /// WCET in ms when running alone on `reference_sms` SMs.
    pub wcet_ref: Millis,
    pub reference_sms: f64,
    pub curve: CurveId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub task_id: TaskId,
    /// 1-based position in the chain.
    pub index: usize,
    pub wcet_ref: Millis,
    pub reference_sms: f64,
    pub curve: CurveId,
    pub work: WorkQuantity,
    pub base_priority: BasePriority,
    pub virtual_deadline: Option<Millis>,
}

/// A periodic chain of stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: TaskId,
    pub stages: Vec<Stage>,
    pub period: Millis,
    pub relative_deadline: Millis,
    /// Extra per-stage cost, in ms at the reference allocation.
    pub dispatch_overhead: Millis,
}

impl Task {
    /// Validates the stage list and resolves each stage's work against
    /// `curves`. Priorities start as `Low` and virtual deadlines are unset
    /// until [`Task::offline`] runs.
    pub fn new(
        id: TaskId,
        specs: &[StageSpec],
        period: Millis,
        relative_deadline: Millis,
        curves: &CurveSet,
    ) -> Result<Self> {
        Self::with_overhead(id, specs, period, relative_deadline, 0.0, curves)
    }

    pub fn with_overhead(
        id: TaskId,
        specs: &[StageSpec],
        period: Millis,
        relative_deadline: Millis,
        dispatch_overhead: Millis,
        curves: &CurveSet,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::EmptyTask { task: id.0 });
        }
        let timing = |what, value: f64| Error::NonPositiveTiming {
            task: id.0,
            what,
            value,
        };
        if !(period > 0.0 && period.is_finite()) {
            return Err(timing("period", period));
        }
        if !(relative_deadline > 0.0) {
            return Err(timing("relative deadline", relative_deadline));
        }
        if !(dispatch_overhead >= 0.0 && dispatch_overhead.is_finite()) {
            return Err(timing("dispatch overhead", dispatch_overhead));
        }
        let mut stages = Vec::with_capacity(specs.len());
        for (j, spec) in specs.iter().enumerate() {
            if !(spec.wcet_ref > 0.0 && spec.wcet_ref.is_finite()) {
                return Err(Error::NonPositiveWcet {
                    task: id.0,
                    stage: j + 1,
                    wcet: spec.wcet_ref,
                });
            }
            let curve = curves.get(spec.curve)?;
            let work = WorkQuantity::from_reference(
                curve,
                spec.wcet_ref + dispatch_overhead,
                spec.reference_sms,
            )?;
            stages.push(Stage {
                task_id: id,
                index: j + 1,
                wcet_ref: spec.wcet_ref,
                reference_sms: spec.reference_sms,
                curve: spec.curve,
                work,
                base_priority: BasePriority::Low,
                virtual_deadline: None,
            });
        }
        Ok(Self {
            id,
            stages,
            period,
            relative_deadline,
            dispatch_overhead,
        })
    }

    /// Task WCET: the sum of the stage WCETs plus any dispatch overhead.
    pub fn wcet_ref(&self) -> Millis {
        self.stages
            .iter()
            .map(|s| s.wcet_ref + self.dispatch_overhead)
            .sum()
    }

    /// Runs the offline phase: priorities, then virtual deadlines.
    pub fn offline(self) -> Result<Self> {
        compute_virtual_deadlines(assign_priorities(self))
    }

    pub fn has_virtual_deadlines(&self) -> bool {
        self.stages.iter().all(|s| s.virtual_deadline.is_some())
    }
}

/// The last stage gets `High`, every other stage `Low`.
pub fn assign_priorities(mut task: Task) -> Task {
    let last = task.stages.len() - 1;
    for (j, stage) in task.stages.iter_mut().enumerate() {
        stage.base_priority = if j == last {
            BasePriority::High
        } else {
            BasePriority::Low
        };
    }
    task
}

/// Splits the task deadline across stages in proportion to stage WCET.
pub fn compute_virtual_deadlines(mut task: Task) -> Result<Task> {
    if !(task.relative_deadline > 0.0) {
        return Err(Error::NonPositiveTiming {
            task: task.id.0,
            what: "relative deadline",
            value: task.relative_deadline,
        });
    }
    let mut total = 0.0;
    for s in &task.stages {
        if !(s.wcet_ref > 0.0) {
            return Err(Error::NonPositiveWcet {
                task: task.id.0,
                stage: s.index,
                wcet: s.wcet_ref,
            });
        }
        total += s.wcet_ref;
    }
    let deadline = task.relative_deadline;
    let last = task.stages.len() - 1;
    let mut assigned = 0.0;
    for (j, s) in task.stages.iter_mut().enumerate() {
        let share = if j == last {
            // absorb rounding so the parts add back up to the whole
            deadline - assigned
        } else {
            deadline * (s.wcet_ref / total)
        };
        s.virtual_deadline = Some(if deadline.is_infinite() {
            deadline
        } else {
            share
        });
        assigned += share;
    }
    Ok(task)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageState {
    NotReleased,
    Waiting,
    Running,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageInstance {
    pub stage_index: usize,
    pub absolute_deadline: Millis,
    /// Remaining work units (ms at gain 1).
    pub remaining_work: f64,
    pub priority_level: PriorityLevel,
    pub state: StageState,
    pub assigned_context: Option<ContextId>,
    pub miss_flag: bool,
}

/// One periodic release of a task.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub task_id: TaskId,
    pub instance: u64,
    pub release_time: Millis,
    pub absolute_deadline: Millis,
    pub stages: Vec<StageInstance>,
}

impl Job {
    pub fn last_stage(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn is_done(&self) -> bool {
        self.stages.iter().all(|s| s.state == StageState::Done)
    }
}

/// Creates instance `instance` of `task` released at `release_time`.
///
/// Stage deadlines are cumulative offsets from the release, so the last
/// stage's deadline is the job deadline. Every stage starts `NotReleased`;
/// the engine moves the first one to `Waiting` when the job is activated.
pub fn release_job(task: &Task, instance: u64, release_time: Millis) -> Result<Job> {
    if !task.has_virtual_deadlines() {
        return Err(Error::MissingVirtualDeadlines { task: task.id.0 });
    }
    let job_deadline = release_time + task.relative_deadline;
    let last = task.stages.len() - 1;
    let mut offset = 0.0;
    let stages = task
        .stages
        .iter()
        .enumerate()
        .map(|(j, s)| {
            offset += s.virtual_deadline.unwrap_or_default();
            StageInstance {
                stage_index: j,
                absolute_deadline: if j == last {
                    job_deadline
                } else {
                    release_time + offset
                },
                remaining_work: s.work.amount(),
                priority_level: s.base_priority.into(),
                state: StageState::NotReleased,
                assigned_context: None,
                miss_flag: false,
            }
        })
        .collect();
    Ok(Job {
        task_id: task.id,
        instance,
        release_time,
        absolute_deadline: job_deadline,
        stages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Context {
    pub id: ContextId,
    pub sm_count: u32,
    pub high_slots: u8,
    pub low_slots: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextPool {
    pub contexts: Vec<Context>,
    pub total_sms: u32,
    pub over_subscription: f64,
}

impl ContextPool {
    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    /// Sum of configured context sizes; exceeds `total_sms` when over-subscribed.
    pub fn configured_sms(&self) -> u64 {
        self.contexts.iter().map(|c| c.sm_count as u64).sum()
    }
}

/// `n_contexts` contexts of `floor(total_sms * os / n_contexts)` SMs each.
pub fn build_context_pool(total_sms: u32, n_contexts: u32, os: f64) -> Result<ContextPool> {
    let bad = |msg| Err(Error::InvalidPool(msg));
    if n_contexts == 0 {
        return bad("need at least one context".into());
    }
    if total_sms < n_contexts {
        return bad(format!("{total_sms} SMs cannot host {n_contexts} contexts"));
    }
    if !(os >= 1.0 && os.is_finite()) {
        return bad(format!("over-subscription {os} must be >= 1.0"));
    }
    // non-negative, so truncation is floor
    let per_context = (total_sms as f64 * os / n_contexts as f64) as u32;
    if per_context == 0 {
        return bad("contexts would have 0 SMs".into());
    }
    let contexts = (0..n_contexts)
        .map(|k| Context {
            id: ContextId(k),
            sm_count: per_context,
            high_slots: HIGH_SLOTS,
            low_slots: LOW_SLOTS,
        })
        .collect();
    Ok(ContextPool {
        contexts,
        total_sms,
        over_subscription: os,
    })
}
