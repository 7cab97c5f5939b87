//! Static spatial partitioning baseline.
//!
//! Each task is pinned to one context. A context serves one job at a time,
//! first come first served, running its stages back to back. Priorities and
//! stage deadlines are ignored.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::engine::{JobId, SchedState, SchedulerPolicy, SlotClass, StageKey, Start};
use crate::error::Result;
use crate::model::{ContextId, ContextPool, StageState};

/// Task index to context, fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticAssignment(Vec<ContextId>);

impl StaticAssignment {
    pub fn context_of(&self, task: usize) -> ContextId {
        self.0[task]
    }

    pub fn as_slice(&self) -> &[ContextId] {
        &self.0
    }
}

/// Round-robin: task `i` goes to context `i mod n_p`.
pub fn assign_static(n_tasks: usize, pool: &ContextPool) -> StaticAssignment {
    let n = pool.len().max(1) as u32;
    StaticAssignment((0..n_tasks as u32).map(|i| ContextId(i % n)).collect())
}

#[derive(Debug, Clone, Default)]
struct ContextFifo {
    current: Option<JobId>,
    waiting: VecDeque<JobId>,
}

#[derive(Debug, Clone, Default)]
pub struct Naive {
    assignment: Option<StaticAssignment>,
    contexts: Vec<ContextFifo>,
}

impl Naive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assignment(&self) -> Option<&StaticAssignment> {
        self.assignment.as_ref()
    }

    fn init(&mut self, state: &SchedState<'_>) {
        if self.assignment.is_none() {
            self.assignment = Some(assign_static(state.workload().tasks.len(), state.pool()));
            self.contexts = alloc::vec![ContextFifo::default(); state.pool().len()];
        }
    }

    /// The stage of `job` that should run next, if it is ready.
    fn next_stage(state: &SchedState<'_>, job: JobId) -> Option<StageKey> {
        state
            .job(job)
            .stages
            .iter()
            .position(|s| s.state == StageState::Waiting)
            .map(|stage| StageKey { job, stage })
    }
}

impl SchedulerPolicy for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn on_stage_ready(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        self.init(state);
        let job = state.job(stage.job);
        let ctx = self
            .assignment
            .as_ref()
            .expect("initialized")
            .context_of(job.task_id.0 as usize);
        if stage.stage == 0 {
            // FIFO by release time, ties by task id
            let key = (job.release_time, job.task_id);
            let fifo = &mut self.contexts[ctx.0 as usize];
            let pos = fifo.waiting.partition_point(|&j| {
                let other = state.job(j);
                other
                    .release_time
                    .total_cmp(&key.0)
                    .then(other.task_id.cmp(&key.1))
                    .is_le()
            });
            fifo.waiting.insert(pos, stage.job);
        }
        state.assign(stage, ctx)
    }

    fn on_stage_complete(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        let job = state.job(stage.job);
        if stage.stage == job.last_stage() {
            if let Some(ctx) = job.stages[stage.stage].assigned_context {
                let fifo = &mut self.contexts[ctx.0 as usize];
                if fifo.current == Some(stage.job) {
                    fifo.current = None;
                }
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, state: &SchedState<'_>, starts: &mut Vec<Start>) {
        for (c, fifo) in self.contexts.iter_mut().enumerate() {
            let ctx = ContextId(c as u32);
            if state.running_count(ctx) > 0 {
                continue;
            }
            if fifo.current.is_none() {
                fifo.current = fifo.waiting.pop_front();
            }
            let Some(job) = fifo.current else { continue };
            if let Some(stage) = Self::next_stage(state, job) {
                let slot = match state.stage(stage).priority_level {
                    crate::model::PriorityLevel::High => SlotClass::High,
                    _ => SlotClass::Low,
                };
                starts.push(Start {
                    stage,
                    context: ctx,
                    slot,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_context_pool;

    fn ids(a: &StaticAssignment) -> Vec<u32> {
        a.as_slice().iter().map(|c| c.0).collect()
    }

    #[test]
    fn round_robin() {
        let pool2 = build_context_pool(68, 2, 1.0).unwrap();
        let pool3 = build_context_pool(68, 3, 1.0).unwrap();
        assert_eq!(ids(&assign_static(4, &pool2)), alloc::vec![0, 1, 0, 1]);
        assert_eq!(ids(&assign_static(1, &pool3)), alloc::vec![0]);
        assert_eq!(ids(&assign_static(3, &pool3)), alloc::vec![0, 1, 2]);
        assert!(assign_static(0, &pool3).as_slice().is_empty());
    }
}
