//! The SGPRS online policy.
//!
//! Every released stage picks a context on its own (so consecutive stages of
//! one job may run in different partitions), then waits in one of three
//! per-context queues. High-priority stages use the two high streams; medium
//! and low stages share the two low streams, medium first. Each queue is
//! kept in earliest-deadline-first order.

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::engine::{JobId, SchedState, SchedulerPolicy, SlotClass, StageKey, Start};
use crate::error::{Error, Result};
use crate::model::{ContextId, Millis, PriorityLevel, StageState};

/// How "shortest queue" is measured when several contexts meet the deadline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum QueueMetric {
    /// Waiting plus running stages.
    #[default]
    Count,
    /// Estimated execution time of waiting plus running stages.
    Work,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct SgprsConfig {
    /// Let idle high streams serve medium and low stages.
    pub slot_borrowing: bool,
    pub queue_metric: QueueMetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueEntry {
    pub key: StageKey,
    pub deadline: Millis,
    pub task: u32,
    pub instance: u64,
}

impl QueueEntry {
    fn edf_cmp(&self, other: &Self) -> Ordering {
        self.deadline
            .total_cmp(&other.deadline)
            .then(self.task.cmp(&other.task))
            .then(self.instance.cmp(&other.instance))
            .then(self.key.stage.cmp(&other.key.stage))
    }
}

/// The three EDF queues of one context.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextQueues {
    high: Vec<QueueEntry>,
    medium: Vec<QueueEntry>,
    low: Vec<QueueEntry>,
}

impl ContextQueues {
    fn queue_mut(&mut self, level: PriorityLevel) -> &mut Vec<QueueEntry> {
        match level {
            PriorityLevel::High => &mut self.high,
            PriorityLevel::Medium => &mut self.medium,
            PriorityLevel::Low => &mut self.low,
        }
    }

    pub fn level(&self, level: PriorityLevel) -> &[QueueEntry] {
        match level {
            PriorityLevel::High => &self.high,
            PriorityLevel::Medium => &self.medium,
            PriorityLevel::Low => &self.low,
        }
    }

    pub fn len(&self) -> usize {
        self.high.len() + self.medium.len() + self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &QueueEntry> {
        self.high.iter().chain(&self.medium).chain(&self.low)
    }

    pub fn contains(&self, key: StageKey) -> bool {
        self.iter().any(|e| e.key == key)
    }

    /// Sorted insert; equal deadlines order by task, instance, stage.
    pub fn enqueue(&mut self, entry: QueueEntry, level: PriorityLevel) -> Result<()> {
        if self.contains(entry.key) {
            return Err(Error::DoubleEnqueue);
        }
        let q = self.queue_mut(level);
        let pos = q.partition_point(|e| e.edf_cmp(&entry) != Ordering::Greater);
        q.insert(pos, entry);
        Ok(())
    }

    pub fn remove(&mut self, key: StageKey) -> Option<(QueueEntry, PriorityLevel)> {
        for level in [
            PriorityLevel::High,
            PriorityLevel::Medium,
            PriorityLevel::Low,
        ] {
            let q = self.queue_mut(level);
            if let Some(pos) = q.iter().position(|e| e.key == key) {
                return Some((q.remove(pos), level));
            }
        }
        None
    }

    pub fn pop(&mut self, level: PriorityLevel) -> Option<QueueEntry> {
        let q = self.queue_mut(level);
        if q.is_empty() {
            None
        } else {
            Some(q.remove(0))
        }
    }

    /// Pops the stages that go into `free_high` high and `free_low` low
    /// slots: High into high slots, then Medium before Low into low slots.
    /// With `borrowing`, idle high slots also take Medium and Low stages.
    pub fn fill_slots(
        &mut self,
        mut free_high: u8,
        mut free_low: u8,
        borrowing: bool,
    ) -> Vec<(QueueEntry, SlotClass)> {
        let mut out = Vec::new();
        while free_high > 0 {
            let Some(e) = self.pop(PriorityLevel::High) else {
                break;
            };
            out.push((e, SlotClass::High));
            free_high -= 1;
        }
        for level in [PriorityLevel::Medium, PriorityLevel::Low] {
            while free_low > 0 {
                let Some(e) = self.pop(level) else { break };
                out.push((e, SlotClass::Low));
                free_low -= 1;
            }
        }
        if borrowing {
            for level in [PriorityLevel::Medium, PriorityLevel::Low] {
                while free_high > 0 {
                    let Some(e) = self.pop(level) else { break };
                    out.push((e, SlotClass::High));
                    free_high -= 1;
                }
            }
        }
        out
    }
}

/// Decision inputs for one candidate context.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentEstimate {
    pub context: ContextId,
    /// Waiting plus running stages.
    pub queue_length: usize,
    /// Sequential execution time of those stages at the context's size.
    pub pending_time: Millis,
    pub est_finish: Millis,
    pub meets_deadline: bool,
}

/// Picks a context: an empty one if any; else, among those meeting the
/// deadline, the shortest queue; else the earliest estimated finish. Ties go
/// to the earlier finish, then the lower context id.
pub fn choose_context(estimates: &[AssignmentEstimate], metric: QueueMetric) -> ContextId {
    if let Some(e) = estimates
        .iter()
        .filter(|e| e.queue_length == 0)
        .min_by_key(|e| e.context)
    {
        return e.context;
    }
    let by_finish = |a: &&AssignmentEstimate, b: &&AssignmentEstimate| {
        a.est_finish
            .total_cmp(&b.est_finish)
            .then(a.context.cmp(&b.context))
    };
    let feasible = estimates.iter().filter(|e| e.meets_deadline);
    let shortest = match metric {
        QueueMetric::Count => feasible.min_by(|a, b| {
            a.queue_length
                .cmp(&b.queue_length)
                .then_with(|| by_finish(a, b))
        }),
        QueueMetric::Work => feasible.min_by(|a, b| {
            a.pending_time
                .total_cmp(&b.pending_time)
                .then_with(|| by_finish(a, b))
        }),
    };
    if let Some(e) = shortest {
        return e.context;
    }
    estimates
        .iter()
        .min_by(by_finish)
        .expect("context pool is never empty")
        .context
}

#[derive(Debug, Clone, Default)]
pub struct Sgprs {
    config: SgprsConfig,
    queues: Vec<ContextQueues>,
}

impl Sgprs {
    pub fn new(config: SgprsConfig) -> Self {
        Self {
            config,
            queues: Vec::new(),
        }
    }

    pub fn config(&self) -> SgprsConfig {
        self.config
    }

    pub fn queues(&self, ctx: ContextId) -> Option<&ContextQueues> {
        self.queues.get(ctx.0 as usize)
    }

    fn ensure_queues(&mut self, n: usize) {
        if self.queues.len() < n {
            self.queues.resize_with(n, ContextQueues::default);
        }
    }

    /// Finish-time estimate for running `stage` on `ctx`: everything already
    /// on the context runs back to back at the context's full size, then the
    /// new stage does.
    pub fn estimate(
        &self,
        state: &SchedState<'_>,
        ctx: ContextId,
        stage: StageKey,
    ) -> AssignmentEstimate {
        let sms = state.pool().contexts[ctx.0 as usize].sm_count as f64;
        let queued = self.queues.get(ctx.0 as usize);
        let waiting = queued.map_or(0, ContextQueues::len);
        let pending: Millis = state
            .running(ctx)
            .chain(queued.into_iter().flat_map(|q| q.iter().map(|e| e.key)))
            .map(|k| state.remaining_exec_time(k, sms))
            .sum();
        let est_finish = state.now() + pending + state.remaining_exec_time(stage, sms);
        AssignmentEstimate {
            context: ctx,
            queue_length: waiting + state.running_count(ctx),
            pending_time: pending,
            est_finish,
            meets_deadline: est_finish <= state.stage(stage).absolute_deadline,
        }
    }

    /// Moves every unfinished low-priority successor of `missed_stage` to
    /// the medium level, re-queueing the ones already waiting.
    pub fn promote(
        &mut self,
        state: &mut SchedState<'_>,
        job: JobId,
        missed_stage: usize,
    ) -> Result<()> {
        let n = state.job(job).stages.len();
        for stage in missed_stage + 1..n {
            let key = StageKey { job, stage };
            if !state.promote_to_medium(key)? {
                continue;
            }
            let inst = state.stage(key);
            if inst.state != StageState::Waiting {
                continue;
            }
            if let Some(ctx) = inst.assigned_context {
                let q = &mut self.queues[ctx.0 as usize];
                if let Some((entry, _)) = q.remove(key) {
                    q.enqueue(entry, PriorityLevel::Medium)?;
                }
            }
        }
        Ok(())
    }

    fn entry(state: &SchedState<'_>, key: StageKey) -> QueueEntry {
        let job = state.job(key.job);
        QueueEntry {
            key,
            deadline: job.stages[key.stage].absolute_deadline,
            task: job.task_id.0,
            instance: job.instance,
        }
    }
}

impl SchedulerPolicy for Sgprs {
    fn name(&self) -> &str {
        "sgprs"
    }

    fn on_stage_ready(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        let n = state.pool().len();
        self.ensure_queues(n);
        let estimates: Vec<AssignmentEstimate> = (0..n as u32)
            .map(|k| self.estimate(state, ContextId(k), stage))
            .collect();
        let ctx = choose_context(&estimates, self.config.queue_metric);
        state.assign(stage, ctx)?;
        let level = state.stage(stage).priority_level;
        self.queues[ctx.0 as usize].enqueue(Self::entry(state, stage), level)
    }

    fn on_deadline_miss(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        self.ensure_queues(state.pool().len());
        self.promote(state, stage.job, stage.stage)
    }

    fn dispatch(&mut self, state: &SchedState<'_>, starts: &mut Vec<Start>) {
        for (c, queues) in self.queues.iter_mut().enumerate() {
            let context = state.pool().contexts[c];
            let usage = state.slot_usage(context.id);
            let free_high = context.high_slots.saturating_sub(usage.high);
            let free_low = context.low_slots.saturating_sub(usage.low);
            for (e, slot) in queues.fill_slots(free_high, free_low, self.config.slot_borrowing) {
                starts.push(Start {
                    stage: e.key,
                    context: context.id,
                    slot,
                });
            }
        }
    }

    fn orders_by_priority(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn entry(deadline: f64, task: u32, instance: u64, stage: usize) -> QueueEntry {
        QueueEntry {
            key: StageKey {
                job: JobId(task as usize * 1000 + instance as usize),
                stage,
            },
            deadline,
            task,
            instance,
        }
    }

    fn deadlines(q: &ContextQueues, level: PriorityLevel) -> Vec<f64> {
        q.level(level).iter().map(|e| e.deadline).collect()
    }

    #[test]
    fn enqueue_keeps_edf_order() {
        let mut q = ContextQueues::default();
        q.enqueue(entry(10.0, 0, 0, 0), PriorityLevel::Low).unwrap();
        q.enqueue(entry(20.0, 1, 0, 0), PriorityLevel::Low).unwrap();
        q.enqueue(entry(15.0, 2, 0, 0), PriorityLevel::Low).unwrap();
        assert_eq!(deadlines(&q, PriorityLevel::Low), vec![10.0, 15.0, 20.0]);

        q.enqueue(entry(99.0, 3, 0, 2), PriorityLevel::Medium)
            .unwrap();
        assert_eq!(deadlines(&q, PriorityLevel::Medium), vec![99.0]);
    }

    #[test]
    fn equal_deadlines_break_by_task_instance_stage() {
        let mut q = ContextQueues::default();
        q.enqueue(entry(5.0, 2, 0, 0), PriorityLevel::Low).unwrap();
        q.enqueue(entry(5.0, 1, 3, 1), PriorityLevel::Low).unwrap();
        q.enqueue(entry(5.0, 1, 3, 0), PriorityLevel::Low).unwrap();
        q.enqueue(entry(5.0, 1, 1, 4), PriorityLevel::Low).unwrap();
        let order: Vec<_> = q
            .level(PriorityLevel::Low)
            .iter()
            .map(|e| (e.task, e.instance, e.key.stage))
            .collect();
        assert_eq!(order, vec![(1, 1, 4), (1, 3, 0), (1, 3, 1), (2, 0, 0)]);
    }

    #[test]
    fn double_enqueue_rejected() {
        let mut q = ContextQueues::default();
        q.enqueue(entry(5.0, 2, 0, 0), PriorityLevel::Low).unwrap();
        assert_eq!(
            q.enqueue(entry(5.0, 2, 0, 0), PriorityLevel::High),
            Err(Error::DoubleEnqueue)
        );
        let (e, level) = q.remove(entry(5.0, 2, 0, 0).key).unwrap();
        assert_eq!(level, PriorityLevel::Low);
        q.enqueue(e, PriorityLevel::Medium).unwrap();
        assert_eq!(q.len(), 1);
    }

    fn est(ctx: u32, len: usize, finish: f64, meets: bool) -> AssignmentEstimate {
        AssignmentEstimate {
            context: ContextId(ctx),
            queue_length: len,
            pending_time: finish,
            est_finish: finish,
            meets_deadline: meets,
        }
    }

    #[test]
    fn choose_empty_first() {
        let all_empty = [est(0, 0, 1.0, true), est(1, 0, 1.0, true)];
        assert_eq!(choose_context(&all_empty, QueueMetric::Count), ContextId(0));
        let one_empty = [est(0, 3, 12.0, true), est(1, 0, 20.0, false)];
        assert_eq!(choose_context(&one_empty, QueueMetric::Count), ContextId(1));
    }

    #[test]
    fn choose_shortest_feasible_queue() {
        let e = [est(0, 3, 12.0, true), est(1, 1, 14.0, true)];
        assert_eq!(choose_context(&e, QueueMetric::Count), ContextId(1));
        // the work metric prefers less pending time instead
        assert_eq!(choose_context(&e, QueueMetric::Work), ContextId(0));
        // infeasible contexts are skipped even if shorter
        let e = [est(0, 3, 12.0, true), est(1, 1, 14.0, false)];
        assert_eq!(choose_context(&e, QueueMetric::Count), ContextId(0));
        // equal length: earlier finish
        let e = [est(0, 2, 12.0, true), est(1, 2, 11.0, true)];
        assert_eq!(choose_context(&e, QueueMetric::Count), ContextId(1));
    }

    #[test]
    fn choose_earliest_finish_when_none_feasible() {
        let e = [est(0, 1, 12.0, false), est(1, 5, 10.0, false)];
        assert_eq!(choose_context(&e, QueueMetric::Count), ContextId(1));
        let e = [est(0, 1, 10.0, false), est(1, 5, 10.0, false)];
        assert_eq!(choose_context(&e, QueueMetric::Count), ContextId(0));
    }
}
