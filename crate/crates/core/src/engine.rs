//! Event-driven simulation core.
//!
//! Running stages share their context's SMs equally. When the configured SMs
//! of all busy contexts exceed the physical GPU, every context is slowed by
//! the same factor. Rates are piecewise constant between events, so stage
//! completion times are computed exactly instead of time-stepped.
//!
//! Scheduling decisions are delegated to a [`SchedulerPolicy`]. The engine
//! owns all stage state, validates every start the policy requests, and
//! checks capacity and work conservation as it goes.

use alloc::collections::{BinaryHeap, VecDeque};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::hash::Hasher;

use crate::audit;
use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::metrics::{JobOutcome, RunMetrics};
use crate::model::{
    release_job, BasePriority, ContextId, ContextPool, Job, Millis, PriorityLevel, StageState,
    Task, TaskId,
};
use crate::speedup::CurveSet;

/// Relative tolerance on work conservation for a completed stage.
pub const WORK_TOLERANCE: f64 = 1e-6;
/// Absolute slack on the SM capacity check.
pub const CAPACITY_TOLERANCE: f64 = 1e-9;
/// Engine iterations allowed without simulated time advancing.
const STALL_LIMIT: u64 = 1_000_000;

/// Everything a run needs besides the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub tasks: Vec<Task>,
    pub pool: ContextPool,
    pub curves: CurveSet,
}

impl Workload {
    /// `n_tasks` identical periodic tasks, each a chain of `stages` equal
    /// slices of a frame that takes `frame_wcet` ms alone on
    /// `reference_sms` SMs of `curve`.
    #[allow(clippy::too_many_arguments)]
    pub fn identical_tasks(
        n_tasks: usize,
        stages: usize,
        frame_wcet: Millis,
        reference_sms: f64,
        curve: crate::speedup::CurveId,
        period: Millis,
        relative_deadline: Millis,
        pool: ContextPool,
        curves: CurveSet,
    ) -> Result<Self> {
        let spec = crate::model::StageSpec {
            wcet_ref: frame_wcet / stages as f64,
            reference_sms,
            curve,
        };
        let specs = vec![spec; stages];
        let tasks = (0..n_tasks)
            .map(|i| {
                Task::new(TaskId(i as u32), &specs, period, relative_deadline, &curves)
                    .and_then(Task::offline)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tasks,
            pool,
            curves,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: Millis,
    pub warmup: Millis,
    /// Drop a release when the previous job of the same task is unfinished,
    /// instead of queueing it behind that job.
    pub drop_on_overrun: bool,
    /// Reserved for randomized task-set generators; the engine itself is
    /// fully deterministic.
    pub seed: u64,
    /// Keep the full trace in the result. The trace hash is always computed.
    pub keep_trace: bool,
    /// Replay the trace after the run and check scheduling invariants.
    pub audit: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            horizon: 11_000.0,
            warmup: 1_000.0,
            drop_on_overrun: false,
            seed: 0,
            keep_trace: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JobId(pub usize);

/// A stage of a job; `stage` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StageKey {
    pub job: JobId,
    pub stage: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SlotClass {
    High,
    Low,
}

/// A policy's request to start a waiting stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Start {
    pub stage: StageKey,
    pub context: ContextId,
    pub slot: SlotClass,
}

/// Kinds of queued events, in tie-break order at equal timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    StageCompletion,
    DeadlineCheck,
    JobRelease,
    SimulationEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventPayload {
    Stage(StageKey),
    Release { task: usize, instance: u64 },
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct Event {
    pub time: Millis,
    pub kind: EventKind,
    pub payload: EventPayload,
    pub seq: u64,
}

impl Event {
    fn key(&self) -> (Millis, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        let (t1, k1, s1) = self.key();
        let (t2, k2, s2) = other.key();
        t1.total_cmp(&t2).then(k1.cmp(&k2)).then(s1.cmp(&s2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TraceKind {
    /// A job was released.
    Release,
    /// A release is queued behind an unfinished job of the same task.
    Backlog,
    /// A release was dropped (`drop_on_overrun`).
    Drop,
    /// A stage became `Waiting`.
    Ready,
    /// A stage was bound to a context at a priority level.
    Assign,
    Start,
    Complete,
    DeadlineMiss,
    /// A waiting or future stage moved to the medium level.
    Promote,
    JobComplete,
    End,
}

impl TraceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceKind::Release => "release",
            TraceKind::Backlog => "backlog",
            TraceKind::Drop => "drop",
            TraceKind::Ready => "ready",
            TraceKind::Assign => "assign",
            TraceKind::Start => "start",
            TraceKind::Complete => "complete",
            TraceKind::DeadlineMiss => "miss",
            TraceKind::Promote => "promote",
            TraceKind::JobComplete => "job_complete",
            TraceKind::End => "end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub time: Millis,
    pub kind: TraceKind,
    pub task: Option<TaskId>,
    pub instance: Option<u64>,
    /// 1-based stage index.
    pub stage: Option<usize>,
    pub context: Option<ContextId>,
    pub level: Option<PriorityLevel>,
    pub slot: Option<SlotClass>,
    pub deadline: Option<Millis>,
}

impl TraceRecord {
    fn new(time: Millis, kind: TraceKind) -> Self {
        Self {
            time,
            kind,
            task: None,
            instance: None,
            stage: None,
            context: None,
            level: None,
            slot: None,
            deadline: None,
        }
    }

    fn hash_into(&self, h: &mut Fnv1a) {
        fn opt<T>(h: &mut Fnv1a, v: Option<T>, f: impl FnOnce(&mut Fnv1a, T)) {
            match v {
                Some(v) => {
                    h.write_u8(1);
                    f(h, v);
                }
                None => h.write_u8(0),
            }
        }
        h.write_u64(self.time.to_bits());
        h.write_u8(self.kind as u8);
        opt(h, self.task, |h, t| h.write_u32(t.0));
        opt(h, self.instance, |h, i| h.write_u64(i));
        opt(h, self.stage, |h, s| h.write_u64(s as u64));
        opt(h, self.context, |h, c| h.write_u32(c.0));
        opt(h, self.level, |h, l| h.write_u8(l as u8));
        opt(h, self.slot, |h, s| h.write_u8(s as u8));
        opt(h, self.deadline, |h, d| h.write_u64(d.to_bits()));
    }
}

/// Per-stage effective SMs for each context given how many stages run there.
///
/// A busy context demands its configured size; when total demand exceeds the
/// physical SM count every context is scaled by `total / demand`. Stages in a
/// context split its (scaled) SMs equally. Idle contexts get 0.
pub fn effective_allocation(pool: &ContextPool, running: &[usize]) -> Vec<f64> {
    let demand: f64 = pool
        .contexts
        .iter()
        .zip(running)
        .filter(|(_, &r)| r > 0)
        .map(|(c, _)| c.sm_count as f64)
        .sum();
    let scale = if demand > pool.total_sms as f64 {
        pool.total_sms as f64 / demand
    } else {
        1.0
    };
    pool.contexts
        .iter()
        .zip(running)
        .map(|(c, &r)| {
            if r == 0 {
                0.0
            } else {
                c.sm_count as f64 * scale / r as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct RunningStage {
    key: StageKey,
    slot: SlotClass,
    rate: f64,
    /// Work delivered so far, integrated independently of `remaining_work`.
    delivered: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotUsage {
    pub high: u8,
    pub low: u8,
}

impl SlotUsage {
    pub fn total(&self) -> u8 {
        self.high + self.low
    }
}

/// The view of the simulation that policies read and (in limited ways)
/// modify.
pub struct SchedState<'a> {
    now: Millis,
    workload: &'a Workload,
    jobs: Vec<Job>,
    running: Vec<Vec<RunningStage>>,
    slots: Vec<SlotUsage>,
    trace: Trace,
}

impl<'a> SchedState<'a> {
    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn workload(&self) -> &'a Workload {
        self.workload
    }

    pub fn pool(&self) -> &'a ContextPool {
        &self.workload.pool
    }

    pub fn task(&self, id: TaskId) -> &'a Task {
        &self.workload.tasks[id.0 as usize]
    }

    pub fn job(&self, id: JobId) -> &Job {
        &self.jobs[id.0]
    }

    /// Every job released so far, in release order.
    pub fn jobs(&self) -> impl Iterator<Item = (JobId, &Job)> + '_ {
        self.jobs.iter().enumerate().map(|(i, j)| (JobId(i), j))
    }

    pub fn stage(&self, key: StageKey) -> &crate::model::StageInstance {
        &self.jobs[key.job.0].stages[key.stage]
    }

    pub fn base_priority(&self, key: StageKey) -> BasePriority {
        let job = &self.jobs[key.job.0];
        self.task(job.task_id).stages[key.stage].base_priority
    }

    /// Stages currently running on `ctx`, in start order.
    pub fn running(&self, ctx: ContextId) -> impl Iterator<Item = StageKey> + '_ {
        self.running[ctx.0 as usize].iter().map(|r| r.key)
    }

    pub fn running_count(&self, ctx: ContextId) -> usize {
        self.running[ctx.0 as usize].len()
    }

    pub fn slot_usage(&self, ctx: ContextId) -> SlotUsage {
        self.slots[ctx.0 as usize]
    }

    /// Isolated execution time of the remaining work of `key` on `sms` SMs.
    pub fn remaining_exec_time(&self, key: StageKey, sms: f64) -> Millis {
        let job = &self.jobs[key.job.0];
        let stage = &self.task(job.task_id).stages[key.stage];
        let curve = self
            .workload
            .curves
            .get(stage.curve)
            .expect("curves validated at task construction");
        job.stages[key.stage].remaining_work / curve.gain_at(sms)
    }

    /// Binds a waiting stage to a context. A stage is bound exactly once.
    pub fn assign(&mut self, key: StageKey, ctx: ContextId) -> Result<()> {
        if ctx.0 as usize >= self.workload.pool.len() {
            return Err(Error::InvalidStart(format!("no context {}", ctx.0)));
        }
        let now = self.now;
        let job = &mut self.jobs[key.job.0];
        let (task, instance) = (job.task_id, job.instance);
        let inst = &mut job.stages[key.stage];
        if inst.state != StageState::Waiting || inst.assigned_context.is_some() {
            return Err(Error::InvalidStart(format!(
                "stage {} of job {task:?}/{instance} cannot be assigned in state {:?}",
                key.stage + 1,
                inst.state
            )));
        }
        inst.assigned_context = Some(ctx);
        let mut rec = TraceRecord::new(now, TraceKind::Assign);
        rec.task = Some(task);
        rec.instance = Some(instance);
        rec.stage = Some(key.stage + 1);
        rec.context = Some(ctx);
        rec.level = Some(inst.priority_level);
        rec.deadline = Some(inst.absolute_deadline);
        self.trace.push(rec);
        Ok(())
    }

    /// Raises a `Low` stage of a job that has already missed a stage
    /// deadline to `Medium`. Returns whether the level changed.
    pub fn promote_to_medium(&mut self, key: StageKey) -> Result<bool> {
        let base = self.base_priority(key);
        let now = self.now;
        let job = &mut self.jobs[key.job.0];
        if !job.stages[..key.stage].iter().any(|s| s.miss_flag) {
            return Err(Error::InvariantViolation {
                time: now,
                what: format!(
                    "promotion of stage {} without an earlier miss",
                    key.stage + 1
                ),
            });
        }
        let inst = &mut job.stages[key.stage];
        if base != BasePriority::Low
            || inst.priority_level == PriorityLevel::Medium
            || inst.state == StageState::Done
        {
            return Ok(false);
        }
        inst.priority_level = PriorityLevel::Medium;
        let mut rec = TraceRecord::new(now, TraceKind::Promote);
        rec.task = Some(job.task_id);
        rec.instance = Some(job.instance);
        rec.stage = Some(key.stage + 1);
        rec.context = inst.assigned_context;
        rec.level = Some(PriorityLevel::Medium);
        rec.deadline = Some(inst.absolute_deadline);
        self.trace.push(rec);
        Ok(true)
    }
}

/// Scheduler hooks. Every hook runs at the current simulated instant.
pub trait SchedulerPolicy {
    fn name(&self) -> &str;

    /// `stage` just became `Waiting` and must be bound to a context with
    /// [`SchedState::assign`].
    fn on_stage_ready(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()>;

    fn on_stage_complete(&mut self, _state: &mut SchedState<'_>, _stage: StageKey) -> Result<()> {
        Ok(())
    }

    /// `stage` was not done at its absolute deadline.
    fn on_deadline_miss(&mut self, _state: &mut SchedState<'_>, _stage: StageKey) -> Result<()> {
        Ok(())
    }

    /// Pushes the stages to start now. Called after every event.
    fn dispatch(&mut self, state: &SchedState<'_>, starts: &mut Vec<Start>);

    /// Whether the trace must satisfy per-level EDF ordering when audited.
    fn orders_by_priority(&self) -> bool {
        false
    }
}

struct Trace {
    keep: bool,
    records: Vec<TraceRecord>,
    hasher: Fnv1a,
    len: u64,
}

impl Trace {
    fn push(&mut self, rec: TraceRecord) {
        rec.hash_into(&mut self.hasher);
        self.len += 1;
        if self.keep {
            self.records.push(rec);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub policy: alloc::string::String,
    pub n_tasks: usize,
    pub warmup: Millis,
    pub horizon: Millis,
    /// One entry per release, in release order.
    pub outcomes: Vec<JobOutcome>,
    pub stage_misses: u64,
    /// Stage misses whose deadline lies inside the measurement window.
    pub stage_misses_in_window: u64,
    pub trace: Vec<TraceRecord>,
    pub trace_len: u64,
    pub trace_hash: u64,
    /// Largest total of effective SMs observed at any instant.
    pub peak_sms_in_use: f64,
    /// Largest relative work-conservation error over completed stages.
    pub max_work_error: f64,
    pub events_processed: u64,
}

impl SimResult {
    pub fn metrics(&self) -> RunMetrics {
        RunMetrics::from_outcomes(
            &self.outcomes,
            self.n_tasks,
            self.warmup,
            self.horizon,
            self.stage_misses_in_window,
        )
    }
}

struct Engine<'a, P: SchedulerPolicy> {
    st: SchedState<'a>,
    policy: &'a mut P,
    options: &'a SimOptions,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    /// Job currently active per task.
    active: Vec<Option<JobId>>,
    backlog: Vec<VecDeque<JobId>>,
    outcomes: Vec<JobOutcome>,
    stage_misses: u64,
    stage_misses_in_window: u64,
    peak_sms: f64,
    max_work_error: f64,
    events: u64,
    starts: Vec<Start>,
}

/// Runs `policy` on `workload` from t = 0 to `options.horizon`.
pub fn simulate<P: SchedulerPolicy>(
    workload: &Workload,
    policy: &mut P,
    options: &SimOptions,
) -> Result<SimResult> {
    if !(options.horizon > options.warmup && options.warmup >= 0.0) {
        return Err(Error::InvalidWindow {
            warmup: options.warmup,
            horizon: options.horizon,
        });
    }
    for (i, t) in workload.tasks.iter().enumerate() {
        if t.id.0 as usize != i {
            return Err(Error::InvalidStart(format!(
                "task at position {i} has id {}",
                t.id.0
            )));
        }
        if !t.has_virtual_deadlines() {
            return Err(Error::MissingVirtualDeadlines { task: t.id.0 });
        }
    }
    let n_ctx = workload.pool.len();
    if n_ctx == 0 {
        return Err(Error::InvalidPool("empty pool".into()));
    }
    let n_tasks = workload.tasks.len();
    let mut engine = Engine {
        st: SchedState {
            now: 0.0,
            workload,
            jobs: Vec::new(),
            running: vec![Vec::new(); n_ctx],
            slots: vec![SlotUsage::default(); n_ctx],
            trace: Trace {
                keep: options.keep_trace || options.audit,
                records: Vec::new(),
                hasher: Fnv1a::default(),
                len: 0,
            },
        },
        policy,
        options,
        queue: BinaryHeap::new(),
        seq: 0,
        active: vec![None; n_tasks],
        backlog: vec![VecDeque::new(); n_tasks],
        outcomes: Vec::new(),
        stage_misses: 0,
        stage_misses_in_window: 0,
        peak_sms: 0.0,
        max_work_error: 0.0,
        events: 0,
        starts: Vec::new(),
    };
    engine.run()?;

    let orders = engine.policy.orders_by_priority();
    let name = alloc::string::String::from(engine.policy.name());
    let Engine {
        st,
        outcomes,
        stage_misses,
        stage_misses_in_window,
        peak_sms,
        max_work_error,
        events,
        ..
    } = engine;
    if options.audit {
        audit::check_trace(&st.trace.records, workload, orders)?;
    }
    let trace = if options.keep_trace {
        st.trace.records
    } else {
        Vec::new()
    };
    Ok(SimResult {
        policy: name,
        n_tasks,
        warmup: options.warmup,
        horizon: options.horizon,
        outcomes,
        stage_misses,
        stage_misses_in_window,
        trace,
        trace_len: st.trace.len,
        trace_hash: st.trace.hasher.finish(),
        peak_sms_in_use: peak_sms,
        max_work_error,
        events_processed: events,
    })
}

impl<'a, P: SchedulerPolicy> Engine<'a, P> {
    fn push(&mut self, time: Millis, kind: EventKind, payload: EventPayload) {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            kind,
            payload,
            seq,
        }));
    }

    fn run(&mut self) -> Result<()> {
        let horizon = self.options.horizon;
        for i in 0..self.st.workload.tasks.len() {
            self.push(
                0.0,
                EventKind::JobRelease,
                EventPayload::Release {
                    task: i,
                    instance: 0,
                },
            );
        }
        self.push(horizon, EventKind::SimulationEnd, EventPayload::None);

        let mut stalled = 0u64;
        loop {
            let next = self
                .queue
                .peek()
                .map(|Reverse(e)| *e)
                .expect("end event pending");
            let before = self.st.now;
            match self.next_completion() {
                Some((t, idx)) if t <= next.time => {
                    self.advance(t)?;
                    self.seq += 1;
                    self.complete(idx)?;
                }
                _ => {
                    self.queue.pop();
                    self.advance(next.time)?;
                    match (next.kind, next.payload) {
                        (EventKind::SimulationEnd, _) => {
                            let rec = TraceRecord::new(self.st.now, TraceKind::End);
                            self.st.trace.push(rec);
                            self.events += 1;
                            return Ok(());
                        }
                        (EventKind::JobRelease, EventPayload::Release { task, instance }) => {
                            self.release(task, instance)?
                        }
                        (EventKind::DeadlineCheck, EventPayload::Stage(key)) => {
                            self.deadline_check(key)?
                        }
                        (kind, payload) => unreachable!("malformed event {kind:?} {payload:?}"),
                    }
                }
            }
            self.events += 1;
            self.dispatch()?;

            if self.st.now > before {
                stalled = 0;
            } else {
                stalled += 1;
                if stalled > STALL_LIMIT {
                    return Err(Error::Livelock { time: self.st.now });
                }
            }
        }
    }

    /// Earliest projected completion as (time, (context, position)).
    fn next_completion(&self) -> Option<(Millis, (usize, usize))> {
        let now = self.st.now;
        let mut best: Option<(Millis, (usize, usize))> = None;
        for (c, list) in self.st.running.iter().enumerate() {
            for (i, r) in list.iter().enumerate() {
                let remaining = self.st.jobs[r.key.job.0].stages[r.key.stage].remaining_work;
                let t = now + remaining / r.rate;
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, (c, i)));
                }
            }
        }
        best
    }

    fn advance(&mut self, to: Millis) -> Result<()> {
        let dt = to - self.st.now;
        if dt < 0.0 {
            return Err(Error::InvariantViolation {
                time: self.st.now,
                what: format!("time moved backwards to {to}"),
            });
        }
        if dt > 0.0 {
            for list in &mut self.st.running {
                for r in list.iter_mut() {
                    let w = r.rate * dt;
                    r.delivered += w;
                    let inst = &mut self.st.jobs[r.key.job.0].stages[r.key.stage];
                    inst.remaining_work = (inst.remaining_work - w).max(0.0);
                }
            }
        }
        self.st.now = to;
        Ok(())
    }

    fn record(&mut self, kind: TraceKind, key: StageKey) -> TraceRecord {
        let job = &self.st.jobs[key.job.0];
        let inst = &job.stages[key.stage];
        let mut rec = TraceRecord::new(self.st.now, kind);
        rec.task = Some(job.task_id);
        rec.instance = Some(job.instance);
        rec.stage = Some(key.stage + 1);
        rec.context = inst.assigned_context;
        rec.level = Some(inst.priority_level);
        rec.deadline = Some(inst.absolute_deadline);
        rec
    }

    fn complete(&mut self, (ctx, pos): (usize, usize)) -> Result<()> {
        let r = self.st.running[ctx].remove(pos);
        let key = r.key;
        match r.slot {
            SlotClass::High => self.st.slots[ctx].high -= 1,
            SlotClass::Low => self.st.slots[ctx].low -= 1,
        }
        let job = &self.st.jobs[key.job.0];
        let work = self.st.task(job.task_id).stages[key.stage].work.amount();
        // the final step's work is folded into `delivered` by advance();
        // what was left over (clamped) must be negligible
        let err = ((r.delivered - work) / work).abs();
        if err > self.max_work_error {
            self.max_work_error = err;
        }
        if err > WORK_TOLERANCE {
            return Err(Error::InvariantViolation {
                time: self.st.now,
                what: format!("stage delivered {} of {} work units", r.delivered, work),
            });
        }
        {
            let inst = &mut self.st.jobs[key.job.0].stages[key.stage];
            inst.remaining_work = 0.0;
            inst.state = StageState::Done;
        }
        let rec = self.record(TraceKind::Complete, key);
        self.st.trace.push(rec);
        self.policy.on_stage_complete(&mut self.st, key)?;

        let last = self.st.jobs[key.job.0].last_stage();
        if key.stage < last {
            self.make_ready(StageKey {
                job: key.job,
                stage: key.stage + 1,
            })?;
        } else {
            self.finish_job(key.job)?;
        }
        Ok(())
    }

    fn make_ready(&mut self, key: StageKey) -> Result<()> {
        let inst = &mut self.st.jobs[key.job.0].stages[key.stage];
        if inst.state != StageState::NotReleased {
            return Err(Error::InvariantViolation {
                time: self.st.now,
                what: format!("stage {} released twice", key.stage + 1),
            });
        }
        inst.state = StageState::Waiting;
        let rec = self.record(TraceKind::Ready, key);
        self.st.trace.push(rec);
        self.policy.on_stage_ready(&mut self.st, key)?;
        if self.st.stage(key).assigned_context.is_none() {
            return Err(Error::InvalidStart(format!(
                "policy {} left a ready stage unassigned",
                self.policy.name()
            )));
        }
        Ok(())
    }

    fn finish_job(&mut self, id: JobId) -> Result<()> {
        let job = &self.st.jobs[id.0];
        let task = job.task_id.0 as usize;
        let mut rec = TraceRecord::new(self.st.now, TraceKind::JobComplete);
        rec.task = Some(job.task_id);
        rec.instance = Some(job.instance);
        rec.deadline = Some(job.absolute_deadline);
        self.st.trace.push(rec);
        self.outcomes[id.0].completion = Some(self.st.now);
        self.active[task] = None;
        if let Some(next) = self.backlog[task].pop_front() {
            self.activate(next)?;
        }
        Ok(())
    }

    fn activate(&mut self, id: JobId) -> Result<()> {
        let task = self.st.jobs[id.0].task_id.0 as usize;
        self.active[task] = Some(id);
        self.make_ready(StageKey { job: id, stage: 0 })
    }

    fn release(&mut self, task_idx: usize, instance: u64) -> Result<()> {
        let task = &self.st.workload.tasks[task_idx];
        let now = self.st.now;
        let job = release_job(task, instance, now)?;
        let id = JobId(self.st.jobs.len());

        let next_release = (instance + 1) as f64 * task.period;
        if next_release < self.options.horizon {
            self.push(
                next_release,
                EventKind::JobRelease,
                EventPayload::Release {
                    task: task_idx,
                    instance: instance + 1,
                },
            );
        }

        let mut rec = TraceRecord::new(now, TraceKind::Release);
        rec.task = Some(job.task_id);
        rec.instance = Some(instance);
        rec.deadline = Some(job.absolute_deadline);
        self.st.trace.push(rec);

        self.outcomes.push(JobOutcome {
            task: job.task_id,
            instance,
            release: now,
            deadline: job.absolute_deadline,
            completion: None,
            dropped: false,
        });
        let checks: Vec<(usize, Millis)> = job
            .stages
            .iter()
            .enumerate()
            .map(|(j, s)| (j, s.absolute_deadline))
            .filter(|&(_, d)| d <= self.options.horizon)
            .collect();
        self.st.jobs.push(job);

        if self.active[task_idx].is_some() {
            if self.options.drop_on_overrun {
                let mut rec = TraceRecord::new(now, TraceKind::Drop);
                rec.task = Some(TaskId(task_idx as u32));
                rec.instance = Some(instance);
                self.st.trace.push(rec);
                self.outcomes[id.0].dropped = true;
                return Ok(());
            }
            let mut rec = TraceRecord::new(now, TraceKind::Backlog);
            rec.task = Some(TaskId(task_idx as u32));
            rec.instance = Some(instance);
            self.st.trace.push(rec);
            self.backlog[task_idx].push_back(id);
        } else {
            self.activate(id)?;
        }
        for (j, d) in checks {
            self.push(
                d,
                EventKind::DeadlineCheck,
                EventPayload::Stage(StageKey { job: id, stage: j }),
            );
        }
        Ok(())
    }

    fn deadline_check(&mut self, key: StageKey) -> Result<()> {
        let inst = &mut self.st.jobs[key.job.0].stages[key.stage];
        if inst.state == StageState::Done {
            return Ok(());
        }
        inst.miss_flag = true;
        self.stage_misses += 1;
        if inst.absolute_deadline > self.options.warmup {
            self.stage_misses_in_window += 1;
        }
        let rec = self.record(TraceKind::DeadlineMiss, key);
        self.st.trace.push(rec);
        self.policy.on_deadline_miss(&mut self.st, key)
    }

    fn dispatch(&mut self) -> Result<()> {
        let mut starts = core::mem::take(&mut self.starts);
        starts.clear();
        self.policy.dispatch(&self.st, &mut starts);
        let changed = !starts.is_empty();
        for s in &starts {
            self.start(*s)?;
        }
        self.starts = starts;
        if changed {
            self.recompute_rates()?;
        }
        Ok(())
    }

    fn start(&mut self, s: Start) -> Result<()> {
        let ctx = s.context.0 as usize;
        let bad = |msg: alloc::string::String| Err(Error::InvalidStart(msg));
        if ctx >= self.st.running.len() {
            return bad(format!("no context {ctx}"));
        }
        let Some(job) = self.st.jobs.get(s.stage.job.0) else {
            return bad(format!("unknown job {:?}", s.stage.job));
        };
        let Some(inst) = job.stages.get(s.stage.stage) else {
            return bad(format!("unknown stage {:?}", s.stage));
        };
        if inst.state != StageState::Waiting {
            return bad(format!("stage {:?} is {:?}", s.stage, inst.state));
        }
        if inst.assigned_context != Some(s.context) {
            return bad(format!(
                "stage {:?} is bound to {:?}, not {ctx}",
                s.stage, inst.assigned_context
            ));
        }
        if s.stage.stage > 0 && job.stages[s.stage.stage - 1].state != StageState::Done {
            return bad(format!(
                "stage {:?} started before its predecessor",
                s.stage
            ));
        }
        if inst.priority_level == PriorityLevel::High && s.slot != SlotClass::High {
            return bad(format!("high-priority stage {:?} in a low slot", s.stage));
        }
        let context = self.st.workload.pool.contexts[ctx];
        let usage = &mut self.st.slots[ctx];
        match s.slot {
            SlotClass::High if usage.high < context.high_slots => usage.high += 1,
            SlotClass::Low if usage.low < context.low_slots => usage.low += 1,
            slot => return bad(format!("no free {slot:?} slot in context {ctx}")),
        }
        self.st.jobs[s.stage.job.0].stages[s.stage.stage].state = StageState::Running;
        self.st.running[ctx].push(RunningStage {
            key: s.stage,
            slot: s.slot,
            rate: 0.0,
            delivered: 0.0,
        });
        let mut rec = self.record(TraceKind::Start, s.stage);
        rec.slot = Some(s.slot);
        self.st.trace.push(rec);
        Ok(())
    }

    fn recompute_rates(&mut self) -> Result<()> {
        let counts: Vec<usize> = self.st.running.iter().map(Vec::len).collect();
        let alloc = effective_allocation(&self.st.workload.pool, &counts);
        let in_use: f64 = alloc.iter().zip(&counts).map(|(a, &n)| a * n as f64).sum();
        if in_use > self.peak_sms {
            self.peak_sms = in_use;
        }
        if in_use > self.st.workload.pool.total_sms as f64 + CAPACITY_TOLERANCE {
            return Err(Error::InvariantViolation {
                time: self.st.now,
                what: format!("{in_use} SMs in use"),
            });
        }
        let workload = self.st.workload;
        for (c, list) in self.st.running.iter_mut().enumerate() {
            for r in list.iter_mut() {
                let task = self.st.jobs[r.key.job.0].task_id;
                let curve_id = workload.tasks[task.0 as usize].stages[r.key.stage].curve;
                r.rate = workload.curves.get(curve_id)?.gain_at(alloc[c]);
            }
        }
        Ok(())
    }
}
