mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgprs_core::audit::{check_trace, starts_by_context};
use sgprs_core::engine::{JobId, SlotClass, StageKey, Start, TraceKind};
use sgprs_core::naive::Naive;
use sgprs_core::sgprs::{
    choose_context, AssignmentEstimate, ContextQueues, QueueEntry, QueueMetric, Sgprs, SgprsConfig,
};
use sgprs_core::*;

fn entry(deadline: f64, task: u32) -> QueueEntry {
    QueueEntry {
        key: StageKey {
            job: JobId(task as usize),
            stage: 0,
        },
        deadline,
        task,
        instance: 0,
    }
}

fn picked(out: &[(QueueEntry, SlotClass)]) -> Vec<(f64, SlotClass)> {
    out.iter().map(|(e, s)| (e.deadline, *s)).collect()
}

#[test]
fn dispatch_fills_typed_slots() {
    let mut q = ContextQueues::default();
    q.enqueue(entry(40.0, 0), PriorityLevel::High).unwrap();
    q.enqueue(entry(45.0, 1), PriorityLevel::High).unwrap();
    assert_eq!(
        picked(&q.fill_slots(1, 0, false)),
        vec![(40.0, SlotClass::High)]
    );

    let mut q = ContextQueues::default();
    q.enqueue(entry(50.0, 0), PriorityLevel::Medium).unwrap();
    q.enqueue(entry(30.0, 1), PriorityLevel::Low).unwrap();
    q.enqueue(entry(60.0, 2), PriorityLevel::Low).unwrap();
    assert_eq!(
        picked(&q.fill_slots(0, 2, false)),
        vec![(50.0, SlotClass::Low), (30.0, SlotClass::Low)]
    );
    assert_eq!(q.len(), 1);

    assert!(q.fill_slots(0, 0, true).is_empty());
}

#[test]
fn high_slots_serve_lower_levels_only_when_borrowing() {
    let fresh = || {
        let mut q = ContextQueues::default();
        q.enqueue(entry(30.0, 0), PriorityLevel::Low).unwrap();
        q.enqueue(entry(20.0, 1), PriorityLevel::Medium).unwrap();
        q
    };
    assert!(fresh().fill_slots(2, 0, false).is_empty());
    assert_eq!(
        picked(&fresh().fill_slots(2, 0, true)),
        vec![(20.0, SlotClass::High), (30.0, SlotClass::High)]
    );
}

/// One 34-SM context; six 1 ms stages, the second of which is sized for
/// 68 SMs and so overruns its 1 ms virtual deadline.
fn overrunning_second_stage(stages: usize, slow: usize) -> Workload {
    let (curves, id) = resnet();
    let specs: Vec<(f64, f64)> = (0..stages)
        .map(|j| (1.0, if j == slow { 68.0 } else { 34.0 }))
        .collect();
    let t = task(0, &specs, 50.0, stages as f64, &curves, id);
    Workload {
        tasks: vec![t],
        pool: build_context_pool(34, 1, 1.0).unwrap(),
        curves,
    }
}

#[test]
fn stage_miss_promotes_remaining_low_stages() {
    let w = overrunning_second_stage(6, 1);
    let r = run_sgprs(&w, &traced(40.0, 0.0));
    let misses: Vec<usize> = records(&r, TraceKind::DeadlineMiss)
        .map(|t| t.stage.unwrap())
        .collect();
    assert_eq!(misses[0], 2);
    assert!(misses.len() > 1, "later stages miss too: {misses:?}");

    let promoted: Vec<(f64, usize)> = records(&r, TraceKind::Promote)
        .map(|t| (t.time, t.stage.unwrap()))
        .collect();
    assert_eq!(promoted, vec![(2.0, 3), (2.0, 4), (2.0, 5)]);

    let levels: Vec<(usize, PriorityLevel)> = records(&r, TraceKind::Assign)
        .map(|t| (t.stage.unwrap(), t.level.unwrap()))
        .collect();
    assert_eq!(levels[0], (1, PriorityLevel::Low));
    assert_eq!(levels[1], (2, PriorityLevel::Low));
    assert!(levels[2..5]
        .iter()
        .all(|&(_, l)| l == PriorityLevel::Medium));
    assert_eq!(levels[5], (6, PriorityLevel::High));
}

#[test]
fn last_stage_miss_promotes_nothing() {
    let w = overrunning_second_stage(2, 1);
    let r = run_sgprs(&w, &traced(40.0, 0.0));
    assert_eq!(records(&r, TraceKind::DeadlineMiss).count(), 1);
    assert_eq!(records(&r, TraceKind::Promote).count(), 0);
    assert!(r.outcomes[0].missed());
}

#[test]
fn naive_serves_one_job_at_a_time_in_release_order() {
    let (curves, id) = resnet();
    let tasks = (0..2)
        .map(|i| task(i, &[(1.0, 68.0); 3], 50.0, 50.0, &curves, id))
        .collect();
    let w = Workload {
        tasks,
        pool: build_context_pool(68, 1, 1.0).unwrap(),
        curves,
    };
    let r = run_naive(&w, &traced(50.0, 0.0));
    let starts: Vec<(f64, u32, usize)> = records(&r, TraceKind::Start)
        .map(|t| (t.time, t.task.unwrap().0, t.stage.unwrap()))
        .collect();
    assert_eq!(
        starts,
        vec![
            (0.0, 0, 1),
            (1.0, 0, 2),
            (2.0, 0, 3),
            (3.0, 1, 1),
            (4.0, 1, 2),
            (5.0, 1, 3)
        ]
    );
}

#[test]
fn naive_late_job_delays_the_next() {
    let (curves, id) = resnet();
    let tasks = vec![
        task(0, &[(20.0, 68.0), (20.0, 68.0)], 100.0, 33.0, &curves, id),
        task(1, &[(1.0, 68.0)], 100.0, 33.0, &curves, id),
    ];
    let w = Workload {
        tasks,
        pool: build_context_pool(68, 1, 1.0).unwrap(),
        curves,
    };
    let r = run_naive(&w, &traced(100.0, 0.0));
    assert_eq!(r.outcomes[0].completion, Some(40.0));
    assert!(r.outcomes[0].missed());
    let start = records(&r, TraceKind::Start)
        .find(|t| t.task == Some(TaskId(1)))
        .unwrap();
    assert_eq!(start.time, 40.0);
    assert!(r.outcomes[1].missed());
}

#[test]
fn naive_keeps_tasks_on_their_context() {
    let w = resnet_workload(7, 3, 1.0, 3.8);
    let r = run_naive(&w, &traced(1_000.0, 0.0));
    for (ctx, stages) in starts_by_context(&r.trace) {
        assert!(stages.iter().all(|&(t, _, _)| t % 3 == ctx));
    }
    let mut busy = [false; 3];
    for t in &r.trace {
        match t.kind {
            TraceKind::Start => {
                let c = t.context.unwrap().0 as usize;
                assert!(!busy[c], "two stages on context {c} at {}", t.time);
                busy[c] = true;
            }
            TraceKind::Complete => busy[t.context.unwrap().0 as usize] = false,
            _ => {}
        }
    }
}

#[test]
fn sgprs_moves_stages_between_contexts() {
    let w = resnet_workload(10, 3, 1.0, 3.8);
    let r = run_sgprs(&w, &traced(1_000.0, 0.0));
    let mut per_job: std::collections::BTreeMap<(u32, u64), std::collections::BTreeSet<u32>> =
        Default::default();
    for t in records(&r, TraceKind::Assign) {
        per_job
            .entry((t.task.unwrap().0, t.instance.unwrap()))
            .or_default()
            .insert(t.context.unwrap().0);
    }
    assert!(per_job.values().any(|c| c.len() > 1));
}

#[test]
fn random_runs_pass_the_audit() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let w = random_workload(&mut rng);
        let borrowing = rng.random_bool(0.5);
        let o = traced(3_000.0, 0.0);
        let mut p = Sgprs::new(SgprsConfig {
            slot_borrowing: borrowing,
            queue_metric: QueueMetric::Count,
        });
        simulate(&w, &mut p, &o).unwrap();
        simulate(&w, &mut Naive::new(), &o).unwrap();
    }
}

#[test]
fn audit_rejects_a_precedence_violation() {
    let w = resnet_workload(2, 1, 1.0, 3.8);
    let r = run_sgprs(&w, &traced(100.0, 0.0));
    check_trace(&r.trace, &w, true).unwrap();
    let mut bad = r.trace.clone();
    let complete = bad
        .iter()
        .position(|t| t.kind == TraceKind::Complete)
        .unwrap();
    let next = bad
        .iter()
        .position(|t| {
            t.kind == TraceKind::Start && t.stage == Some(2) && t.task == bad[complete].task
        })
        .unwrap();
    let rec = bad.remove(next);
    bad.insert(complete, rec);
    assert!(matches!(
        check_trace(&bad, &w, true),
        Err(Error::InvariantViolation { .. })
    ));
}

/// Lexicographic rank: empty contexts, then feasible ones, then the rest.
fn brute_force(estimates: &[AssignmentEstimate], metric: QueueMetric) -> ContextId {
    let rank = |e: &AssignmentEstimate| -> (u8, f64, f64, u32) {
        let size = match metric {
            QueueMetric::Count => e.queue_length as f64,
            QueueMetric::Work => e.pending_time,
        };
        if e.queue_length == 0 {
            (0, 0.0, 0.0, e.context.0)
        } else if e.meets_deadline {
            (1, size, e.est_finish, e.context.0)
        } else {
            (2, 0.0, e.est_finish, e.context.0)
        }
    };
    let mut best = estimates[0];
    for e in &estimates[1..] {
        let (a, b) = (rank(e), rank(&best));
        if a.partial_cmp(&b) == Some(std::cmp::Ordering::Less) {
            best = *e;
        }
    }
    best.context
}

#[test]
fn context_choice_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10_000 {
        let n = rng.random_range(1..=4u32);
        let estimates: Vec<AssignmentEstimate> = (0..n)
            .map(|k| {
                let len = rng.random_range(0..=10usize);
                let pending = if len == 0 {
                    0.0
                } else {
                    rng.random_range(1..40) as f64 * 0.5
                };
                let est_finish = pending + rng.random_range(1..6) as f64;
                AssignmentEstimate {
                    context: ContextId(k),
                    queue_length: len,
                    pending_time: pending,
                    est_finish,
                    meets_deadline: est_finish <= 15.0,
                }
            })
            .collect();
        for metric in [QueueMetric::Count, QueueMetric::Work] {
            assert_eq!(
                choose_context(&estimates, metric),
                brute_force(&estimates, metric),
                "{estimates:?}"
            );
        }
    }
}

/// Wraps the policy and re-derives every placement from the engine state.
struct Checked {
    inner: Sgprs,
    metric: QueueMetric,
    decisions: usize,
}

impl Checked {
    fn estimates(state: &SchedState<'_>, stage: StageKey) -> Vec<AssignmentEstimate> {
        let exec = |key: StageKey, sms: f64| {
            let job = state.job(key.job);
            let spec = &state.task(job.task_id).stages[key.stage];
            let curve = state.workload().curves.get(spec.curve).unwrap();
            job.stages[key.stage].remaining_work / curve.gain(sms).unwrap()
        };
        state
            .pool()
            .contexts
            .iter()
            .map(|c| {
                let sms = c.sm_count as f64;
                let mut len = 0;
                let mut pending = 0.0;
                for (id, job) in state.jobs() {
                    for (j, s) in job.stages.iter().enumerate() {
                        let active = matches!(s.state, StageState::Waiting | StageState::Running);
                        if active && s.assigned_context == Some(c.id) {
                            len += 1;
                            pending += exec(StageKey { job: id, stage: j }, sms);
                        }
                    }
                }
                let est_finish = state.now() + pending + exec(stage, sms);
                AssignmentEstimate {
                    context: c.id,
                    queue_length: len,
                    pending_time: pending,
                    est_finish,
                    meets_deadline: est_finish <= state.stage(stage).absolute_deadline,
                }
            })
            .collect()
    }
}

impl SchedulerPolicy for Checked {
    fn name(&self) -> &str {
        "checked"
    }

    fn on_stage_ready(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        let estimates = Self::estimates(state, stage);
        let expected = brute_force(&estimates, self.metric);
        self.inner.on_stage_ready(state, stage)?;
        let got = state.stage(stage).assigned_context.unwrap();
        if got != expected {
            // summation order may split a near-tie differently
            let (a, b) = (estimates[got.0 as usize], estimates[expected.0 as usize]);
            assert_eq!(a.queue_length == 0, b.queue_length == 0);
            assert!(
                (a.est_finish - b.est_finish).abs() < 1e-9
                    || (a.pending_time - b.pending_time).abs() < 1e-9
            );
        }
        self.decisions += 1;
        Ok(())
    }

    fn on_stage_complete(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        self.inner.on_stage_complete(state, stage)
    }

    fn on_deadline_miss(&mut self, state: &mut SchedState<'_>, stage: StageKey) -> Result<()> {
        self.inner.on_deadline_miss(state, stage)
    }

    fn dispatch(&mut self, state: &SchedState<'_>, starts: &mut Vec<Start>) {
        self.inner.dispatch(state, starts)
    }

    fn orders_by_priority(&self) -> bool {
        true
    }
}

#[test]
fn placements_in_live_runs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut decisions = 0;
    while decisions < 10_000 {
        let w = random_workload(&mut rng);
        let metric = if rng.random_bool(0.5) {
            QueueMetric::Count
        } else {
            QueueMetric::Work
        };
        let mut p = Checked {
            inner: Sgprs::new(SgprsConfig {
                slot_borrowing: false,
                queue_metric: metric,
            }),
            metric,
            decisions: 0,
        };
        simulate(&w, &mut p, &traced(500.0, 0.0)).unwrap();
        decisions += p.decisions;
    }
}
