//! Trace replay checker.
//!
//! Rebuilds queue and slot state from a trace alone and verifies the
//! scheduling invariants: precedence, per-context slot caps, promotion
//! soundness and, for priority-ordered policies, EDF within each level and
//! medium-over-low dominance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::engine::{SlotClass, TraceKind, TraceRecord, Workload};
use crate::error::{Error, Result};
use crate::model::PriorityLevel;

type StageId = (u32, u64, usize);

#[derive(Debug, Clone, Copy)]
struct Waiting {
    ctx: u32,
    level: PriorityLevel,
    deadline: f64,
}

#[derive(Debug, Default)]
struct Replay {
    waiting: BTreeMap<StageId, Waiting>,
    running: BTreeMap<StageId, (u32, SlotClass)>,
    done: BTreeMap<StageId, ()>,
    missed: BTreeMap<(u32, u64), usize>,
    // per context: (high, low)
    slots: BTreeMap<u32, (u8, u8)>,
}

fn fail(rec: &TraceRecord, what: String) -> Error {
    Error::InvariantViolation {
        time: rec.time,
        what,
    }
}

/// Checks `trace` against the workload it came from.
pub fn check_trace(
    trace: &[TraceRecord],
    workload: &Workload,
    priority_ordered: bool,
) -> Result<()> {
    let mut r = Replay::default();
    for rec in trace {
        let id = match (rec.task, rec.instance, rec.stage) {
            (Some(t), Some(i), Some(s)) => Some((t.0, i, s)),
            _ => None,
        };
        match rec.kind {
            TraceKind::Assign => {
                let id = id.ok_or_else(|| fail(rec, "assign without stage".into()))?;
                let ctx = rec
                    .context
                    .ok_or_else(|| fail(rec, "assign without context".into()))?;
                r.waiting.insert(
                    id,
                    Waiting {
                        ctx: ctx.0,
                        level: rec.level.unwrap_or(PriorityLevel::Low),
                        deadline: rec.deadline.unwrap_or(f64::INFINITY),
                    },
                );
            }
            TraceKind::DeadlineMiss => {
                let (t, i, s) = id.ok_or_else(|| fail(rec, "miss without stage".into()))?;
                let first = r.missed.entry((t, i)).or_insert(s);
                *first = (*first).min(s);
            }
            TraceKind::Promote => {
                let (t, i, s) = id.ok_or_else(|| fail(rec, "promote without stage".into()))?;
                let earlier_miss = r.missed.get(&(t, i)).is_some_and(|&m| m < s);
                if !earlier_miss {
                    return Err(fail(
                        rec,
                        format!("stage {s} of {t}/{i} promoted without an earlier miss"),
                    ));
                }
                if is_last(workload, t, s) {
                    return Err(fail(rec, format!("high stage {s} of {t}/{i} promoted")));
                }
                if let Some(w) = r.waiting.get_mut(&(t, i, s)) {
                    w.level = PriorityLevel::Medium;
                }
            }
            TraceKind::Start => {
                let id = id.ok_or_else(|| fail(rec, "start without stage".into()))?;
                check_start(&mut r, rec, id, workload, priority_ordered)?;
            }
            TraceKind::Complete => {
                let id = id.ok_or_else(|| fail(rec, "complete without stage".into()))?;
                let (ctx, slot) = r
                    .running
                    .remove(&id)
                    .ok_or_else(|| fail(rec, format!("{id:?} completed without running")))?;
                let s = r.slots.entry(ctx).or_default();
                match slot {
                    SlotClass::High => s.0 -= 1,
                    SlotClass::Low => s.1 -= 1,
                }
                r.done.insert(id, ());
            }
            _ => {}
        }
    }
    Ok(())
}

fn is_last(workload: &Workload, task: u32, stage: usize) -> bool {
    workload
        .tasks
        .get(task as usize)
        .is_some_and(|t| t.stages.len() == stage)
}

fn check_start(
    r: &mut Replay,
    rec: &TraceRecord,
    id: StageId,
    workload: &Workload,
    priority_ordered: bool,
) -> Result<()> {
    let (t, i, s) = id;
    let w = r
        .waiting
        .remove(&id)
        .ok_or_else(|| fail(rec, format!("{id:?} started without being queued")))?;
    if s > 1 && !r.done.contains_key(&(t, i, s - 1)) {
        return Err(fail(
            rec,
            format!("{id:?} started before its predecessor finished"),
        ));
    }
    let slot = rec
        .slot
        .ok_or_else(|| fail(rec, "start without slot".into()))?;
    let context = workload
        .pool
        .contexts
        .get(w.ctx as usize)
        .ok_or_else(|| fail(rec, format!("unknown context {}", w.ctx)))?;
    let used = r.slots.entry(w.ctx).or_default();
    match slot {
        SlotClass::High => used.0 += 1,
        SlotClass::Low => used.1 += 1,
    }
    if used.0 > context.high_slots || used.1 > context.low_slots || used.0 + used.1 > 4 {
        return Err(fail(
            rec,
            format!("context {} slots over capacity: {used:?}", w.ctx),
        ));
    }
    r.running.insert(id, (w.ctx, slot));

    let high = is_last(workload, t, s);
    let missed_before = r.missed.get(&(t, i)).is_some_and(|&m| m < s);
    let expected = if high {
        PriorityLevel::High
    } else if missed_before {
        PriorityLevel::Medium
    } else {
        PriorityLevel::Low
    };
    if priority_ordered && w.level != expected {
        return Err(fail(
            rec,
            format!("{id:?} runs at {:?}, expected {expected:?}", w.level),
        ));
    }
    if high && slot != SlotClass::High {
        return Err(fail(rec, format!("high stage {id:?} in a low slot")));
    }

    if priority_ordered {
        for (other, ow) in r.waiting.iter().filter(|(_, ow)| ow.ctx == w.ctx) {
            if ow.level == w.level && ow.deadline < w.deadline {
                return Err(fail(
                    rec,
                    format!(
                        "EDF violated: {id:?} (d={}) started before {other:?} (d={})",
                        w.deadline, ow.deadline
                    ),
                ));
            }
            if w.level == PriorityLevel::Low && ow.level == PriorityLevel::Medium {
                return Err(fail(
                    rec,
                    format!("low {id:?} started while medium {other:?} waits"),
                ));
            }
        }
    }
    Ok(())
}

/// Stages each context ran, for tests that want more than pass/fail.
pub fn starts_by_context(trace: &[TraceRecord]) -> BTreeMap<u32, Vec<StageId>> {
    let mut out: BTreeMap<u32, Vec<StageId>> = BTreeMap::new();
    for rec in trace.iter().filter(|r| r.kind == TraceKind::Start) {
        if let (Some(c), Some(t), Some(i), Some(s)) =
            (rec.context, rec.task, rec.instance, rec.stage)
        {
            out.entry(c.0).or_default().push((t.0, i, s));
        }
    }
    out
}
