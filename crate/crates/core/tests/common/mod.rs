#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgprs_core::engine::TraceRecord;
use sgprs_core::naive::Naive;
use sgprs_core::sgprs::{Sgprs, SgprsConfig};
use sgprs_core::*;

pub const PERIOD_30FPS: f64 = 1000.0 / 30.0;

pub fn resnet() -> (CurveSet, CurveId) {
    let curves = CurveSet::resnet18_defaults();
    let id = curves.id_of("resnet18").unwrap();
    (curves, id)
}

/// `n` ResNet18 tasks of six equal stages at 30 fps.
pub fn resnet_workload(n: usize, contexts: u32, os: f64, frame_wcet: f64) -> Workload {
    let (curves, id) = resnet();
    let pool = build_context_pool(68, contexts, os).unwrap();
    Workload::identical_tasks(
        n,
        6,
        frame_wcet,
        68.0,
        id,
        PERIOD_30FPS,
        PERIOD_30FPS,
        pool,
        curves,
    )
    .unwrap()
}

/// A task whose stages are `(wcet_ms, reference_sms)` pairs on `curve`.
pub fn task(
    id: u32,
    stages: &[(f64, f64)],
    period: f64,
    deadline: f64,
    curves: &CurveSet,
    curve: CurveId,
) -> Task {
    let specs: Vec<StageSpec> = stages
        .iter()
        .map(|&(wcet_ref, reference_sms)| StageSpec {
            wcet_ref,
            reference_sms,
            curve,
        })
        .collect();
    Task::new(TaskId(id), &specs, period, deadline, curves)
        .and_then(Task::offline)
        .unwrap()
}

pub fn traced(horizon: f64, warmup: f64) -> SimOptions {
    SimOptions {
        horizon,
        warmup,
        keep_trace: true,
        audit: true,
        ..SimOptions::default()
    }
}

pub fn run_sgprs(w: &Workload, o: &SimOptions) -> SimResult {
    simulate(w, &mut Sgprs::new(SgprsConfig::default()), o).unwrap()
}

pub fn run_naive(w: &Workload, o: &SimOptions) -> SimResult {
    simulate(w, &mut Naive::new(), o).unwrap()
}

/// A small random workload: up to 10 tasks, up to 3 contexts, mixed curves,
/// stage counts and rates, loaded anywhere from idle to heavily overloaded.
pub fn random_workload(rng: &mut ChaCha8Rng) -> Workload {
    let curves = CurveSet::resnet18_defaults();
    let ids: Vec<CurveId> = curves.iter().map(|(id, _)| id).collect();
    let n_ctx = rng.random_range(1..=3u32);
    let os = [1.0, 1.5, 2.0][rng.random_range(0..3)];
    let pool = build_context_pool(68, n_ctx, os).unwrap();
    let n_tasks = rng.random_range(0..=10u32);
    let tasks = (0..n_tasks)
        .map(|i| {
            let n_stages = rng.random_range(1..=6);
            let curve = ids[rng.random_range(0..ids.len())];
            let stages: Vec<(f64, f64)> = (0..n_stages)
                .map(|_| (rng.random_range(0.2..4.0), 68.0))
                .collect();
            let period = rng.random_range(8.0..50.0);
            let deadline = period * rng.random_range(0.5..1.5);
            task(i, &stages, period, deadline, &curves, curve)
        })
        .collect();
    Workload {
        tasks,
        pool,
        curves,
    }
}

pub fn records(r: &SimResult, kind: engine::TraceKind) -> impl Iterator<Item = &TraceRecord> {
    r.trace.iter().filter(move |t| t.kind == kind)
}
