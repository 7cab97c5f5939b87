//! Discrete-event model of a real-time GPU scheduler for multi-tenant DNN
//! inference.
//!
//! The GPU is split into a pool of contexts, each holding a fixed (possibly
//! over-subscribed) share of streaming multiprocessors. Periodic tasks are
//! chains of stages whose execution time follows a sublinear speedup curve.
//! Two online policies are provided: [`sgprs::Sgprs`], which assigns every
//! stage to a context independently and queues it by priority level and
//! earliest deadline, and [`naive::Naive`], a static spatial partitioning
//! baseline.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, sweeps and the
//! command line live in the `sgprs-sim` crate.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod audit;
pub mod engine;
pub mod error;
pub mod hash;
pub mod metrics;
pub mod model;
pub mod naive;
pub mod sgprs;
pub mod speedup;

pub use engine::{simulate, SchedState, SchedulerPolicy, SimOptions, SimResult, Workload};
pub use error::{Error, Result};
pub use metrics::RunMetrics;
pub use model::{
    build_context_pool, BasePriority, Context, ContextId, ContextPool, Job, Millis, PriorityLevel,
    Stage, StageInstance, StageSpec, StageState, Task, TaskId,
};
pub use speedup::{CurveId, CurveSet, SpeedupCurve, WorkQuantity};
