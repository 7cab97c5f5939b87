use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("task {task} has no stages")]
    EmptyTask { task: u32 },
    #[error("stage {stage} of task {task} has non-positive WCET {wcet}")]
    NonPositiveWcet { task: u32, stage: usize, wcet: f64 },
    #[error("task {task} has non-positive {what} {value}")]
    NonPositiveTiming {
        task: u32,
        what: &'static str,
        value: f64,
    },
    #[error("task {task} has no virtual deadlines; run the offline phase first")]
    MissingVirtualDeadlines { task: u32 },
    #[error("invalid context pool: {0}")]
    InvalidPool(String),
    #[error("invalid speedup curve: {0}")]
    InvalidCurve(String),
    #[error("SM count must be positive, got {0}")]
    NonPositiveSms(f64),
    #[error("cannot fit Amdahl curve with gain {gain} at {sms} SMs")]
    InvalidAmdahlFit { gain: f64, sms: u32 },
    #[error("invalid curve composition: {0}")]
    InvalidComposition(String),
    #[error("unknown curve id {0}")]
    UnknownCurve(usize),
    #[error("horizon {horizon} ms must exceed warmup {warmup} ms")]
    InvalidWindow { warmup: f64, horizon: f64 },
    #[error("simulation stopped making progress at t = {time} ms")]
    Livelock { time: f64 },
    #[error("scheduler issued an invalid start: {0}")]
    InvalidStart(String),
    #[error("stage is already queued")]
    DoubleEnqueue,
    #[error("invariant violated at t = {time} ms: {what}")]
    InvariantViolation { time: f64, what: String },
    #[error("sweep is not contiguous from 1: {0}")]
    NonContiguousSweep(String),
}
