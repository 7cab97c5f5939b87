//! Scenario config files.
//!
//! A config describes one task template, one GPU, and the sweep axes
//! (scenarios by context count, scheduler variants, task counts). Parsing
//! expands it into a flat list of [`Scenario`]s, one per simulation run.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgprs_core::engine::{SimOptions, Workload};
use sgprs_core::model::{build_context_pool, StageSpec, Task, TaskId};
use sgprs_core::sgprs::QueueMetric;
use sgprs_core::speedup::{amdahl_fit, compose_network_curve, CurveSet, SpeedupCurve};
use toml::Spanned;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn at(src: &str, span: Range<usize>, message: impl Into<String>) -> Self {
        Self {
            line: Some(line_of(src, span.start)),
            message: message.into(),
        }
    }

    fn plain(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())]
        .bytes()
        .filter(|&b| b == b'\n')
        .count()
        + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchedulerKind {
    Naive,
    Sgprs,
}

/// One simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub scenario_id: String,
    pub total_sms: u32,
    pub n_contexts: u32,
    pub over_subscription: f64,
    pub scheduler: SchedulerKind,
    pub n_tasks: usize,
    pub task: TaskTemplate,
    /// Curves defined in the file; the built-in ResNet18 set is always
    /// available underneath.
    pub curves: BTreeMap<String, CurveDef>,
    pub horizon_ms: f64,
    pub warmup_ms: f64,
    pub seed: u64,
    pub slot_borrowing: bool,
    pub queue_metric: QueueMetric,
    pub drop_on_overrun: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskTemplate {
    pub frame_wcet_ms: f64,
    pub reference_sms: f64,
    pub fps: f64,
    pub deadline_ms: Option<f64>,
    pub dispatch_overhead_ms: f64,
    /// One (curve, relative WCET weight) per stage.
    pub stages: Vec<(String, f64)>,
}

impl TaskTemplate {
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    pub fn deadline(&self) -> f64 {
        self.deadline_ms.unwrap_or_else(|| self.period_ms())
    }
}

impl Scenario {
    /// `naive` or `sgprs_<os>`, e.g. `sgprs_1.5`.
    pub fn variant(&self) -> String {
        variant_label(self.scheduler, self.over_subscription)
    }

    pub fn options(&self) -> SimOptions {
        SimOptions {
            horizon: self.horizon_ms,
            warmup: self.warmup_ms,
            drop_on_overrun: self.drop_on_overrun,
            seed: self.seed,
            keep_trace: false,
            audit: false,
        }
    }

    pub fn curve_set(&self) -> Result<CurveSet, ConfigError> {
        resolve_curves(&self.curves)
    }

    pub fn workload(&self) -> Result<Workload, ConfigError> {
        let curves = self.curve_set()?;
        let pool = build_context_pool(self.total_sms, self.n_contexts, self.over_subscription)
            .map_err(|e| ConfigError::plain(e.to_string()))?;
        let total: f64 = self.task.stages.iter().map(|(_, w)| w).sum();
        let specs = self
            .task
            .stages
            .iter()
            .map(|(curve, weight)| {
                let id = curves
                    .id_of(curve)
                    .ok_or_else(|| ConfigError::plain(format!("unknown curve `{curve}`")))?;
                Ok(StageSpec {
                    wcet_ref: self.task.frame_wcet_ms * weight / total,
                    reference_sms: self.task.reference_sms,
                    curve: id,
                })
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let tasks = (0..self.n_tasks)
            .map(|i| {
                Task::with_overhead(
                    TaskId(i as u32),
                    &specs,
                    self.task.period_ms(),
                    self.task.deadline(),
                    self.task.dispatch_overhead_ms,
                    &curves,
                )
                .and_then(Task::offline)
                .map_err(|e| ConfigError::plain(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Workload {
            tasks,
            pool,
            curves,
        })
    }
}

pub fn variant_label(kind: SchedulerKind, os: f64) -> String {
    match kind {
        SchedulerKind::Naive if os == 1.0 => "naive".to_string(),
        SchedulerKind::Naive => format!("naive_{os:?}"),
        SchedulerKind::Sgprs => format!("sgprs_{os:?}"),
    }
}

fn parse_variant(s: &str) -> Option<(SchedulerKind, f64)> {
    let (kind, rest) = if let Some(rest) = s.strip_prefix("sgprs") {
        (SchedulerKind::Sgprs, rest)
    } else {
        let rest = s.strip_prefix("naive")?;
        (SchedulerKind::Naive, rest)
    };
    if rest.is_empty() {
        return Some((kind, 1.0));
    }
    rest.strip_prefix('_')?.parse().ok().map(|os| (kind, os))
}

/// A speedup curve as written in a config: exactly one of the three forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amdahl: Option<AmdahlDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<Vec<ComposePart>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmdahlDef {
    pub gain: f64,
    pub sms: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposePart {
    pub curve: String,
    pub share: f64,
}

/// Built-in curves overlaid with `defs`, resolving compositions in
/// dependency order.
pub fn resolve_curves(defs: &BTreeMap<String, CurveDef>) -> Result<CurveSet, ConfigError> {
    fn build(
        name: &str,
        defs: &BTreeMap<String, CurveDef>,
        set: &mut CurveSet,
        resolved: &mut Vec<String>,
        stack: &mut Vec<String>,
    ) -> Result<(), ConfigError> {
        if resolved.iter().any(|r| r == name) {
            return Ok(());
        }
        let Some(def) = defs.get(name) else {
            return if set.id_of(name).is_some() {
                Ok(())
            } else {
                Err(ConfigError::plain(format!("unknown curve `{name}`")))
            };
        };
        if stack.iter().any(|s| s == name) {
            return Err(ConfigError::plain(format!(
                "curve `{name}` is defined in terms of itself"
            )));
        }
        stack.push(name.to_string());
        let err = |e: sgprs_core::Error| ConfigError::plain(format!("curve `{name}`: {e}"));
        let curve = match (&def.amdahl, &def.anchors, &def.compose) {
            (Some(a), None, None) => amdahl_fit(name, a.gain, a.sms).map_err(err)?,
            (None, Some(anchors), None) => {
                SpeedupCurve::new(name, anchors.iter().map(|&[s, g]| (s, g)).collect())
                    .map_err(err)?
            }
            (None, None, Some(parts)) => {
                for p in parts {
                    build(&p.curve, defs, set, resolved, stack)?;
                }
                let curves: Vec<(&SpeedupCurve, f64)> = parts
                    .iter()
                    .map(|p| {
                        (
                            set.get(set.id_of(&p.curve).expect("built above"))
                                .expect("valid id"),
                            p.share,
                        )
                    })
                    .collect();
                compose_network_curve(name, &curves).map_err(err)?
            }
            _ => {
                return Err(ConfigError::plain(format!(
                    "curve `{name}` needs exactly one of `amdahl`, `anchors`, `compose`"
                )))
            }
        };
        stack.pop();
        set.insert(curve);
        resolved.push(name.to_string());
        Ok(())
    }

    let mut set = CurveSet::resnet18_defaults();
    let mut resolved = Vec::new();
    for name in defs.keys() {
        build(name, defs, &mut set, &mut resolved, &mut Vec::new())?;
    }
    Ok(set)
}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    gpu: RawGpu,
    task: RawTask,
    #[serde(default)]
    sim: RawSim,
    sweep: RawSweep,
    #[serde(rename = "scenario")]
    scenarios: Vec<RawScenario>,
    #[serde(default)]
    curves: BTreeMap<String, CurveDef>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGpu {
    total_sms: Spanned<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    frame_wcet_ms: Spanned<f64>,
    reference_sms: Option<Spanned<f64>>,
    fps: Spanned<f64>,
    deadline_ms: Option<Spanned<f64>>,
    #[serde(default)]
    dispatch_overhead_ms: Option<Spanned<f64>>,
    /// Either a stage count with `curve`, or per-stage lists.
    stages: Option<Spanned<usize>>,
    curve: Option<Spanned<String>>,
    stage_curves: Option<Spanned<Vec<String>>>,
    stage_weights: Option<Spanned<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    #[serde(default = "default_horizon")]
    horizon_ms: Spanned<f64>,
    #[serde(default = "default_warmup")]
    warmup_ms: Spanned<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    slot_borrowing: bool,
    #[serde(default)]
    queue_metric: Option<Spanned<String>>,
    #[serde(default)]
    drop_on_overrun: bool,
}

fn default_horizon() -> Spanned<f64> {
    Spanned::new(0..0, 11_000.0)
}

fn default_warmup() -> Spanned<f64> {
    Spanned::new(0..0, 1_000.0)
}

impl Default for RawSim {
    fn default() -> Self {
        Self {
            horizon_ms: default_horizon(),
            warmup_ms: default_warmup(),
            seed: 0,
            slot_borrowing: false,
            queue_metric: None,
            drop_on_overrun: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    n_tasks: Spanned<TaskCounts>,
    variants: Vec<Spanned<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    id: Spanned<String>,
    contexts: Spanned<u32>,
}

/// `n_tasks = 5`, `n_tasks = [1, 2, 4]` or `n_tasks = "1..30"` (inclusive).
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum TaskCounts {
    One(usize),
    List(Vec<usize>),
    Range(String),
}

impl TaskCounts {
    fn expand(&self) -> Result<Vec<usize>, String> {
        match self {
            TaskCounts::One(n) => Ok(vec![*n]),
            TaskCounts::List(v) => Ok(v.clone()),
            TaskCounts::Range(s) => {
                let (a, b) = s
                    .split_once("..")
                    .ok_or_else(|| format!("`{s}` is not a range like \"1..30\""))?;
                let parse = |x: &str| {
                    x.trim()
                        .trim_start_matches('=')
                        .parse::<usize>()
                        .map_err(|_| format!("`{s}` is not a range like \"1..30\""))
                };
                let (a, b) = (parse(a)?, parse(b)?);
                if a > b {
                    return Err(format!("empty range `{s}`"));
                }
                Ok((a..=b).collect())
            }
        }
    }
}

pub fn parse_config_file(path: &Path) -> Result<Vec<Scenario>, ConfigError> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::plain(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&src)
}

/// Parses and validates a config, expanding the sweep into runs ordered by
/// scenario, then variant, then task count (all in file order).
pub fn parse_config(src: &str) -> Result<Vec<Scenario>, ConfigError> {
    let raw: RawConfig = toml::from_str(src).map_err(|e| ConfigError {
        line: e.span().map(|s| line_of(src, s.start)),
        message: e.message().trim().to_string(),
    })?;

    let total_sms = *raw.gpu.total_sms.get_ref();
    if total_sms == 0 {
        return Err(ConfigError::at(
            src,
            raw.gpu.total_sms.span(),
            "total_sms must be positive",
        ));
    }

    let positive = |v: &Spanned<f64>, what: &str| -> Result<f64, ConfigError> {
        let x = *v.get_ref();
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(ConfigError::at(
                src,
                v.span(),
                format!("{what} must be positive, got {x}"),
            ))
        }
    };

    let t = &raw.task;
    let frame_wcet_ms = positive(&t.frame_wcet_ms, "frame_wcet_ms")?;
    let fps = positive(&t.fps, "fps")?;
    let reference_sms = match &t.reference_sms {
        Some(v) => positive(v, "reference_sms")?,
        None => total_sms as f64,
    };
    let deadline_ms = match &t.deadline_ms {
        Some(v) if *v.get_ref() == f64::INFINITY => Some(f64::INFINITY),
        Some(v) => Some(positive(v, "deadline_ms")?),
        None => None,
    };
    let dispatch_overhead_ms = match &t.dispatch_overhead_ms {
        Some(v) if *v.get_ref() >= 0.0 && v.get_ref().is_finite() => *v.get_ref(),
        Some(v) => {
            return Err(ConfigError::at(
                src,
                v.span(),
                "dispatch_overhead_ms must be >= 0",
            ))
        }
        None => 0.0,
    };
    let stages = stage_layout(src, t)?;

    let curves = raw.curves.clone();
    let curve_set = resolve_curves(&curves).map_err(|e| {
        let line = src.find("[curves").map(|o| line_of(src, o));
        ConfigError { line, ..e }
    })?;
    for (i, (name, _)) in stages.iter().enumerate() {
        if curve_set.id_of(name).is_none() {
            let span = t
                .stage_curves
                .as_ref()
                .map(Spanned::span)
                .or_else(|| t.curve.as_ref().map(Spanned::span))
                .unwrap_or(0..0);
            return Err(ConfigError::at(
                src,
                span,
                format!("stage {} uses unknown curve `{name}`", i + 1),
            ));
        }
    }

    let s = &raw.sim;
    let horizon_ms = positive(&s.horizon_ms, "horizon_ms")?;
    let warmup_ms = *s.warmup_ms.get_ref();
    if !(warmup_ms >= 0.0 && warmup_ms < horizon_ms) {
        return Err(ConfigError::at(
            src,
            s.warmup_ms.span(),
            format!("warmup_ms {warmup_ms} must be in [0, horizon_ms)"),
        ));
    }
    let queue_metric = match &s.queue_metric {
        None => QueueMetric::Count,
        Some(v) => match v.get_ref().as_str() {
            "count" => QueueMetric::Count,
            "work" => QueueMetric::Work,
            other => {
                return Err(ConfigError::at(
                    src,
                    v.span(),
                    format!("queue_metric must be `count` or `work`, got `{other}`"),
                ))
            }
        },
    };

    let counts = raw
        .sweep
        .n_tasks
        .get_ref()
        .expand()
        .map_err(|m| ConfigError::at(src, raw.sweep.n_tasks.span(), m))?;
    if raw.sweep.variants.is_empty() {
        return Err(ConfigError::plain("sweep.variants is empty"));
    }
    let mut variants = Vec::new();
    for v in &raw.sweep.variants {
        let (kind, os) = parse_variant(v.get_ref()).ok_or_else(|| {
            ConfigError::at(
                src,
                v.span(),
                format!(
                    "unknown scheduler variant `{}` (expected naive or sgprs_<os>)",
                    v.get_ref()
                ),
            )
        })?;
        if !(os >= 1.0 && os.is_finite()) {
            return Err(ConfigError::at(
                src,
                v.span(),
                format!("over-subscription {os} must be >= 1.0"),
            ));
        }
        variants.push((kind, os));
    }
    if raw.scenarios.is_empty() {
        return Err(ConfigError::plain("no [[scenario]] entries"));
    }
    let mut seen = Vec::new();
    for sc in &raw.scenarios {
        let n = *sc.contexts.get_ref();
        if n == 0 || n > total_sms {
            return Err(ConfigError::at(
                src,
                sc.contexts.span(),
                format!("contexts must be in 1..={total_sms}, got {n}"),
            ));
        }
        for &(_, os) in &variants {
            if (total_sms as f64 * os / n as f64) < 1.0 {
                return Err(ConfigError::at(
                    src,
                    sc.contexts.span(),
                    "contexts would have 0 SMs",
                ));
            }
        }
        if seen.contains(sc.id.get_ref()) {
            return Err(ConfigError::at(
                src,
                sc.id.span(),
                format!("duplicate scenario id `{}`", sc.id.get_ref()),
            ));
        }
        seen.push(sc.id.get_ref().clone());
    }

    let template = TaskTemplate {
        frame_wcet_ms,
        reference_sms,
        fps,
        deadline_ms,
        dispatch_overhead_ms,
        stages,
    };
    let mut out = Vec::new();
    for sc in &raw.scenarios {
        for &(kind, os) in &variants {
            for &n in &counts {
                out.push(Scenario {
                    scenario_id: sc.id.get_ref().clone(),
                    total_sms,
                    n_contexts: *sc.contexts.get_ref(),
                    over_subscription: os,
                    scheduler: kind,
                    n_tasks: n,
                    task: template.clone(),
                    curves: curves.clone(),
                    horizon_ms,
                    warmup_ms,
                    seed: s.seed,
                    slot_borrowing: s.slot_borrowing,
                    queue_metric,
                    drop_on_overrun: s.drop_on_overrun,
                });
            }
        }
    }
    Ok(out)
}

fn stage_layout(src: &str, t: &RawTask) -> Result<Vec<(String, f64)>, ConfigError> {
    let curves: Vec<String> = match (&t.stages, &t.curve, &t.stage_curves) {
        (Some(n), Some(c), None) => {
            if *n.get_ref() == 0 {
                return Err(ConfigError::at(src, n.span(), "stages must be at least 1"));
            }
            vec![c.get_ref().clone(); *n.get_ref()]
        }
        (None, None, Some(list)) if !list.get_ref().is_empty() => list.get_ref().clone(),
        (None, None, Some(list)) => {
            return Err(ConfigError::at(src, list.span(), "stage_curves is empty"))
        }
        _ => {
            return Err(ConfigError::plain(
                "[task] needs either `stages` and `curve`, or `stage_curves`",
            ))
        }
    };
    let weights = match &t.stage_weights {
        None => vec![1.0; curves.len()],
        Some(w) => {
            if w.get_ref().len() != curves.len() {
                return Err(ConfigError::at(
                    src,
                    w.span(),
                    format!(
                        "stage_weights has {} entries for {} stages",
                        w.get_ref().len(),
                        curves.len()
                    ),
                ));
            }
            if w.get_ref().iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(ConfigError::at(
                    src,
                    w.span(),
                    "stage_weights must be positive",
                ));
            }
            w.get_ref().clone()
        }
    };
    Ok(curves.into_iter().zip(weights).collect())
}

// ---------------------------------------------------------------------------
// Canonical emitter

#[derive(Serialize)]
struct OutConfig<'a> {
    gpu: OutGpu,
    task: OutTask<'a>,
    sim: OutSim,
    sweep: OutSweep,
    scenario: Vec<OutScenario<'a>>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    curves: &'a BTreeMap<String, CurveDef>,
}

#[derive(Serialize)]
struct OutGpu {
    total_sms: u32,
}

#[derive(Serialize)]
struct OutTask<'a> {
    frame_wcet_ms: f64,
    reference_sms: f64,
    fps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    deadline_ms: Option<f64>,
    dispatch_overhead_ms: f64,
    stage_curves: Vec<&'a str>,
    stage_weights: Vec<f64>,
}

#[derive(Serialize)]
struct OutSim {
    horizon_ms: f64,
    warmup_ms: f64,
    seed: u64,
    slot_borrowing: bool,
    queue_metric: &'static str,
    drop_on_overrun: bool,
}

#[derive(Serialize)]
struct OutSweep {
    n_tasks: usize,
    variants: Vec<String>,
}

#[derive(Serialize)]
struct OutScenario<'a> {
    id: &'a str,
    contexts: u32,
}

/// Writes a config that parses back to exactly `[scenario]`.
pub fn emit_config(s: &Scenario) -> String {
    let out = OutConfig {
        gpu: OutGpu {
            total_sms: s.total_sms,
        },
        task: OutTask {
            frame_wcet_ms: s.task.frame_wcet_ms,
            reference_sms: s.task.reference_sms,
            fps: s.task.fps,
            deadline_ms: s.task.deadline_ms,
            dispatch_overhead_ms: s.task.dispatch_overhead_ms,
            stage_curves: s.task.stages.iter().map(|(c, _)| c.as_str()).collect(),
            stage_weights: s.task.stages.iter().map(|&(_, w)| w).collect(),
        },
        sim: OutSim {
            horizon_ms: s.horizon_ms,
            warmup_ms: s.warmup_ms,
            seed: s.seed,
            slot_borrowing: s.slot_borrowing,
            queue_metric: match s.queue_metric {
                QueueMetric::Count => "count",
                QueueMetric::Work => "work",
            },
            drop_on_overrun: s.drop_on_overrun,
        },
        sweep: OutSweep {
            n_tasks: s.n_tasks,
            variants: vec![s.variant()],
        },
        scenario: vec![OutScenario {
            id: &s.scenario_id,
            contexts: s.n_contexts,
        }],
        curves: &s.curves,
    };
    toml::to_string(&out).expect("config is always serializable")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[gpu]
total_sms = 68

[task]
frame_wcet_ms = 3.0
fps = 30.0
stages = 6
curve = "resnet18"

[sweep]
n_tasks = "1..4"
variants = ["naive", "sgprs_1.0", "sgprs_1.5"]

[[scenario]]
id = "two"
contexts = 2
"#;

    #[test]
    fn expands_sweep_in_order() {
        let runs = parse_config(MINIMAL).unwrap();
        assert_eq!(runs.len(), 12);
        let labels: Vec<_> = runs.iter().map(|r| (r.variant(), r.n_tasks)).collect();
        assert_eq!(labels[0], ("naive".to_string(), 1));
        assert_eq!(labels[4], ("sgprs_1.0".to_string(), 1));
        assert_eq!(labels[11], ("sgprs_1.5".to_string(), 4));
        let r = &runs[0];
        assert_eq!(r.task.stages.len(), 6);
        assert_eq!(r.task.reference_sms, 68.0);
        assert_eq!(r.horizon_ms, 11_000.0);
        assert_eq!(r.warmup_ms, 1_000.0);
        assert!((r.task.deadline() - 1000.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn task_count_forms() {
        let src = MINIMAL.replace("n_tasks = \"1..4\"", "n_tasks = [3, 1]");
        let runs = parse_config(&src).unwrap();
        assert_eq!(
            runs.iter().map(|r| r.n_tasks).take(2).collect::<Vec<_>>(),
            vec![3, 1]
        );
        let src = MINIMAL.replace("n_tasks = \"1..4\"", "n_tasks = 0");
        let runs = parse_config(&src).unwrap();
        assert_eq!(runs.len(), 3);
        assert!(runs.iter().all(|r| r.n_tasks == 0));
        let src = MINIMAL.replace("n_tasks = \"1..4\"", "n_tasks = \"4..1\"");
        assert!(parse_config(&src).is_err());
    }

    #[test]
    fn rejects_low_oversubscription_with_line() {
        let src = MINIMAL.replace("\"sgprs_1.5\"", "\"sgprs_0.5\"");
        let err = parse_config(&src).unwrap_err();
        assert_eq!(err.line, Some(13), "{err}");
        assert!(err.message.contains("0.5"));
    }

    #[test]
    fn rejects_unknown_keys_with_line() {
        let src = MINIMAL.replace("fps = 30.0", "fps = 30.0\nfrobnicate = 1");
        let err = parse_config(&src).unwrap_err();
        assert_eq!(err.line, Some(8), "{err}");
        assert!(err.message.contains("frobnicate"), "{err}");
    }

    #[test]
    fn rejects_unknown_curve() {
        let src = MINIMAL.replace("curve = \"resnet18\"", "curve = \"vgg\"");
        let err = parse_config(&src).unwrap_err();
        assert_eq!(err.line, Some(9), "{err}");
        assert!(err.message.contains("vgg"));
    }

    #[test]
    fn rejects_bad_variant_and_window() {
        let src = MINIMAL.replace("\"naive\"", "\"fifo\"");
        assert!(parse_config(&src).is_err());
        let src = format!("{MINIMAL}\n[sim]\nhorizon_ms = 100.0\nwarmup_ms = 200.0\n");
        let err = parse_config(&src).unwrap_err();
        assert!(err.message.contains("warmup"), "{err}");
    }

    #[test]
    fn user_curves_resolve() {
        let src = format!(
            "{MINIMAL}\n[curves.fast]\namdahl = {{ gain = 40.0, sms = 68 }}\n\n[curves.mix]\ncompose = [{{ curve = \"fast\", share = 0.5 }}, {{ curve = \"other\", share = 0.5 }}]\n"
        )
        .replace("curve = \"resnet18\"", "curve = \"mix\"");
        let runs = parse_config(&src).unwrap();
        let set = runs[0].curve_set().unwrap();
        let mix = set.get(set.id_of("mix").unwrap()).unwrap();
        let expected = 1.0 / (0.5 / 40.0 + 0.5 / 7.0);
        assert!((mix.gain(68.0).unwrap() - expected).abs() < 1e-9);
        runs[0].workload().unwrap();
    }

    #[test]
    fn rejects_cyclic_and_ambiguous_curves() {
        let cyc = format!("{MINIMAL}\n[curves.a]\ncompose = [{{ curve = \"a\", share = 1.0 }}]\n");
        assert!(parse_config(&cyc).is_err());
        let both = format!(
            "{MINIMAL}\n[curves.a]\namdahl = {{ gain = 4.0, sms = 8 }}\nanchors = [[1.0, 1.0]]\n"
        );
        assert!(parse_config(&both).is_err());
    }

    #[test]
    fn emitted_config_round_trips() {
        for run in parse_config(MINIMAL).unwrap() {
            let text = emit_config(&run);
            assert_eq!(parse_config(&text).unwrap(), vec![run], "{text}");
        }
    }

    #[test]
    fn variant_labels() {
        assert_eq!(variant_label(SchedulerKind::Sgprs, 1.0), "sgprs_1.0");
        assert_eq!(variant_label(SchedulerKind::Sgprs, 2.0), "sgprs_2.0");
        assert_eq!(variant_label(SchedulerKind::Naive, 1.0), "naive");
        assert_eq!(
            parse_variant("sgprs_1.5"),
            Some((SchedulerKind::Sgprs, 1.5))
        );
        assert_eq!(parse_variant("sgprs"), Some((SchedulerKind::Sgprs, 1.0)));
        assert_eq!(parse_variant("sgprs1.5"), None);
    }
}
