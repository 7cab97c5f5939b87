//! Sublinear speedup curves.
//!
//! A curve maps an SM allocation to a speedup relative to a single SM. Curves
//! are stored as anchor tables and evaluated by piecewise-linear
//! interpolation, clamped at both ends. Execution times are derived from a
//! [`WorkQuantity`], the time a stage would need at gain 1.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// SM counts at which [`amdahl_fit`] samples its closed form.
pub const AMDAHL_SAMPLE_SMS: [f64; 9] = [1.0, 2.0, 4.0, 8.0, 16.0, 24.0, 34.0, 48.0, 68.0];

/// Slack for the monotonicity and sublinearity checks on anchor tables.
const ANCHOR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupCurve {
    name: String,
    anchors: Vec<(f64, f64)>,
}

impl SpeedupCurve {
    /// Builds a curve from `(sm, gain)` anchors.
    ///
    /// The table must start at `(1, 1)`, be strictly increasing in SMs,
    /// non-decreasing in gain, and never exceed linear speedup between
    /// anchors (`gain / sm` non-increasing).
    pub fn new(name: impl Into<String>, anchors: Vec<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        let bad = |msg: String| Err(Error::InvalidCurve(format!("{name}: {msg}")));
        let Some(&(s0, g0)) = anchors.first() else {
            return bad("no anchors".to_string());
        };
        if s0 != 1.0 || g0 != 1.0 {
            return bad(format!("first anchor must be (1, 1), got ({s0}, {g0})"));
        }
        for &(s, g) in &anchors {
            if !(s.is_finite() && g.is_finite() && s > 0.0 && g > 0.0) {
                return bad(format!("anchor ({s}, {g}) is not finite and positive"));
            }
        }
        for w in anchors.windows(2) {
            let ((s1, g1), (s2, g2)) = (w[0], w[1]);
            if s2 <= s1 {
                return bad(format!("SM counts not strictly increasing at {s2}"));
            }
            if g2 < g1 * (1.0 - ANCHOR_TOLERANCE) {
                return bad(format!("gain decreases between {s1} and {s2} SMs"));
            }
            if g2 / s2 > (g1 / s1) * (1.0 + ANCHOR_TOLERANCE) {
                return bad(format!("super-linear speedup between {s1} and {s2} SMs"));
            }
        }
        Ok(Self { name, anchors })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Speedup at `sms` SMs. Fractional allocations are allowed.
    pub fn gain(&self, sms: f64) -> Result<f64> {
        if !(sms > 0.0) {
            return Err(Error::NonPositiveSms(sms));
        }
        Ok(self.gain_at(sms))
    }

    /// [`gain`](Self::gain) for callers that already guarantee `sms > 0`.
    pub(crate) fn gain_at(&self, sms: f64) -> f64 {
        let anchors = &self.anchors;
        let (first, last) = (anchors[0], anchors[anchors.len() - 1]);
        if sms <= first.0 {
            return first.1;
        }
        if sms >= last.0 {
            return last.1;
        }
        // first anchor with sm >= sms; guaranteed to be in 1..len
        let hi = anchors.partition_point(|&(s, _)| s < sms);
        let (s1, g1) = anchors[hi - 1];
        let (s2, g2) = anchors[hi];
        if sms == s2 {
            return g2;
        }
        g1 + (g2 - g1) * (sms - s1) / (s2 - s1)
    }
}

/// Amdahl parallel fraction that yields `gain` at `sms` SMs.
pub fn amdahl_parallel_fraction(gain: f64, sms: u32) -> Result<f64> {
    let n = sms as f64;
    if !(gain > 1.0) || sms <= 1 || gain >= n {
        return Err(Error::InvalidAmdahlFit { gain, sms });
    }
    Ok((1.0 - 1.0 / gain) / (1.0 - 1.0 / n))
}

/// Amdahl speedup `1 / ((1 - p) + p / s)`.
pub fn amdahl_speedup(parallel_fraction: f64, sms: f64) -> f64 {
    1.0 / ((1.0 - parallel_fraction) + parallel_fraction / sms)
}

/// Fits an Amdahl curve through `(1, 1)` and `(sms, gain)` and samples it at
/// [`AMDAHL_SAMPLE_SMS`] (up to `sms`, which is always included).
pub fn amdahl_fit(name: impl Into<String>, gain: f64, sms: u32) -> Result<SpeedupCurve> {
    let p = amdahl_parallel_fraction(gain, sms)?;
    let n = sms as f64;
    let mut anchors: Vec<(f64, f64)> = AMDAHL_SAMPLE_SMS
        .iter()
        .copied()
        .filter(|&s| s < n)
        .map(|s| (s, if s == 1.0 { 1.0 } else { amdahl_speedup(p, s) }))
        .collect();
    // pin the calibration anchor to the requested value, not the round trip
    anchors.push((n, gain));
    SpeedupCurve::new(name, anchors)
}

/// Harmonic composition: a network spending `share_k` of its gain-1 time in
/// part `k` runs at `1 / Σ share_k / gain_k(s)`.
pub fn compose_network_curve(
    name: impl Into<String>,
    parts: &[(&SpeedupCurve, f64)],
) -> Result<SpeedupCurve> {
    if parts.is_empty() {
        return Err(Error::InvalidComposition("no parts".to_string()));
    }
    let mut total = 0.0;
    for &(curve, share) in parts {
        if !(share > 0.0 && share.is_finite()) {
            return Err(Error::InvalidComposition(format!(
                "share {share} of curve {} is not positive",
                curve.name()
            )));
        }
        total += share;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidComposition(format!(
            "shares sum to {total}, expected 1"
        )));
    }

    let mut sms: Vec<f64> = parts
        .iter()
        .flat_map(|(c, _)| c.anchors().iter().map(|&(s, _)| s))
        .collect();
    sms.sort_by(f64::total_cmp);
    sms.dedup();

    let anchors = sms
        .into_iter()
        .map(|s| {
            let inv: f64 = parts.iter().map(|&(c, share)| share / c.gain_at(s)).sum();
            // the sum of shares is 1 only to within 1e-9; keep (1, 1) exact
            (s, if s == 1.0 { 1.0 } else { 1.0 / inv })
        })
        .collect();
    SpeedupCurve::new(name, anchors)
}

/// Share of the fast part that makes a two-part composition hit `target`:
/// solves `1 / target = a / fast + (1 - a) / slow`.
pub fn two_part_share(target: f64, fast: f64, slow: f64) -> Result<f64> {
    if !(slow < target && target < fast) {
        return Err(Error::InvalidComposition(format!(
            "target {target} not strictly between {slow} and {fast}"
        )));
    }
    Ok((1.0 / slow - 1.0 / target) / (1.0 / slow - 1.0 / fast))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CurveId(pub usize);

/// Named curves referenced by stages through [`CurveId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CurveSet {
    curves: Vec<SpeedupCurve>,
}

/// Physical SMs of the GPU the default curves are calibrated on.
pub const REFERENCE_GPU_SMS: u32 = 68;

impl CurveSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a curve, replacing one with the same name.
    pub fn insert(&mut self, curve: SpeedupCurve) -> CurveId {
        if let Some(id) = self.id_of(curve.name()) {
            self.curves[id.0] = curve;
            return id;
        }
        self.curves.push(curve);
        CurveId(self.curves.len() - 1)
    }

    pub fn get(&self, id: CurveId) -> Result<&SpeedupCurve> {
        self.curves.get(id.0).ok_or(Error::UnknownCurve(id.0))
    }

    pub fn id_of(&self, name: &str) -> Option<CurveId> {
        self.curves
            .iter()
            .position(|c| c.name() == name)
            .map(CurveId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (CurveId, &SpeedupCurve)> {
        self.curves.iter().enumerate().map(|(i, c)| (CurveId(i), c))
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    /// ResNet18 on a 68-SM GPU: convolution (32x), max pooling (14x), a
    /// lumped "other" curve (7x), and the network curve `resnet18` composed
    /// from convolution and "other" so that it reaches 23x at 68 SMs.
    pub fn resnet18_defaults() -> Self {
        let n = REFERENCE_GPU_SMS;
        let conv = amdahl_fit("conv", 32.0, n).expect("valid default");
        let maxpool = amdahl_fit("maxpool", 14.0, n).expect("valid default");
        let other = amdahl_fit("other", 7.0, n).expect("valid default");
        let share = two_part_share(23.0, 32.0, 7.0).expect("valid default");
        let net = compose_network_curve("resnet18", &[(&conv, share), (&other, 1.0 - share)])
            .expect("valid default");
        let mut set = Self::new();
        set.insert(conv);
        set.insert(maxpool);
        set.insert(other);
        set.insert(net);
        set
    }
}

/// A stage's execution time at gain 1, kept as the pair `(wcet_ref,
/// gain(sm_ref))` so that converting back to the reference allocation is exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkQuantity {
    wcet_ref: f64,
    gain_ref: f64,
}

impl WorkQuantity {
    pub fn from_reference(curve: &SpeedupCurve, wcet_ref: f64, sm_ref: f64) -> Result<Self> {
        Ok(Self {
            wcet_ref,
            gain_ref: curve.gain(sm_ref)?,
        })
    }

    /// Work units: milliseconds at gain 1.
    pub fn amount(&self) -> f64 {
        self.wcet_ref * self.gain_ref
    }

    /// Execution time on `sms` SMs in isolation.
    pub fn exec_time(&self, curve: &SpeedupCurve, sms: f64) -> Result<f64> {
        Ok(self.wcet_ref * (self.gain_ref / curve.gain(sms)?))
    }
}
