//! Piecewise-constant and sampled time signals.
//!
//! Molecular counts are piecewise constant and right-continuous, so most of
//! the filters in this crate consume [`StepSignal`]s. Mean-field references
//! come out of an ODE integrator as a uniformly sampled [`SampledSeries`]
//! that is linearly interpolated between samples.

use serde::{Deserialize, Serialize};

/// Right-continuous piecewise-constant signal on `[0, horizon]`.
///
/// `values[i]` holds on `[times[i], times[i + 1])`; `times[0] == 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSignal {
    times: Vec<f64>,
    values: Vec<f64>,
    horizon: f64,
}

impl StepSignal {
    pub fn constant(value: f64, horizon: f64) -> Self {
        Self {
            times: vec![0.0],
            values: vec![value],
            horizon,
        }
    }

    /// Builds a signal from `(start time, value)` breakpoints.
    ///
    /// The first breakpoint must be at 0 and times must be increasing; equal
    /// consecutive values are merged.
    pub fn from_breakpoints(points: &[(f64, f64)], horizon: f64) -> Option<Self> {
        let first = points.first()?;
        if first.0 != 0.0 {
            return None;
        }
        let mut times = Vec::with_capacity(points.len());
        let mut values = Vec::with_capacity(points.len());
        for &(t, v) in points {
            if let Some(&last) = times.last() {
                if t <= last {
                    return None;
                }
            }
            if t > horizon {
                break;
            }
            if values.last() == Some(&v) {
                continue;
            }
            times.push(t);
            values.push(v);
        }
        Some(Self {
            times,
            values,
            horizon,
        })
    }

    /// Rectangular pulse: `on` on `[0, duration)`, `off` afterwards.
    pub fn pulse(on: f64, off: f64, duration: f64, horizon: f64) -> Self {
        if duration >= horizon {
            return Self::constant(on, horizon);
        }
        Self::from_breakpoints(&[(0.0, on), (duration, off)], horizon)
            .expect("pulse breakpoints are ordered")
    }

    pub(crate) fn from_parts_unchecked(times: Vec<f64>, values: Vec<f64>, horizon: f64) -> Self {
        debug_assert_eq!(times.len(), values.len());
        Self {
            times,
            values,
            horizon,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn segment(&self, t: f64) -> usize {
        // last i with times[i] <= t
        match self.times.partition_point(|&x| x <= t) {
            0 => 0,
            i => i - 1,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        self.values[self.segment(t)]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exact integral over `[t0, t1]`.
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut i = self.segment(t0);
        let mut acc = 0.0;
        let mut a = t0;
        loop {
            let end = self.times.get(i + 1).copied().unwrap_or(f64::INFINITY);
            let b = end.min(t1);
            acc += self.values[i] * (b - a);
            if end >= t1 {
                break;
            }
            a = end;
            i += 1;
        }
        acc
    }

    /// Jumps as `(time, new value - old value)`.
    pub fn jumps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (1..self.times.len()).map(move |i| (self.times[i], self.values[i] - self.values[i - 1]))
    }

    /// Pointwise map of the values.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Vec::with_capacity(self.values.len());
        let mut times = Vec::with_capacity(self.values.len());
        for (&t, &v) in self.times.iter().zip(&self.values) {
            let m = f(v);
            if out.last() == Some(&m) {
                continue;
            }
            times.push(t);
            out.push(m);
        }
        Self {
            times,
            values: out,
            horizon: self.horizon,
        }
    }

    /// Cursor for monotone (non-decreasing) evaluation.
    pub fn cursor(&self) -> StepCursor<'_> {
        StepCursor { signal: self, idx: 0 }
    }
}

/// Amortised O(1) evaluation of a [`StepSignal`] at non-decreasing times.
#[derive(Debug, Clone)]
pub struct StepCursor<'a> {
    signal: &'a StepSignal,
    idx: usize,
}

impl StepCursor<'_> {
    pub fn value(&mut self, t: f64) -> f64 {
        let times = &self.signal.times;
        while self.idx + 1 < times.len() && times[self.idx + 1] <= t {
            self.idx += 1;
        }
        self.signal.values[self.idx]
    }
}

/// Uniformly sampled series, linear between samples and held after the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSeries {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledSeries {
    pub fn new(dt: f64, values: Vec<f64>) -> Self {
        assert!(dt > 0.0 && !values.is_empty());
        Self { dt, values }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * (self.values.len() - 1) as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = self.values.len();
        if t <= 0.0 {
            return self.values[0];
        }
        let x = t / self.dt;
        let i = x.floor() as usize;
        if i + 1 >= n {
            return self.values[n - 1];
        }
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A reference signal that the filters can evaluate and integrate.
pub trait Reference {
    fn value(&self, t: f64) -> f64;
    fn integral(&self, t0: f64, t1: f64) -> f64;
    /// Times at which the signal is not smooth; filters split there.
    fn breakpoints(&self) -> Vec<f64>;
}

impl Reference for StepSignal {
    fn value(&self, t: f64) -> f64 {
        StepSignal::value(self, t)
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        StepSignal::integral(self, t0, t1)
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.times.clone()
    }
}

/// Sampled series with a cached cumulative integral.
#[derive(Debug, Clone)]
pub struct SampledReference {
    series: SampledSeries,
    cumulative: Vec<f64>,
}

impl SampledReference {
    pub fn new(series: SampledSeries) -> Self {
        let mut cumulative = Vec::with_capacity(series.values.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in series.values.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * series.dt;
            cumulative.push(acc);
        }
        Self { series, cumulative }
    }

    pub fn series(&self) -> &SampledSeries {
        &self.series
    }

    fn primitive(&self, t: f64) -> f64 {
        let s = &self.series;
        let n = s.values.len();
        if t <= 0.0 {
            return 0.0;
        }
        let x = t / s.dt;
        let i = x.floor() as usize;
        if i + 1 >= n {
            return self.cumulative[n - 1] + s.values[n - 1] * (t - s.time(n - 1));
        }
        let f = x - i as f64;
        let v0 = s.values[i];
        let v1 = s.values[i + 1];
        self.cumulative[i] + s.dt * (v0 * f + 0.5 * (v1 - v0) * f * f)
    }
}

impl Reference for SampledReference {
    fn value(&self, t: f64) -> f64 {
        self.series.value(t)
    }

    fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        self.primitive(t1) - self.primitive(t0)
    }

    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Uniform grid `0, dt, 2dt, ...` up to and including `horizon` (within
/// rounding).
pub fn uniform_grid(dt: f64, horizon: f64) -> Vec<f64> {
    let n = (horizon / dt + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}
