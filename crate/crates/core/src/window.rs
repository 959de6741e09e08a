//! Time-based variable-size windows.
//!
//! A [`WindowStore`] keeps every value whose event timestamp lies in the
//! half-open interval `(newest - span, newest]`. Expired entries are evicted
//! only when a new value is inserted; there is no timer. Count, sum, min and
//! max are maintained incrementally: a compensated running sum and two
//! monotonic wedges give amortized O(1) inserts and O(1) queries.

use std::collections::VecDeque;

use crate::value::{ErrorCode, Value};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    pub stream: String,
    pub attr: String,
    pub span_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary {
    pub count: usize,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
}

/// Neumaier-compensated running sum supporting removal by negated add.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }

    fn reset(&mut self, v: f64) {
        self.sum = v;
        self.comp = 0.0;
    }
}

#[derive(Debug, Clone)]
pub struct WindowStore {
    spec: WindowSpec,
    buf: VecDeque<(u64, f64)>,
    sum: CompensatedSum,
    // ascending values from front to back; front is the minimum
    min_wedge: VecDeque<(u64, f64)>,
    // descending values; front is the maximum
    max_wedge: VecDeque<(u64, f64)>,
    wedge_ops: u64,
}

impl WindowStore {
    pub fn new(spec: WindowSpec) -> Self {
        assert!(spec.span_ms > 0, "window span must be positive");
        Self {
            spec,
            buf: VecDeque::new(),
            sum: CompensatedSum::default(),
            min_wedge: VecDeque::new(),
            max_wedge: VecDeque::new(),
            wedge_ops: 0,
        }
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn newest_ts(&self) -> Option<u64> {
        self.buf.back().map(|&(ts, _)| ts)
    }

    /// Appends `(ts, v)` and evicts every entry with `entry.ts <= ts - span`.
    /// Returns the number of evicted entries.
    ///
    /// Panics if `ts` is older than the newest buffered timestamp; callers
    /// reject out-of-order tuples before they reach the window.
    pub fn insert(&mut self, ts: u64, v: f64) -> usize {
        if let Some(newest) = self.newest_ts() {
            assert!(ts >= newest, "window insert out of order: {ts} < {newest}");
        }

        self.buf.push_back((ts, v));
        self.sum.add(v);

        while self.min_wedge.back().is_some_and(|&(_, w)| w > v) {
            self.min_wedge.pop_back();
            self.wedge_ops += 1;
        }
        self.min_wedge.push_back((ts, v));
        while self.max_wedge.back().is_some_and(|&(_, w)| w < v) {
            self.max_wedge.pop_back();
            self.wedge_ops += 1;
        }
        self.max_wedge.push_back((ts, v));
        self.wedge_ops += 2;

        let Some(cutoff) = ts.checked_sub(self.spec.span_ms) else {
            return 0;
        };
        let mut evicted = 0;
        while self.buf.front().is_some_and(|&(t, _)| t <= cutoff) {
            let (_, old) = self.buf.pop_front().expect("front checked");
            self.sum.add(-old);
            evicted += 1;
        }
        while self.min_wedge.front().is_some_and(|&(t, _)| t <= cutoff) {
            self.min_wedge.pop_front();
            self.wedge_ops += 1;
        }
        while self.max_wedge.front().is_some_and(|&(t, _)| t <= cutoff) {
            self.max_wedge.pop_front();
            self.wedge_ops += 1;
        }
        if self.buf.len() == 1 {
            // only the new value survived: drop accumulated rounding
            self.sum.reset(v);
        }
        evicted
    }

    pub fn count(&self) -> usize {
        self.buf.len()
    }

    pub fn sum(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.sum.value()
        }
    }

    pub fn min(&self) -> f64 {
        self.min_wedge.front().map_or(0.0, |&(_, v)| v)
    }

    pub fn max(&self) -> f64 {
        self.max_wedge.front().map_or(0.0, |&(_, v)| v)
    }

    pub fn avg(&self) -> Value {
        if self.buf.is_empty() {
            Value::Error(ErrorCode::Div0)
        } else {
            Value::number(self.sum() / self.buf.len() as f64)
        }
    }

    pub fn summary(&self) -> WindowSummary {
        WindowSummary { count: self.count(), sum: self.sum(), min: self.min(), max: self.max() }
    }

    /// Buffered `(ts, value)` pairs, oldest first.
    pub fn entries(&self) -> impl ExactSizeIterator<Item = (u64, f64)> + '_ {
        self.buf.iter().copied()
    }

    /// Total pushes and pops performed on both wedges since creation.
    pub fn wedge_ops(&self) -> u64 {
        self.wedge_ops
    }
}
