//! Latency recording, percentiles and a fixed-bucket histogram.

use alloc::vec::Vec;

use crate::math;

/// Nearest-rank percentile of an ascending slice; `q` in `[0, 1]`.
pub fn percentile(sorted: &[u64], q: f64) -> Option<u64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = math::ceil(q.clamp(0.0, 1.0) * sorted.len() as f64) as usize;
    Some(sorted[rank.max(1) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Summary {
    pub count: usize,
    pub min_ns: u64,
    pub p50_ns: u64,
    pub p99_ns: u64,
    pub max_ns: u64,
    pub mean_ns: f64,
}

impl Summary {
    pub fn from_samples(samples: &[u64]) -> Option<Self> {
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        Some(Self {
            count: sorted.len(),
            min_ns: *sorted.first()?,
            p50_ns: percentile(&sorted, 0.50)?,
            p99_ns: percentile(&sorted, 0.99)?,
            max_ns: *sorted.last()?,
            mean_ns: sorted.iter().map(|&v| v as f64).sum::<f64>() / sorted.len() as f64,
        })
    }
}

/// Budget verdict on the p99 of an end-to-end summary.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verdict {
    pub budget_ns: u64,
    pub p99_ns: u64,
    pub within_budget: bool,
}

pub fn verdict(summary: Option<&Summary>, budget_ns: u64) -> Option<Verdict> {
    summary.map(|s| Verdict {
        budget_ns,
        p99_ns: s.p99_ns,
        within_budget: s.p99_ns <= budget_ns,
    })
}

/// Histogram over 1-2-5 decade buckets from 1 µs to 10 s; the last bucket
/// (upper bound `u64::MAX`) catches everything above.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    upper_bounds_ns: Vec<u64>,
    counts: Vec<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        let mut upper_bounds_ns = Vec::new();
        let mut decade = 1_000u64;
        while decade <= 1_000_000_000 {
            for m in [1, 2, 5] {
                upper_bounds_ns.push(decade * m);
            }
            decade *= 10;
        }
        upper_bounds_ns.push(10_000_000_000);
        upper_bounds_ns.push(u64::MAX);
        let counts = alloc::vec![0; upper_bounds_ns.len()];
        Self { upper_bounds_ns, counts }
    }
}

impl Histogram {
    pub fn record(&mut self, ns: u64) {
        let i = self.upper_bounds_ns.partition_point(|&ub| ub < ns);
        self.counts[i] += 1;
    }

    pub fn from_samples(samples: &[u64]) -> Self {
        let mut h = Self::default();
        samples.iter().for_each(|&s| h.record(s));
        h
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(bucket_upper_ns, count)` pairs in ascending order.
    pub fn buckets(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.upper_bounds_ns.iter().copied().zip(self.counts.iter().copied())
    }
}
