use milltwin_core::latency::{verdict, Histogram, Summary, Verdict};
use milltwin_core::plant::PlantState;
use serde::Serialize;

use crate::config::RunMode;

pub const REPORT_FORMAT: &str = "milltwin-run-report";
pub const REPORT_VERSION: u32 = 1;

/// Per-window timing, all in nanoseconds on the monotonic clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LatencyRecord {
    pub window: u64,
    pub close_timestamp_ns: u64,
    /// Time spanned by the window's samples; not part of end-to-end.
    pub accumulation_ns: u64,
    pub queue_ns: u64,
    pub feature_ns: u64,
    pub inference_ns: u64,
    pub decision_ns: u64,
    /// Summed broker hops, publish to receive.
    pub transport_ns: u64,
    /// Window close to command publish; to the end of the decision step
    /// when the window produced no command.
    pub end_to_end_ns: u64,
    pub command_issued: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummaries {
    pub accumulation: Option<Summary>,
    pub queue: Option<Summary>,
    pub feature: Option<Summary>,
    pub inference: Option<Summary>,
    pub decision: Option<Summary>,
    pub transport: Option<Summary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Bucket {
    pub upper_ns: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub windows: usize,
    pub budget_ns: u64,
    pub end_to_end: Option<Summary>,
    /// Restricted to windows that issued a command.
    pub command_end_to_end: Option<Summary>,
    pub stages: StageSummaries,
    pub verdict: Option<Verdict>,
    /// Empty when there were no windows.
    pub histogram: Vec<Bucket>,
}

fn summarize(records: &[LatencyRecord], f: impl Fn(&LatencyRecord) -> u64) -> Option<Summary> {
    Summary::from_samples(&records.iter().map(f).collect::<Vec<_>>())
}

pub fn measure_latency(records: &[LatencyRecord], budget_ns: u64) -> LatencyReport {
    let e2e: Vec<u64> = records.iter().map(|r| r.end_to_end_ns).collect();
    let end_to_end = Summary::from_samples(&e2e);
    let commanded: Vec<u64> = records
        .iter()
        .filter(|r| r.command_issued)
        .map(|r| r.end_to_end_ns)
        .collect();
    let histogram = if records.is_empty() {
        Vec::new()
    } else {
        Histogram::from_samples(&e2e)
            .buckets()
            .map(|(upper_ns, count)| Bucket { upper_ns, count })
            .collect()
    };
    LatencyReport {
        windows: records.len(),
        budget_ns,
        verdict: verdict(end_to_end.as_ref(), budget_ns),
        end_to_end,
        command_end_to_end: Summary::from_samples(&commanded),
        stages: StageSummaries {
            accumulation: summarize(records, |r| r.accumulation_ns),
            queue: summarize(records, |r| r.queue_ns),
            feature: summarize(records, |r| r.feature_ns),
            inference: summarize(records, |r| r.inference_ns),
            decision: summarize(records, |r| r.decision_ns),
            transport: summarize(records, |r| r.transport_ns),
        },
        histogram,
    }
}

/// `bucket_upper_ns,count` lines under a header.
pub fn histogram_csv(report: &LatencyReport) -> String {
    let mut out = String::from("bucket_upper_ns,count\n");
    for b in &report.histogram {
        out.push_str(&format!("{},{}\n", b.upper_ns, b.count));
    }
    out
}

/// One line of the prediction log. No timestamps, so two runs over the
/// same samples produce identical logs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub window: u64,
    pub start_index: u64,
    pub peak_amplitude_volts: f64,
    pub p_contact: f64,
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub window: u64,
    pub timestamp_ns: u64,
    pub p_contact: f64,
    pub contact: bool,
    pub believed_contact: bool,
    pub commands: Vec<String>,
}

/// A command as seen by the source: when the plant applied it, or why not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedCommand {
    pub window: u64,
    pub nc: String,
    pub kind: &'static str,
    pub applied_at_sample: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SampleCounts {
    pub generated: u64,
    pub ingested: u64,
    pub dropped: u64,
    pub windowed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WindowCounts {
    pub closed: u64,
    pub dropped_backpressure: u64,
    pub featurized: u64,
    pub predicted: u64,
    pub decided: u64,
    /// Windows whose messages were evicted before a stage read them.
    pub lost_in_transport: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub wall_clock_ns: u64,
    pub latency: LatencyReport,
}

/// Everything outside `timing` is a deterministic function of the
/// configuration and inputs in the lockstep modes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub format: &'static str,
    pub version: u32,
    pub mode: RunMode,
    pub source: &'static str,
    pub seed: u64,
    pub model_seed: Option<u64>,
    pub samples: SampleCounts,
    pub windows: WindowCounts,
    pub commands: Vec<AppliedCommand>,
    pub plant_final: Option<PlantState>,
    pub error: Option<String>,
    pub timing: TimingReport,
}
