//! The closed loop: source → `ae/samples` → ingest → double buffer →
//! windows → bounded queue → features → `dt/features` → inference →
//! `dt/prediction` → decision → `mc/commands` → source.
//!
//! Realtime mode runs every stage on its own thread and paces the source
//! at the sample rate. Replay and as-fast-as-possible modes pump the
//! stages from one thread, one source block at a time, so a run is a pure
//! function of its inputs and commands reach the plant at the same sample
//! index every time.

mod queue;
mod report;
mod stages;

use std::sync::Arc;
use std::time::Instant;

use milltwin_core::control::PolicyError;
use milltwin_core::features::{FeatureError, FeatureVector};
use milltwin_core::model::Mlp;
use milltwin_core::plant::{Plant, PlantError, PlantState};
use milltwin_core::signal::{double_buffer, BufferConfig, Segmenter, SignalError};
use thiserror::Error;

pub use queue::{Queued, WindowQueue};
pub use report::{
    histogram_csv, measure_latency, AppliedCommand, Bucket, DecisionRecord, LatencyRecord, LatencyReport,
    PredictionRecord, RunReport, SampleCounts, StageSummaries, TimingReport, WindowCounts, REPORT_FORMAT,
    REPORT_VERSION,
};

use stages::{
    DecisionStage, FeatureStage, IngestStage, InferenceStage, Poll, SourceKind, SourceStage, Stage, WindowStage,
};

use crate::broker::{topics, Broker, BrokerError, StartFrom};
use crate::clock::{monotonic_ns, sleep_until};
use crate::config::{PipelineConfig, RunMode};
use crate::messages::DecodeError;
use crate::tcp::TcpBridge;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("broker: {0}")]
    Broker(#[from] BrokerError),
    #[error("{0}")]
    Decode(#[from] DecodeError),
    #[error("signal: {0}")]
    Signal(#[from] SignalError),
    #[error("features: {0}")]
    Feature(#[from] FeatureError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("sample messages {first_seq}..={last_seq} were evicted before ingestion")]
    SampleGap { first_seq: u64, last_seq: u64 },
    #[error("window {window} arrived after window {after}")]
    OutOfOrder { window: u64, after: u64 },
    #[error("listener: {0}")]
    Listen(#[from] std::io::Error),
    #[error("pipeline stalled before end of stream")]
    Stalled,
}

/// Where samples come from.
#[derive(Debug, Clone)]
pub enum RunSource {
    /// The simulated plant, closed loop.
    Plant,
    /// A recorded signal, open loop: commands are logged, not applied.
    Recording { sample_rate_hz: f64, samples: Vec<f32> },
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub features: Vec<FeatureVector>,
    pub predictions: Vec<PredictionRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub latency: Vec<LatencyRecord>,
    /// The source samples, when recording was requested.
    pub recording: Option<Vec<f32>>,
}

impl RunOutcome {
    pub fn is_ok(&self) -> bool {
        self.report.error.is_none()
    }
}

struct Stages {
    source: SourceStage,
    ingest: IngestStage,
    window: WindowStage,
    feature: FeatureStage,
    inference: InferenceStage,
    decision: DecisionStage,
}

/// Run the pipeline to the end of the source. Setup problems are errors;
/// a failure after samples start flowing ends the run early and is
/// recorded in the report instead, next to whatever was produced.
pub fn run(
    cfg: &PipelineConfig,
    model: Arc<Mlp>,
    model_seed: Option<u64>,
    source: RunSource,
    record: bool,
) -> Result<RunOutcome, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let sample_rate_hz = match &source {
        RunSource::Plant => cfg.scenario.sample_rate_hz,
        RunSource::Recording { sample_rate_hz, .. } => *sample_rate_hz,
    };
    let kind = match source {
        RunSource::Plant => {
            let p = &cfg.plant;
            let state = PlantState::new(p.spindle_rpm, p.feed_mm_per_min, p.seed);
            SourceKind::Plant(Box::new(Plant::new(cfg.scenario.clone(), state, p.limits)?))
        }
        RunSource::Recording { sample_rate_hz, samples } => SourceKind::Recording {
            sample_rate_hz,
            samples,
            cursor: 0,
        },
    };
    let source_name = match kind {
        SourceKind::Plant(_) => "plant",
        SourceKind::Recording { .. } => "recording",
    };

    let broker = Broker::new(cfg.retention);
    let bridge = cfg.listen.as_deref().map(|addr| TcpBridge::bind(broker.clone(), addr)).transpose()?;
    let (producer, consumer) = double_buffer(BufferConfig::lossless(cfg.buffer_capacity, sample_rate_hz))?;
    let queue = Arc::new(WindowQueue::new(cfg.queue_depth));
    let mut stages = Stages {
        source: SourceStage::new(
            kind,
            broker.clone(),
            broker.subscribe(topics::COMMANDS, StartFrom::Earliest)?,
            cfg.block_samples,
            record,
        ),
        ingest: IngestStage::new(broker.subscribe(topics::SAMPLES, StartFrom::Earliest)?, producer),
        window: WindowStage::new(consumer, Segmenter::new(cfg.window)?, Arc::clone(&queue)),
        feature: FeatureStage::new(Arc::clone(&queue), broker.clone(), cfg.features),
        inference: InferenceStage::new(
            broker.subscribe(topics::FEATURES, StartFrom::Earliest)?,
            broker.clone(),
            model,
            &cfg.policy,
        ),
        decision: DecisionStage::new(
            broker.subscribe(topics::PREDICTION, StartFrom::Earliest)?,
            broker.clone(),
            cfg.policy,
            cfg.tool_life_s,
        ),
    };

    let started = Instant::now();
    let (stages, error) = match cfg.mode {
        RunMode::Realtime => run_threaded(stages, &broker, &queue, sample_rate_hz, cfg.block_samples),
        RunMode::Replay | RunMode::AsFastAsPossible => {
            let error = run_lockstep(&mut stages).err();
            if error.is_some() {
                stages.ingest.shutdown();
                stages.window.shutdown();
            }
            (stages, error)
        }
    };
    let wall_clock_ns = started.elapsed().as_nanos() as u64;
    broker.close();
    drop(bridge);

    let Stages {
        source,
        ingest,
        window,
        feature,
        inference,
        decision,
    } = stages;
    let latency = measure_latency(&decision.records, cfg.latency_budget_ns);
    let report = RunReport {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        mode: cfg.mode,
        source: source_name,
        seed: cfg.plant.seed,
        model_seed,
        samples: SampleCounts {
            generated: source.emitted,
            ingested: ingest.accepted(),
            dropped: ingest.dropped(),
            windowed: window.drained,
        },
        windows: WindowCounts {
            closed: window.closed,
            dropped_backpressure: queue.dropped(),
            featurized: feature.rows.len() as u64,
            predicted: inference.predictions.len() as u64,
            decided: decision.decisions.len() as u64,
            lost_in_transport: inference.lost_windows + decision.lost_windows,
        },
        commands: source.applied.clone(),
        plant_final: match &source.kind {
            SourceKind::Plant(p) => Some(*p.state()),
            SourceKind::Recording { .. } => None,
        },
        error: error.map(|e| e.to_string()),
        timing: TimingReport { wall_clock_ns, latency },
    };
    Ok(RunOutcome {
        report,
        features: feature.rows,
        predictions: inference.predictions,
        decisions: decision.decisions,
        latency: decision.records,
        recording: source.recording,
    })
}

/// Poll a stage until it has nothing left to do right now.
fn pump_one(stage: &mut dyn Stage, done: &mut bool) -> Result<bool, PipelineError> {
    let mut progressed = false;
    while !*done {
        match stage.poll()? {
            Poll::Progress => progressed = true,
            Poll::Idle => break,
            Poll::Done => *done = true,
        }
    }
    Ok(progressed)
}

fn run_lockstep(s: &mut Stages) -> Result<(), PipelineError> {
    let mut done = [false; 5];
    loop {
        s.source.poll_commands()?;
        let more = s.source.emit_block()?;
        loop {
            let mut progressed = false;
            progressed |= pump_one(&mut s.ingest, &mut done[0])?;
            progressed |= pump_one(&mut s.window, &mut done[1])?;
            progressed |= pump_one(&mut s.feature, &mut done[2])?;
            progressed |= pump_one(&mut s.inference, &mut done[3])?;
            progressed |= pump_one(&mut s.decision, &mut done[4])?;
            if !progressed {
                break;
            }
        }
        if !more {
            break;
        }
    }
    s.source.poll_commands()?;
    if done.iter().all(|&d| d) {
        Ok(())
    } else {
        Err(PipelineError::Stalled)
    }
}

/// Drive a stage on the current thread until it is done or fails. A
/// failure closes the broker and the window queue so every other stage
/// winds down.
fn drive<S: Stage>(mut stage: S, broker: &Broker, queue: &WindowQueue) -> (S, Option<PipelineError>) {
    let err = loop {
        match stage.poll() {
            Ok(Poll::Progress) => {}
            Ok(Poll::Idle) => stage.wait(),
            Ok(Poll::Done) => break None,
            Err(e) => {
                broker.close();
                queue.close();
                break Some(e);
            }
        }
    };
    stage.shutdown();
    (stage, err)
}

fn run_threaded(
    s: Stages,
    broker: &Broker,
    queue: &WindowQueue,
    sample_rate_hz: f64,
    block_samples: usize,
) -> (Stages, Option<PipelineError>) {
    let Stages {
        mut source,
        mut ingest,
        window,
        feature,
        inference,
        decision,
    } = s;
    let block_ns = (block_samples as f64 / sample_rate_hz * 1e9) as u64;
    std::thread::scope(|scope| {
        let decision = scope.spawn(|| drive(decision, broker, queue));
        let inference = scope.spawn(|| drive(inference, broker, queue));
        let feature = scope.spawn(|| drive(feature, broker, queue));
        let window = scope.spawn(|| drive(window, broker, queue));
        ingest.window_thread = Some(window.thread().clone());
        let ingest = scope.spawn(|| drive(ingest, broker, queue));

        let source_err = (|| -> Result<(), PipelineError> {
            let t0 = monotonic_ns();
            let mut k = 0u64;
            loop {
                sleep_until(t0 + k * block_ns);
                source.poll_commands()?;
                if !source.emit_block()? {
                    break;
                }
                k += 1;
            }
            source.drain_commands()
        })()
        .err();
        if source_err.is_some() {
            broker.close();
            queue.close();
        }

        let mut errors = Vec::new();
        let ingest = join(ingest, &mut errors);
        let window = join(window, &mut errors);
        let feature = join(feature, &mut errors);
        let inference = join(inference, &mut errors);
        let decision = join(decision, &mut errors);
        // The stage that failed first is the interesting one; others
        // usually just saw the broker close.
        errors.extend(source_err);
        let error = errors
            .iter()
            .position(|e| !matches!(e, PipelineError::Broker(BrokerError::Closed)))
            .map(|i| errors.swap_remove(i))
            .or_else(|| errors.pop());
        let stages = Stages {
            source,
            ingest,
            window,
            feature,
            inference,
            decision,
        };
        (stages, error)
    })
}

fn join<S>(
    h: std::thread::ScopedJoinHandle<'_, (S, Option<PipelineError>)>,
    errors: &mut Vec<PipelineError>,
) -> S {
    match h.join() {
        Ok((stage, err)) => {
            errors.extend(err);
            stage
        }
        Err(panic) => std::panic::resume_unwind(panic),
    }
}
