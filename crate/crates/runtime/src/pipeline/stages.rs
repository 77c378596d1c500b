//! Pipeline stages. Each is polled: `Progress` after handling one item,
//! `Idle` when nothing is ready, `Done` once end of stream has passed
//! through it. The same stages run on their own threads in realtime mode
//! and are pumped from a single thread in the lockstep modes.

use std::sync::Arc;
use std::thread::Thread;
use std::time::Duration;

use milltwin_core::control::{decide, encode_nc, wear_check, ControllerState, DecisionPolicy, MachineCommand};
use milltwin_core::features::{extract_features, FeatureConfig, FeatureVector};
use milltwin_core::model::Mlp;
use milltwin_core::plant::Plant;
use milltwin_core::signal::{Consumer, Producer, SampleBlock, Segmenter, Window};

use super::queue::{Queued, WindowQueue};
use super::report::{AppliedCommand, DecisionRecord, LatencyRecord, PredictionRecord};
use super::PipelineError;
use crate::broker::{topics, Broker, Delivery, Recv, Subscription};
use crate::clock::monotonic_ns;
use crate::messages::{
    decode_command, decode_features, decode_prediction, decode_samples, encode_command, encode_features,
    encode_prediction, encode_samples, CommandMsg, FeatureMsg, PredictionMsg, Timings,
};

const WAIT: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Poll {
    Progress,
    Idle,
    Done,
}

pub(crate) trait Stage {
    fn poll(&mut self) -> Result<Poll, PipelineError>;
    /// Block briefly until more work may be ready.
    fn wait(&self);
    /// Release downstream stages; called once when the stage stops.
    fn shutdown(&mut self) {}
}

fn end_of_stream(broker: &Broker, topic: &str) -> Result<(), PipelineError> {
    broker.publish(topic, Vec::new())?;
    Ok(())
}

pub(crate) enum SourceKind {
    Plant(Box<Plant>),
    Recording { sample_rate_hz: f64, samples: Vec<f32>, cursor: usize },
}

/// Publishes sample blocks and applies commands coming back.
pub(crate) struct SourceStage {
    pub kind: SourceKind,
    broker: Broker,
    commands: Subscription,
    block_samples: usize,
    pub recording: Option<Vec<f32>>,
    pub emitted: u64,
    pub applied: Vec<AppliedCommand>,
    pub lost_commands: u64,
    ended: bool,
    pub commands_done: bool,
}

impl SourceStage {
    pub fn new(kind: SourceKind, broker: Broker, commands: Subscription, block_samples: usize, record: bool) -> Self {
        Self {
            kind,
            broker,
            commands,
            block_samples,
            recording: record.then(Vec::new),
            emitted: 0,
            applied: Vec::new(),
            lost_commands: 0,
            ended: false,
            commands_done: false,
        }
    }

    /// Apply every command published so far.
    pub fn poll_commands(&mut self) -> Result<(), PipelineError> {
        loop {
            match self.commands.try_recv() {
                Recv::Delivery(d) => self.handle(d)?,
                Recv::Empty | Recv::Closed => return Ok(()),
            }
        }
    }

    /// Apply commands until the decision stage signals end of stream.
    pub fn drain_commands(&mut self) -> Result<(), PipelineError> {
        while !self.commands_done {
            match self.commands.recv_timeout(Duration::from_millis(50)) {
                Recv::Delivery(d) => self.handle(d)?,
                Recv::Empty => {}
                Recv::Closed => break,
            }
        }
        Ok(())
    }

    fn handle(&mut self, d: Delivery) -> Result<(), PipelineError> {
        let m = match d {
            Delivery::Message(m) => m,
            Delivery::Gap { first_seq, last_seq } => {
                self.lost_commands += last_seq - first_seq + 1;
                return Ok(());
            }
        };
        if m.payload.is_empty() {
            self.commands_done = true;
            return Ok(());
        }
        let msg = decode_command(&m.payload)?;
        let (applied_at_sample, note) = match &mut self.kind {
            SourceKind::Plant(_) if self.ended => (None, Some("arrived after the last sample".to_owned())),
            SourceKind::Plant(plant) => {
                let at = plant.cursor();
                match plant.apply_command(&MachineCommand::at(msg.kind, msg.issue_timestamp_ns)) {
                    Ok(()) => (Some(at), None),
                    Err(e) => (None, Some(format!("rejected: {e}"))),
                }
            }
            SourceKind::Recording { .. } => (None, Some("recorded source, not applied".to_owned())),
        };
        self.applied.push(AppliedCommand {
            window: msg.window_seq,
            nc: encode_nc(&msg.kind),
            kind: msg.kind.name(),
            applied_at_sample,
            note,
        });
        Ok(())
    }

    /// Publish the next block; at the end publish end of stream and
    /// return false.
    pub fn emit_block(&mut self) -> Result<bool, PipelineError> {
        if self.ended {
            return Ok(false);
        }
        let block = match &mut self.kind {
            SourceKind::Plant(plant) => plant.generate(self.block_samples).map(|g| g.block),
            SourceKind::Recording {
                sample_rate_hz,
                samples,
                cursor,
            } => {
                let n = self.block_samples.min(samples.len() - *cursor);
                if n == 0 {
                    None
                } else {
                    let b = SampleBlock::new(*cursor as u64, *sample_rate_hz, samples[*cursor..*cursor + n].to_vec())?;
                    *cursor += n;
                    Some(b)
                }
            }
        };
        match block {
            Some(b) => {
                if let Some(rec) = &mut self.recording {
                    rec.extend_from_slice(b.samples());
                }
                self.emitted += b.len() as u64;
                self.broker.publish(topics::SAMPLES, encode_samples(&b))?;
                Ok(true)
            }
            None => {
                self.ended = true;
                end_of_stream(&self.broker, topics::SAMPLES)?;
                Ok(false)
            }
        }
    }
}

/// Broker → double buffer.
pub(crate) struct IngestStage {
    sub: Subscription,
    producer: Producer,
    pub window_thread: Option<Thread>,
    finished: bool,
    pending: bool,
}

impl IngestStage {
    pub fn new(sub: Subscription, producer: Producer) -> Self {
        Self {
            sub,
            producer,
            window_thread: None,
            finished: false,
            pending: false,
        }
    }

    pub fn accepted(&self) -> u64 {
        self.producer.accepted_samples()
    }

    pub fn dropped(&self) -> u64 {
        self.producer.dropped_samples()
    }

    fn wake(&self) {
        if let Some(t) = &self.window_thread {
            t.unpark();
        }
    }

    fn finish(&mut self) {
        if !self.finished {
            self.finished = true;
            self.producer.finish();
            self.wake();
        }
    }
}

impl Stage for IngestStage {
    fn poll(&mut self) -> Result<Poll, PipelineError> {
        match self.sub.try_recv() {
            Recv::Delivery(Delivery::Message(m)) if m.payload.is_empty() => {
                self.finish();
                Ok(Poll::Done)
            }
            Recv::Delivery(Delivery::Message(m)) => {
                let block = decode_samples(&m.payload)?;
                self.producer.push_block(&block)?;
                self.pending = !self.producer.commit();
                self.wake();
                Ok(Poll::Progress)
            }
            Recv::Delivery(Delivery::Gap { first_seq, last_seq }) => Err(PipelineError::SampleGap { first_seq, last_seq }),
            Recv::Empty => {
                if self.pending && self.producer.commit() {
                    self.pending = false;
                    self.wake();
                    return Ok(Poll::Progress);
                }
                Ok(Poll::Idle)
            }
            Recv::Closed => {
                self.finish();
                Ok(Poll::Done)
            }
        }
    }

    fn wait(&self) {
        if self.pending {
            std::thread::sleep(Duration::from_micros(100));
        } else {
            self.sub.wait(WAIT);
        }
    }

    fn shutdown(&mut self) {
        self.finish();
    }
}

/// Double buffer → segmenter → bounded window queue.
pub(crate) struct WindowStage {
    consumer: Consumer,
    segmenter: Segmenter,
    queue: Arc<WindowQueue>,
    scratch: Vec<Window>,
    pub closed: u64,
    pub drained: u64,
}

impl WindowStage {
    pub fn new(consumer: Consumer, segmenter: Segmenter, queue: Arc<WindowQueue>) -> Self {
        Self {
            consumer,
            segmenter,
            queue,
            scratch: Vec::new(),
            closed: 0,
            drained: 0,
        }
    }

    fn enqueue(&mut self, window: Window) {
        self.queue.push(Queued {
            seq: self.closed,
            window,
        });
        self.closed += 1;
    }
}

impl Stage for WindowStage {
    fn poll(&mut self) -> Result<Poll, PipelineError> {
        if let Some(block) = self.consumer.drain() {
            self.drained += block.len() as u64;
            self.scratch.clear();
            let mut out = std::mem::take(&mut self.scratch);
            let pushed = self.segmenter.push(&block, monotonic_ns(), &mut out);
            for w in out.drain(..) {
                self.enqueue(w);
            }
            self.scratch = out;
            pushed?;
            return Ok(Poll::Progress);
        }
        if !self.consumer.is_exhausted() {
            return Ok(Poll::Idle);
        }
        if let Some(w) = self.segmenter.flush(monotonic_ns()) {
            self.enqueue(w);
        }
        self.queue.close();
        Ok(Poll::Done)
    }

    fn wait(&self) {
        std::thread::park_timeout(WAIT);
    }

    fn shutdown(&mut self) {
        self.queue.close();
    }
}

/// Window queue → features topic.
pub(crate) struct FeatureStage {
    queue: Arc<WindowQueue>,
    broker: Broker,
    cfg: FeatureConfig,
    pub rows: Vec<FeatureVector>,
}

impl FeatureStage {
    pub fn new(queue: Arc<WindowQueue>, broker: Broker, cfg: FeatureConfig) -> Self {
        Self {
            queue,
            broker,
            cfg,
            rows: Vec::new(),
        }
    }
}

impl Stage for FeatureStage {
    fn poll(&mut self) -> Result<Poll, PipelineError> {
        let Some(Queued { seq, window }) = self.queue.try_pop() else {
            if self.queue.is_finished() {
                end_of_stream(&self.broker, topics::FEATURES)?;
                return Ok(Poll::Done);
            }
            return Ok(Poll::Idle);
        };
        let dequeued = monotonic_ns();
        let features = extract_features(&window, &self.cfg)?;
        let done = monotonic_ns();
        let close = window.close_timestamp_ns();
        let msg = FeatureMsg {
            window_seq: seq,
            start_index: window.start_index(),
            window_len: window.len() as u32,
            sample_rate_hz: window.sample_rate_hz(),
            timings: Timings {
                close_ns: close,
                queue_ns: dequeued.saturating_sub(close),
                feature_ns: done - dequeued,
                inference_ns: 0,
                transport_ns: 0,
            },
            features,
        };
        self.broker.publish(topics::FEATURES, encode_features(&msg))?;
        self.rows.push(features);
        Ok(Poll::Progress)
    }

    fn wait(&self) {
        self.queue.wait(WAIT);
    }
}

/// Features topic → prediction topic.
pub(crate) struct InferenceStage {
    sub: Subscription,
    broker: Broker,
    model: Arc<Mlp>,
    threshold: f64,
    pub predictions: Vec<PredictionRecord>,
    pub lost_windows: u64,
}

impl InferenceStage {
    pub fn new(sub: Subscription, broker: Broker, model: Arc<Mlp>, policy: &DecisionPolicy) -> Self {
        Self {
            sub,
            broker,
            model,
            threshold: policy.contact_probability_threshold,
            predictions: Vec::new(),
            lost_windows: 0,
        }
    }
}

impl Stage for InferenceStage {
    fn poll(&mut self) -> Result<Poll, PipelineError> {
        let m = match self.sub.try_recv() {
            Recv::Delivery(Delivery::Message(m)) => m,
            Recv::Delivery(Delivery::Gap { first_seq, last_seq }) => {
                self.lost_windows += last_seq - first_seq + 1;
                return Ok(Poll::Progress);
            }
            Recv::Empty => return Ok(Poll::Idle),
            Recv::Closed => return Ok(Poll::Done),
        };
        if m.payload.is_empty() {
            end_of_stream(&self.broker, topics::PREDICTION)?;
            return Ok(Poll::Done);
        }
        let received = monotonic_ns();
        let f = decode_features(&m.payload)?;
        let peak = f.features.peak_amplitude_volts;
        let t0 = monotonic_ns();
        let p = self.model.forward(peak);
        let t1 = monotonic_ns();
        let mut timings = f.timings;
        timings.inference_ns = t1 - t0;
        timings.transport_ns += received.saturating_sub(m.publish_timestamp_ns);
        let msg = PredictionMsg {
            window_seq: f.window_seq,
            start_index: f.start_index,
            window_s: f64::from(f.window_len) / f.sample_rate_hz,
            timings,
            peak_amplitude_volts: peak,
            p_contact: p,
        };
        self.broker.publish(topics::PREDICTION, encode_prediction(&msg))?;
        self.predictions.push(PredictionRecord {
            window: f.window_seq,
            start_index: f.start_index,
            peak_amplitude_volts: peak,
            p_contact: p,
            contact: p >= self.threshold,
        });
        Ok(Poll::Progress)
    }

    fn wait(&self) {
        self.sub.wait(WAIT);
    }
}

/// Prediction topic → command topic.
pub(crate) struct DecisionStage {
    sub: Subscription,
    broker: Broker,
    policy: DecisionPolicy,
    state: ControllerState,
    tool_life_s: Option<f64>,
    contact_s: f64,
    last_window: Option<u64>,
    pub records: Vec<LatencyRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub lost_windows: u64,
}

impl DecisionStage {
    pub fn new(sub: Subscription, broker: Broker, policy: DecisionPolicy, tool_life_s: Option<f64>) -> Self {
        Self {
            sub,
            broker,
            policy,
            state: ControllerState::default(),
            tool_life_s,
            contact_s: 0.0,
            last_window: None,
            records: Vec::new(),
            decisions: Vec::new(),
            lost_windows: 0,
        }
    }
}

impl Stage for DecisionStage {
    fn poll(&mut self) -> Result<Poll, PipelineError> {
        let m = match self.sub.try_recv() {
            Recv::Delivery(Delivery::Message(m)) => m,
            Recv::Delivery(Delivery::Gap { first_seq, last_seq }) => {
                self.lost_windows += last_seq - first_seq + 1;
                return Ok(Poll::Progress);
            }
            Recv::Empty => return Ok(Poll::Idle),
            Recv::Closed => return Ok(Poll::Done),
        };
        if m.payload.is_empty() {
            end_of_stream(&self.broker, topics::COMMANDS)?;
            return Ok(Poll::Done);
        }
        let received = monotonic_ns();
        let pred = decode_prediction(&m.payload)?;
        if let Some(last) = self.last_window {
            if pred.window_seq <= last {
                return Err(PipelineError::OutOfOrder {
                    window: pred.window_seq,
                    after: last,
                });
            }
        }
        self.last_window = Some(pred.window_seq);

        let t0 = monotonic_ns();
        let contact = self.policy.classify(pred.p_contact);
        let (state, switch) = decide(&self.state, pred.p_contact, &self.policy, t0);
        if contact {
            self.contact_s += pred.window_s;
        }
        let (state, tool) = match self.tool_life_s {
            Some(life) => wear_check(&state, self.contact_s / life, &self.policy, t0),
            None => (state, None),
        };
        self.state = state;
        let decided = monotonic_ns();

        let mut published = None;
        let mut nc = Vec::new();
        for cmd in [switch, tool].into_iter().flatten() {
            let msg = CommandMsg {
                window_seq: pred.window_seq,
                issue_timestamp_ns: cmd.issue_timestamp_ns,
                kind: cmd.kind,
            };
            published = Some(self.broker.publish(topics::COMMANDS, encode_command(&msg))?.timestamp_ns);
            nc.push(encode_nc(&cmd.kind));
        }
        let end = published.unwrap_or(decided);
        let t = pred.timings;
        self.records.push(LatencyRecord {
            window: pred.window_seq,
            close_timestamp_ns: t.close_ns,
            accumulation_ns: (pred.window_s * 1e9).round() as u64,
            queue_ns: t.queue_ns,
            feature_ns: t.feature_ns,
            inference_ns: t.inference_ns,
            decision_ns: decided - t0,
            transport_ns: t.transport_ns + received.saturating_sub(m.publish_timestamp_ns),
            end_to_end_ns: end.saturating_sub(t.close_ns),
            command_issued: published.is_some(),
        });
        self.decisions.push(DecisionRecord {
            window: pred.window_seq,
            timestamp_ns: t0,
            p_contact: pred.p_contact,
            contact,
            believed_contact: self.state.believed_contact,
            commands: nc,
        });
        Ok(Poll::Progress)
    }

    fn wait(&self) {
        self.sub.wait(WAIT);
    }
}
