//! In-process topic broker.
//!
//! Each topic is a bounded log of messages with consecutive sequence
//! numbers starting at 1. Subscribers hold a cursor into the log, so
//! publishing never waits on a slow reader; a reader that falls behind the
//! retention window receives a [`Delivery::Gap`] naming the sequence
//! numbers it missed.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::clock::monotonic_ns;

pub const DEFAULT_RETENTION: usize = 4_096;

/// Canonical pipeline topics.
pub mod topics {
    pub const SAMPLES: &str = "ae/samples";
    pub const FEATURES: &str = "dt/features";
    pub const PREDICTION: &str = "dt/prediction";
    pub const COMMANDS: &str = "mc/commands";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BrokerError {
    #[error("topic must be 1..=255 bytes, got {0}")]
    InvalidTopic(usize),
    #[error("broker is closed")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartFrom {
    /// Everything still retained, then new messages. Messages already
    /// evicted are reported as a gap.
    Earliest,
    /// Only messages published after subscribing.
    Latest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub topic: Arc<str>,
    pub publish_timestamp_ns: u64,
    pub payload: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Message(Message),
    /// Messages `first_seq..=last_seq` were evicted before this subscriber
    /// read them.
    Gap { first_seq: u64, last_seq: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Published {
    pub seq: u64,
    pub timestamp_ns: u64,
}

#[derive(Debug)]
struct Log {
    messages: VecDeque<Message>,
    next_seq: u64,
    closed: bool,
}

#[derive(Debug)]
struct TopicLog {
    name: Arc<str>,
    retention: usize,
    state: Mutex<Log>,
    ready: Condvar,
}

impl TopicLog {
    fn lock(&self) -> MutexGuard<'_, Log> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
struct Inner {
    retention: usize,
    topics: Mutex<HashMap<Arc<str>, Arc<TopicLog>>>,
    closed: Mutex<bool>,
}

/// Cloneable handle to a shared broker.
#[derive(Debug, Clone)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION)
    }
}

impl Broker {
    /// `retention` is the number of messages each topic keeps (at least 1).
    pub fn new(retention: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                retention: retention.max(1),
                topics: Mutex::new(HashMap::new()),
                closed: Mutex::new(false),
            }),
        }
    }

    pub fn retention(&self) -> usize {
        self.inner.retention
    }

    fn topic(&self, name: &str) -> Result<Arc<TopicLog>, BrokerError> {
        if name.is_empty() || name.len() > milltwin_core::frame::MAX_TOPIC_LEN {
            return Err(BrokerError::InvalidTopic(name.len()));
        }
        let mut topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = topics.get(name) {
            return Ok(Arc::clone(t));
        }
        let closed = *self.inner.closed.lock().unwrap_or_else(|e| e.into_inner());
        let name: Arc<str> = Arc::from(name);
        let log = Arc::new(TopicLog {
            name: Arc::clone(&name),
            retention: self.inner.retention,
            state: Mutex::new(Log {
                messages: VecDeque::new(),
                next_seq: 1,
                closed,
            }),
            ready: Condvar::new(),
        });
        topics.insert(name, Arc::clone(&log));
        Ok(log)
    }

    /// Append to `topic` (created on first use), stamping the monotonic
    /// time of append.
    pub fn publish(&self, topic: &str, payload: impl Into<Arc<[u8]>>) -> Result<Published, BrokerError> {
        let log = self.topic(topic)?;
        let payload = payload.into();
        let mut state = log.lock();
        if state.closed {
            return Err(BrokerError::Closed);
        }
        let seq = state.next_seq;
        state.next_seq += 1;
        let timestamp_ns = monotonic_ns();
        if state.messages.len() == log.retention {
            state.messages.pop_front();
        }
        state.messages.push_back(Message {
            seq,
            topic: Arc::clone(&log.name),
            publish_timestamp_ns: timestamp_ns,
            payload,
        });
        drop(state);
        log.ready.notify_all();
        Ok(Published { seq, timestamp_ns })
    }

    pub fn subscribe(&self, topic: &str, from: StartFrom) -> Result<Subscription, BrokerError> {
        let log = self.topic(topic)?;
        let next = match from {
            StartFrom::Earliest => 1,
            StartFrom::Latest => log.lock().next_seq,
        };
        Ok(Subscription { log, next })
    }

    /// Refuse further publishes and wake every blocked reader. Readers
    /// still drain what is retained.
    pub fn close(&self) {
        *self.inner.closed.lock().unwrap_or_else(|e| e.into_inner()) = true;
        let topics = self.inner.topics.lock().unwrap_or_else(|e| e.into_inner());
        for log in topics.values() {
            log.lock().closed = true;
            log.ready.notify_all();
        }
    }
}

/// A single reader's cursor into one topic.
#[derive(Debug)]
pub struct Subscription {
    log: Arc<TopicLog>,
    next: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recv {
    Delivery(Delivery),
    Empty,
    Closed,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.log.name
    }

    /// Sequence number this subscriber will read next.
    pub fn cursor(&self) -> u64 {
        self.next
    }

    fn take(&mut self, log: &Log) -> Recv {
        let oldest = log.messages.front().map_or(log.next_seq, |m| m.seq);
        if self.next < oldest {
            let gap = Delivery::Gap {
                first_seq: self.next,
                last_seq: oldest - 1,
            };
            self.next = oldest;
            return Recv::Delivery(gap);
        }
        if self.next < log.next_seq {
            let msg = log.messages[(self.next - oldest) as usize].clone();
            self.next += 1;
            return Recv::Delivery(Delivery::Message(msg));
        }
        if log.closed {
            Recv::Closed
        } else {
            Recv::Empty
        }
    }

    pub fn try_recv(&mut self) -> Recv {
        let log = Arc::clone(&self.log);
        let state = log.lock();
        self.take(&state)
    }

    /// Block up to `timeout` for the next delivery.
    pub fn recv_timeout(&mut self, timeout: Duration) -> Recv {
        let log = Arc::clone(&self.log);
        let deadline = Instant::now() + timeout;
        let mut state = log.lock();
        loop {
            match self.take(&state) {
                Recv::Empty => {}
                other => return other,
            }
            let now = Instant::now();
            if now >= deadline {
                return Recv::Empty;
            }
            state = log.ready.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }

    /// Block until a delivery arrives; `None` once the broker is closed and
    /// everything retained has been read.
    pub fn recv(&mut self) -> Option<Delivery> {
        loop {
            match self.recv_timeout(Duration::from_millis(100)) {
                Recv::Delivery(d) => return Some(d),
                Recv::Closed => return None,
                Recv::Empty => {}
            }
        }
    }

    /// Block until something is readable, without consuming it.
    pub fn wait(&self, timeout: Duration) {
        let deadline = Instant::now() + timeout;
        let mut state = self.log.lock();
        loop {
            let oldest = state.messages.front().map_or(state.next_seq, |m| m.seq);
            if self.next < oldest || self.next < state.next_seq || state.closed {
                return;
            }
            let now = Instant::now();
            if now >= deadline {
                return;
            }
            state = self.log.ready.wait_timeout(state, deadline - now).unwrap_or_else(|e| e.into_inner()).0;
        }
    }
}
