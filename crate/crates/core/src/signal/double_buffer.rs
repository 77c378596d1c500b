//! Two-bank sample buffer shared by exactly one producer and one consumer.
//!
//! The producer fills the active bank while the consumer drains the other.
//! A full (or committed) bank is handed over only when the other bank has
//! been released by the consumer, so a bank is never written while it is
//! being drained.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use core::cell::UnsafeCell;
use core::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, AtomicUsize, Ordering};

use super::{SampleBlock, SignalError};

const WRITING: u8 = 0;
const READY: u8 = 1;
const DRAINING: u8 = 2;
const FREE: u8 = 3;

/// What the producer does when the other bank is still held by the consumer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverflowMode {
    /// Spin (up to `spin_limit` iterations) for the consumer to release the
    /// bank; drop only once the budget is exhausted.
    Lossless { spin_limit: u64 },
    /// Drop incoming samples immediately.
    DropNewest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferConfig {
    pub capacity_per_bank: usize,
    pub sample_rate_hz: f64,
    pub mode: OverflowMode,
}

impl BufferConfig {
    pub fn lossless(capacity_per_bank: usize, sample_rate_hz: f64) -> Self {
        Self {
            capacity_per_bank,
            sample_rate_hz,
            mode: OverflowMode::Lossless { spin_limit: 1 << 26 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestResult {
    pub accepted: usize,
    pub dropped: usize,
}

struct Bank {
    data: UnsafeCell<Box<[f32]>>,
    len: AtomicUsize,
    start: AtomicU64,
    state: AtomicU8,
}

struct Shared {
    banks: [Bank; 2],
    accepted: AtomicU64,
    dropped: AtomicU64,
    closed: AtomicBool,
}

// SAFETY: bank storage is only touched by the side that owns the bank
// according to its `state`: the producer while WRITING, the consumer while
// DRAINING. Ownership transfers use release/acquire on `state`.
unsafe impl Sync for Shared {}
unsafe impl Send for Shared {}

/// Create a connected producer/consumer pair.
pub fn double_buffer(cfg: BufferConfig) -> Result<(Producer, Consumer), SignalError> {
    if cfg.capacity_per_bank == 0 {
        return Err(SignalError::InvalidSpec("bank capacity must be at least 1"));
    }
    if !(cfg.sample_rate_hz.is_finite() && cfg.sample_rate_hz > 0.0) {
        return Err(SignalError::InvalidSampleRate(cfg.sample_rate_hz));
    }
    let bank = |state| Bank {
        data: UnsafeCell::new(vec![0.0f32; cfg.capacity_per_bank].into_boxed_slice()),
        len: AtomicUsize::new(0),
        start: AtomicU64::new(0),
        state: AtomicU8::new(state),
    };
    let shared = Arc::new(Shared {
        banks: [bank(WRITING), bank(FREE)],
        accepted: AtomicU64::new(0),
        dropped: AtomicU64::new(0),
        closed: AtomicBool::new(false),
    });
    let producer = Producer {
        shared: Arc::clone(&shared),
        cfg,
        active: 0,
        fill: 0,
        bank_start: 0,
        next_index: None,
    };
    let consumer = Consumer {
        shared,
        sample_rate_hz: cfg.sample_rate_hz,
    };
    Ok((producer, consumer))
}

pub struct Producer {
    shared: Arc<Shared>,
    cfg: BufferConfig,
    active: usize,
    fill: usize,
    bank_start: u64,
    next_index: Option<u64>,
}

impl Producer {
    /// Append a block to the active bank, handing banks over as they fill.
    pub fn push_block(&mut self, block: &SampleBlock) -> Result<IngestResult, SignalError> {
        if block.sample_rate_hz() != self.cfg.sample_rate_hz {
            return Err(SignalError::SampleRateMismatch {
                expected: self.cfg.sample_rate_hz,
                actual: block.sample_rate_hz(),
            });
        }
        if let Some(expected) = self.next_index {
            if expected != block.start_index() {
                return Err(SignalError::Discontinuity {
                    expected,
                    actual: block.start_index(),
                });
            }
        } else {
            self.bank_start = block.start_index();
        }
        self.next_index = Some(block.end_index());

        let capacity = self.cfg.capacity_per_bank;
        let mut result = IngestResult::default();
        let mut rest = block.samples();
        let mut index = block.start_index();
        while !rest.is_empty() {
            if self.fill == capacity && !self.swap(true) {
                result.dropped += rest.len();
                break;
            }
            if self.fill == 0 {
                self.bank_start = index;
            }
            let n = rest.len().min(capacity - self.fill);
            // SAFETY: the active bank is in state WRITING, owned by us.
            let bank = unsafe { &mut *self.shared.banks[self.active].data.get() };
            bank[self.fill..self.fill + n].copy_from_slice(&rest[..n]);
            self.fill += n;
            index += n as u64;
            rest = &rest[n..];
            result.accepted += n;
            if self.fill == capacity {
                // Opportunistic hand-over; a failure here is retried on the
                // next write.
                self.swap(false);
            }
        }
        self.shared.accepted.fetch_add(result.accepted as u64, Ordering::Relaxed);
        self.shared.dropped.fetch_add(result.dropped as u64, Ordering::Relaxed);
        Ok(result)
    }

    /// Publish a partially filled bank if the consumer has released the
    /// other one. Returns whether a hand-over happened.
    pub fn commit(&mut self) -> bool {
        self.fill > 0 && self.swap(false)
    }

    /// Publish whatever is buffered (waiting per the overflow mode) and mark
    /// the stream closed.
    pub fn finish(&mut self) -> IngestResult {
        let mut result = IngestResult::default();
        if self.fill > 0 && !self.swap(true) {
            result.dropped = self.fill;
            self.shared.dropped.fetch_add(self.fill as u64, Ordering::Relaxed);
            self.shared.accepted.fetch_sub(self.fill as u64, Ordering::Relaxed);
            self.fill = 0;
        }
        self.shared.closed.store(true, Ordering::Release);
        result
    }

    pub fn dropped_samples(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn accepted_samples(&self) -> u64 {
        self.shared.accepted.load(Ordering::Relaxed)
    }

    fn swap(&mut self, wait: bool) -> bool {
        let other = 1 - self.active;
        let mut spins = 0u64;
        loop {
            if self.shared.banks[other].state.load(Ordering::Acquire) == FREE {
                break;
            }
            let limit = match (wait, self.cfg.mode) {
                (true, OverflowMode::Lossless { spin_limit }) => spin_limit,
                _ => 0,
            };
            if spins >= limit {
                return false;
            }
            spins += 1;
            core::hint::spin_loop();
        }
        let bank = &self.shared.banks[self.active];
        bank.len.store(self.fill, Ordering::Relaxed);
        bank.start.store(self.bank_start, Ordering::Relaxed);
        bank.state.store(READY, Ordering::Release);
        self.shared.banks[other].state.store(WRITING, Ordering::Relaxed);
        self.active = other;
        self.bank_start += self.fill as u64;
        self.fill = 0;
        true
    }
}

impl Drop for Producer {
    fn drop(&mut self) {
        self.shared.closed.store(true, Ordering::Release);
    }
}

pub struct Consumer {
    shared: Arc<Shared>,
    sample_rate_hz: f64,
}

impl Consumer {
    /// Take the ready bank, if any, and copy it out as a block.
    pub fn drain(&mut self) -> Option<SampleBlock> {
        let mut block = None;
        let rate = self.sample_rate_hz;
        self.drain_with(|start, samples| {
            block = SampleBlock::new(start, rate, samples.to_vec()).ok();
        });
        block
    }

    /// Zero-copy variant of [`drain`](Self::drain): `f` sees the bank's
    /// start index and contents. Returns the number of samples drained.
    pub fn drain_with<F: FnOnce(u64, &[f32])>(&mut self, f: F) -> Option<usize> {
        for bank in &self.shared.banks {
            if bank
                .state
                .compare_exchange(READY, DRAINING, Ordering::Acquire, Ordering::Relaxed)
                .is_ok()
            {
                let len = bank.len.load(Ordering::Relaxed);
                let start = bank.start.load(Ordering::Relaxed);
                // SAFETY: the bank is DRAINING, owned by the consumer.
                let data = unsafe { &*bank.data.get() };
                f(start, &data[..len]);
                bank.state.store(FREE, Ordering::Release);
                return Some(len);
            }
        }
        None
    }

    /// True once the producer has finished and every bank has been drained.
    pub fn is_exhausted(&self) -> bool {
        self.shared.closed.load(Ordering::Acquire)
            && self
                .shared
                .banks
                .iter()
                .all(|b| b.state.load(Ordering::Acquire) != READY)
    }

    pub fn dropped_samples(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }
}

impl core::fmt::Debug for Producer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Producer")
            .field("active", &self.active)
            .field("fill", &self.fill)
            .field("capacity", &self.cfg.capacity_per_bank)
            .finish()
    }
}

impl core::fmt::Debug for Consumer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Consumer").field("sample_rate_hz", &self.sample_rate_hz).finish()
    }
}
