use std::collections::VecDeque;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use milltwin_core::signal::Window;

/// A closed window and its position in the window sequence.
#[derive(Debug, Clone)]
pub struct Queued {
    pub seq: u64,
    pub window: Window,
}

#[derive(Debug, Default)]
struct State {
    items: VecDeque<Queued>,
    dropped: u64,
    closed: bool,
}

/// Bounded hand-off from segmentation to feature extraction. When full,
/// the oldest waiting window is discarded: a fresh prediction is worth
/// more to the controller than a stale one.
#[derive(Debug)]
pub struct WindowQueue {
    depth: usize,
    state: Mutex<State>,
    ready: Condvar,
}

impl WindowQueue {
    pub fn new(depth: usize) -> Self {
        Self {
            depth: depth.max(1),
            state: Mutex::new(State::default()),
            ready: Condvar::new(),
        }
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Enqueue; returns the window evicted to make room, if any.
    pub fn push(&self, item: Queued) -> Option<Queued> {
        let mut s = self.lock();
        let evicted = if s.items.len() == self.depth {
            s.dropped += 1;
            s.items.pop_front()
        } else {
            None
        };
        s.items.push_back(item);
        drop(s);
        self.ready.notify_one();
        evicted
    }

    pub fn try_pop(&self) -> Option<Queued> {
        self.lock().items.pop_front()
    }

    /// True once closed and drained.
    pub fn is_finished(&self) -> bool {
        let s = self.lock();
        s.closed && s.items.is_empty()
    }

    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }

    pub fn dropped(&self) -> u64 {
        self.lock().dropped
    }

    pub fn wait(&self, timeout: Duration) {
        let s = self.lock();
        if s.items.is_empty() && !s.closed {
            let _ = self.ready.wait_timeout(s, timeout);
        }
    }
}
