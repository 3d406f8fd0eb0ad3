//! Wall and virtual clocks. Timestamps are milliseconds since the Unix epoch.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
    fn sleep(&self, d: Duration);
    /// An independent clock for a concurrent worker. Virtual clocks start the
    /// fork at their current reading so forked timelines stay deterministic.
    fn fork(&self) -> Box<dyn Clock>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }

    fn fork(&self) -> Box<dyn Clock> {
        Box::new(SystemClock)
    }
}

/// A clock that only moves when slept on. Used for offline corpora and tests.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn starting_at(ms: u64) -> Self {
        VirtualClock {
            now: AtomicU64::new(ms),
        }
    }

    pub fn advance(&self, d: Duration) {
        self.now.fetch_add(d.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep(&self, d: Duration) {
        self.advance(d)
    }

    fn fork(&self) -> Box<dyn Clock> {
        Box::new(VirtualClock::starting_at(self.now_ms()))
    }
}
