//! Logical and wall-clock time sources.
//!
//! Everything in the kernel reads time through [`Clock`], so the simulation
//! harness can substitute a virtual clock and keep runs reproducible.

use crate::ids::Timestamp;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

/// Monotonic time source in milliseconds.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Deterministic clock advanced explicitly by the simulation engine.
#[derive(Clone, Default)]
pub struct VirtualClock {
    millis: Arc<AtomicU64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn starting_at(ms: u64) -> Self {
        let clock = Self::new();
        clock.millis.store(ms, Ordering::Release);
        clock
    }

    /// Advance by `ms`; never goes backwards.
    pub fn advance(&self, ms: u64) {
        self.millis.fetch_add(ms, Ordering::AcqRel);
    }

    /// Jump to an absolute time. Ignored when `ms` is in the past.
    pub fn advance_to(&self, ms: u64) {
        self.millis.fetch_max(ms, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.millis.load(Ordering::Acquire))
    }
}

/// Wall-clock milliseconds since the clock was created. Used in service mode.
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.start.elapsed().as_millis() as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_advances() {
        let clock = VirtualClock::new();
        assert_eq!(clock.now(), Timestamp(0));
        clock.advance(250);
        assert_eq!(clock.now(), Timestamp(250));
        clock.advance_to(1000);
        assert_eq!(clock.now(), Timestamp(1000));
        clock.advance_to(500);
        assert_eq!(clock.now(), Timestamp(1000), "must not move backwards");
    }

    #[test]
    fn system_clock_is_monotonic() {
        let clock = SystemClock::new();
        let a = clock.now();
        let b = clock.now();
        assert!(b >= a);
    }
}
