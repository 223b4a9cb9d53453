//! Logical accounting of activation memory.
//!
//! Every buffer a [`Tape`](crate::Tape) retains (op outputs, saved
//! statistics, gradient buffers during backward) is reserved here first. The
//! counter is exact and deterministic, unlike querying the operating system,
//! and an optional budget turns "out of memory" into a recoverable
//! [`Error::Feasibility`].

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocEvent {
    pub op: &'static str,
    /// Positive for a reservation, negative for a release.
    pub delta: i64,
}

#[derive(Clone, Debug, Default)]
pub struct MemoryTracker {
    live: usize,
    peak: usize,
    budget: Option<usize>,
    log: Option<Vec<AllocEvent>>,
}

impl MemoryTracker {
    pub fn new(budget: Option<usize>) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }

    /// Keeps a per-op allocation log so the peak can be recomputed offline.
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn reserve(&mut self, op: &'static str, bytes: usize) -> Result<()> {
        if let Some(budget) = self.budget {
            if self.live + bytes > budget {
                return Err(Error::Feasibility {
                    op,
                    requested: bytes,
                    live: self.live,
                    budget,
                });
            }
        }
        self.live += bytes;
        self.peak = self.peak.max(self.live);
        if let Some(log) = &mut self.log {
            log.push(AllocEvent {
                op,
                delta: bytes as i64,
            });
        }
        Ok(())
    }

    pub fn release(&mut self, op: &'static str, bytes: usize) {
        debug_assert!(bytes <= self.live);
        self.live -= bytes;
        if let Some(log) = &mut self.log {
            log.push(AllocEvent {
                op,
                delta: -(bytes as i64),
            });
        }
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    pub fn log(&self) -> Option<&[AllocEvent]> {
        self.log.as_deref()
    }
}

/// Recomputes the peak from an allocation log.
pub fn replay_peak(events: &[AllocEvent]) -> usize {
    let mut live = 0i64;
    let mut peak = 0i64;
    for e in events {
        live += e.delta;
        peak = peak.max(live);
    }
    peak as usize
}
