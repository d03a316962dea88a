//! Backend recommendation.

use std::sync::atomic::{AtomicUsize, Ordering};

use halo_core::config::ROUND_ROBIN;
use halo_core::{HaloError, Result};

/// A cursor cycling through candidates in registration order.
#[derive(Debug, Default)]
pub struct RoundRobin {
    next: AtomicUsize,
}

impl RoundRobin {
    pub fn new() -> RoundRobin {
        RoundRobin::default()
    }

    /// Index of the next candidate among `n`.
    pub fn next_index(&self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(HaloError::NoResource("no candidate backends".into()));
        }
        Ok(self.next.fetch_add(1, Ordering::Relaxed) % n)
    }

    /// Picks the next candidate under `strategy`.
    pub fn recommend<'a, T>(&self, candidates: &'a [T], strategy: &str) -> Result<&'a T> {
        if strategy != ROUND_ROBIN {
            return Err(HaloError::BadArgument(format!(
                "unknown placement strategy {strategy:?} (only {ROUND_ROBIN:?} is supported)"
            )));
        }
        Ok(&candidates[self.next_index(candidates.len())?])
    }
}

/// Stateless convenience over a caller-held cursor.
pub fn recommend_backend<'a>(rr: &RoundRobin, candidates: &'a [String], strategy: &str) -> Result<&'a str> {
    rr.recommend(candidates, strategy).map(String::as_str)
}
