//! Per-thread high-water-mark accounting for numeric tensor storage.
//!
//! Every [`Matrix`](super::Matrix) reports its buffer size on creation and
//! release. Editors are measured by resetting the peak to the live byte count,
//! running the edit, and reading the peak back.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes of tensor storage currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// Scoped measurement of tensor allocations made on the current thread.
#[derive(Debug)]
pub struct PeakScope {
    baseline: usize,
}

impl PeakScope {
    /// Starts a scope: the peak is reset to the current live count.
    pub fn start() -> Self {
        let baseline = live_bytes();
        PEAK.with(|peak| peak.set(baseline));
        Self { baseline }
    }

    /// Bytes allocated above the scope's starting point at the high-water mark.
    pub fn peak_bytes(&self) -> usize {
        PEAK.with(Cell::get).saturating_sub(self.baseline)
    }
}
