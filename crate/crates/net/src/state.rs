//! Shared service state: atomically swappable model and index slots plus
//! contention-safe counters.
//!
//! A slot holds an `Arc` to an immutable (version, value) pair. Readers
//! clone the `Arc` once per request, so every request computes against
//! exactly one version even while a writer swaps the slot mid-flight —
//! this is what makes hot reloads atomic from the request's point of view.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use esbench_core::CoreError;
use parking_lot::RwLock;

/// An immutable value paired with its published version.
#[derive(Debug)]
pub struct Versioned<T> {
    pub version: u64,
    pub value: T,
}

/// Atomically swappable reference to a versioned value.
#[derive(Debug)]
pub struct Slot<T> {
    inner: RwLock<Arc<Versioned<T>>>,
}

impl<T> Slot<T> {
    pub fn new(version: u64, value: T) -> Self {
        Slot {
            inner: RwLock::new(Arc::new(Versioned { version, value })),
        }
    }

    /// The current (version, value) pair. The returned `Arc` stays valid
    /// and unchanged regardless of concurrent installs.
    pub fn snapshot(&self) -> Arc<Versioned<T>> {
        self.inner.read().clone()
    }

    pub fn version(&self) -> u64 {
        self.inner.read().version
    }

    /// Install `value` as `version`. The version comparison happens inside
    /// the write critical section, so two racing installs resolve to the
    /// higher version with the lower one rejected as stale.
    pub fn try_install(&self, version: u64, value: T) -> Result<(), CoreError> {
        let mut guard = self.inner.write();
        if version <= guard.version {
            return Err(CoreError::StaleVersion {
                offered: version,
                current: guard.version,
            });
        }
        *guard = Arc::new(Versioned { version, value });
        Ok(())
    }

    /// Unconditional swap, keeping the current version number. Used for
    /// index snapshots, which are content-addressed rather than versioned.
    pub fn replace(&self, value: T) {
        let mut guard = self.inner.write();
        let version = guard.version;
        *guard = Arc::new(Versioned { version, value });
    }
}

/// Per-tier probe counters for the searcher.
#[derive(Debug, Default)]
pub struct TierProbeCounters {
    pub high: AtomicU64,
    pub medium: AtomicU64,
    pub low: AtomicU64,
}

impl TierProbeCounters {
    pub fn record(&self, probes: esbench_core::index::TierProbes) {
        if probes.high {
            self.high.fetch_add(1, Ordering::Relaxed);
        }
        if probes.medium {
            self.medium.fetch_add(1, Ordering::Relaxed);
        }
        if probes.low {
            self.low.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn counts(&self) -> crate::wire::TierCounts {
        crate::wire::TierCounts {
            high: self.high.load(Ordering::Relaxed),
            medium: self.medium.load(Ordering::Relaxed),
            low: self.low.load(Ordering::Relaxed),
        }
    }
}
