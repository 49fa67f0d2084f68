//! Live-allocation ledger.
//!
//! Every tensor registers its element count here on construction and releases
//! it on drop, so the ledger's live/peak counters reflect the actual
//! activation footprint of whatever schedule is executing. Parameter-class
//! allocations (model weights, their gradients, optimizer moments) are
//! tracked on a separate counter so activation peaks stay comparable across
//! network depths. Convolution executions report themselves as forward or
//! backward operator invocations.
//!
//! A ledger can be installed as the current ledger for the calling thread
//! with [`MemoryLedger::enter`]; tensors allocated while the scope guard is
//! alive report into it. Without a scope, allocations report into a shared
//! process-wide default. Each counter is atomic, so one ledger may be shared
//! across threads, while per-thread scopes keep concurrent training steps
//! from polluting each other's peaks.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

/// Which accounting bucket an allocation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocClass {
    /// Activations, gradients w.r.t. activations, cached intermediates.
    Activation,
    /// Model parameters, parameter gradients, optimizer state.
    Parameter,
}

#[derive(Debug, Default)]
struct LedgerInner {
    live: AtomicU64,
    peak: AtomicU64,
    param_live: AtomicU64,
    fwd_ops: AtomicU64,
    bwd_ops: AtomicU64,
}

/// Shared handle to one set of allocation counters.
#[derive(Debug, Clone, Default)]
pub struct MemoryLedger {
    inner: Arc<LedgerInner>,
}

/// Point-in-time copy of the counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct LedgerSnapshot {
    /// Elements currently held by live activation-class tensors.
    pub live_elements: u64,
    /// Running maximum of `live_elements`.
    pub peak_elements: u64,
    /// Elements currently held by parameter-class tensors.
    pub parameter_elements: u64,
    /// Convolution forward executions observed so far.
    pub fwd_op_count: u64,
    /// Convolution backward executions observed so far.
    pub bwd_op_count: u64,
}

thread_local! {
    static CURRENT: RefCell<Vec<MemoryLedger>> = const { RefCell::new(Vec::new()) };
}

static GLOBAL: OnceLock<MemoryLedger> = OnceLock::new();

impl MemoryLedger {
    /// Fresh ledger with all counters at zero.
    pub fn new() -> Self {
        Self::default()
    }

    /// The process-wide default ledger.
    pub fn global() -> &'static MemoryLedger {
        GLOBAL.get_or_init(MemoryLedger::new)
    }

    /// The ledger allocations on this thread currently report into.
    pub fn current() -> MemoryLedger {
        CURRENT.with(|stack| {
            stack
                .borrow()
                .last()
                .cloned()
                .unwrap_or_else(|| MemoryLedger::global().clone())
        })
    }

    /// Install `self` as the current ledger for this thread until the
    /// returned guard is dropped. Scopes nest.
    pub fn enter(&self) -> LedgerScope {
        CURRENT.with(|stack| stack.borrow_mut().push(self.clone()));
        LedgerScope { _private: () }
    }

    /// Consistent copy of the counters. Exact for single-threaded use of the
    /// ledger; with concurrent writers each counter is individually atomic.
    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            live_elements: self.inner.live.load(Ordering::SeqCst),
            peak_elements: self.inner.peak.load(Ordering::SeqCst),
            parameter_elements: self.inner.param_live.load(Ordering::SeqCst),
            fwd_op_count: self.inner.fwd_ops.load(Ordering::SeqCst),
            bwd_op_count: self.inner.bwd_ops.load(Ordering::SeqCst),
        }
    }

    pub(crate) fn register(&self, elements: usize, class: AllocClass) {
        let n = elements as u64;
        match class {
            AllocClass::Activation => {
                let live = self.inner.live.fetch_add(n, Ordering::SeqCst) + n;
                self.inner.peak.fetch_max(live, Ordering::SeqCst);
            }
            AllocClass::Parameter => {
                self.inner.param_live.fetch_add(n, Ordering::SeqCst);
            }
        }
    }

    pub(crate) fn release(&self, elements: usize, class: AllocClass) {
        let n = elements as u64;
        match class {
            AllocClass::Activation => {
                self.inner.live.fetch_sub(n, Ordering::SeqCst);
            }
            AllocClass::Parameter => {
                self.inner.param_live.fetch_sub(n, Ordering::SeqCst);
            }
        }
    }

    pub(crate) fn record_fwd_op(&self) {
        self.inner.fwd_ops.fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn record_bwd_op(&self) {
        self.inner.bwd_ops.fetch_add(1, Ordering::SeqCst);
    }
}

/// Snapshot of the ledger current on this thread.
pub fn ledger_snapshot() -> LedgerSnapshot {
    MemoryLedger::current().snapshot()
}

/// RAII guard returned by [`MemoryLedger::enter`].
#[must_use = "the scope ends when this guard is dropped"]
pub struct LedgerScope {
    _private: (),
}

impl Drop for LedgerScope {
    fn drop(&mut self) {
        CURRENT.with(|stack| {
            stack.borrow_mut().pop();
        });
    }
}
