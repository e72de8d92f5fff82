//! Heap usage tracking via a counting wrapper around the system allocator.
//!
//! Binaries that want peak-memory numbers in benchmark output install
//! [`CountingAllocator`] as their `#[global_allocator]`. Library code only
//! reads the counters; when no counting allocator is installed the gauges
//! stay at zero and [`tracking_active`] reports `false`, so benchmark rows
//! mark their memory column as untracked instead of reporting garbage.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static INSTALLED: AtomicUsize = AtomicUsize::new(0);

/// Global allocator that tracks current and peak live heap bytes.
pub struct CountingAllocator;

impl CountingAllocator {
    /// Marks the allocator as installed; called once from `alloc` lazily.
    fn note_installed() {
        INSTALLED.store(1, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        Self::note_installed();
        let p = System.alloc(layout);
        if !p.is_null() {
            let cur = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(cur, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            let old = layout.size();
            if new_size >= old {
                let cur = CURRENT.fetch_add(new_size - old, Ordering::Relaxed) + (new_size - old);
                PEAK.fetch_max(cur, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(old - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

/// True when a [`CountingAllocator`] has served at least one allocation.
pub fn tracking_active() -> bool {
    INSTALLED.load(Ordering::Relaxed) == 1
}

/// Live heap bytes right now (zero when tracking is inactive).
pub fn current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

/// High-water mark since process start or the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

/// Resets the peak gauge to the current live total and returns the new value.
pub fn reset_peak() -> usize {
    let cur = CURRENT.load(Ordering::Relaxed);
    PEAK.store(cur, Ordering::Relaxed);
    cur
}
