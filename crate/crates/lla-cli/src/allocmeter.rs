//! Counting global allocator for peak-memory measurements.
//!
//! Binaries that want measured bytes install it:
//!
//! ```ignore
//! #[global_allocator]
//! static ALLOC: lla_cli::allocmeter::CountingAllocator =
//!     lla_cli::allocmeter::CountingAllocator;
//! ```
//!
//! Without it the counters stay at zero and callers fall back to analytic
//! size models.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

pub struct CountingAllocator;

unsafe impl GlobalAlloc for CountingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
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
            if new_size >= layout.size() {
                let cur =
                    CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size
                        - layout.size();
                PEAK.fetch_max(cur, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

pub fn current_bytes() -> usize {
    CURRENT.load(Ordering::Relaxed)
}

/// True when a counting allocator is actually installed in this binary.
pub fn instrumentation_active() -> bool {
    let before = current_bytes();
    let probe = Vec::<u8>::with_capacity(4096);
    let during = current_bytes();
    drop(probe);
    during >= before + 4096
}

/// Run `f` and report the peak number of bytes allocated above the level at
/// entry. Meaningful only single-threaded (the counters are process-wide).
pub fn measure_peak<R>(f: impl FnOnce() -> R) -> (R, usize) {
    let base = current_bytes();
    PEAK.store(base, Ordering::Relaxed);
    let r = f();
    let peak = PEAK.load(Ordering::Relaxed);
    (r, peak.saturating_sub(base))
}
