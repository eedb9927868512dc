//! Counts heap allocations around the single-window inference path.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use arcflux::bench::bench_window;
use arcflux::model::{init_params, HeadKind, ModelConfig, Workspace};

struct Counting;

static ALLOCS: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCS.fetch_add(1, Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

#[test]
fn inference_does_not_allocate_after_warmup() {
    for head in HeadKind::ALL {
        let cfg = ModelConfig {
            d_model: 16,
            n_state: 4,
            k_fas: 64,
            head_kind: head,
            ..ModelConfig::default()
        };
        let p = init_params(&cfg, 1);
        let window = bench_window(256, 2);
        let mut ws = Workspace::new();
        let warm = ws.infer_window(&p, &window).unwrap();

        let before = ALLOCS.load(Ordering::Relaxed);
        for _ in 0..20 {
            let logits = ws.infer_window(&p, &window).unwrap();
            assert_eq!(logits, warm);
        }
        let after = ALLOCS.load(Ordering::Relaxed);
        assert_eq!(after - before, 0, "{head:?}");
    }
}
