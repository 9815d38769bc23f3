//! Worker-pool configuration. `EVM_THREADS` caps the worker count; results
//! are bitwise-deterministic regardless of the pool size because parallel
//! loops write disjoint slots and reductions run sequentially.

use std::sync::Once;

static INIT: Once = Once::new();

/// Build the global worker pool from `EVM_THREADS` (once; later calls are
/// no-ops). Without the variable the default pool is used.
pub fn configure_from_env() {
    INIT.call_once(|| {
        if let Ok(v) = std::env::var("EVM_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
