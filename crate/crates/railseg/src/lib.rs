//! Railroad point-cloud segmentation toolkit.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! * [`cloud`] — labeled point clouds, PLY I/O, rigid transforms, subsampling.
//! * [`synth`] — parametric track geometry, labeled surface sampling, and a
//!   photogrammetric-style noise model producing "pseudo-real" scans.
//! * [`pipeline`] — density levels, patch extraction, rotation augmentation,
//!   and the eight experimental group configurations with dataset manifests.
//! * [`net`] — a hierarchical point-segmentation network (farthest-point
//!   sampling, ball grouping, feature propagation) with hand-written
//!   gradients, Adam training, and a portable binary checkpoint format.
//! * [`metrics`] — confusion counts, overall accuracy, per-class IoU, mean
//!   IoU, and report serialization.
//! * [`cli`] — the command front-end used by the `railseg` binary
//!   (`generate`, `prepare`, `train`, `eval`, `experiment`).
//!
//! Every stochastic operation takes an explicit [`rng::RngSeed`]; equal
//! seeds give bit-identical results regardless of thread count. See the
//! `examples/` directory for one runnable walkthrough per capability.

pub mod cloud;
pub mod net;
pub mod pipeline;
pub mod synth;
pub mod error;
pub mod rng;

pub use error::{Error, Result};
pub use rng::RngSeed;

use std::sync::OnceLock;

/// Shared compute pool. Thread count comes from `RAILSEG_THREADS`
/// (default: all cores). Results never depend on the pool size; it only
/// affects speed.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(value) = std::env::var("RAILSEG_THREADS") {
            if let Ok(n) = value.trim().parse::<usize>() {
                if n > 0 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("thread pool construction")
    })
}
