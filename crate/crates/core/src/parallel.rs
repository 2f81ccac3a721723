//! Worker-pool plumbing. Every parallel kernel in the crate partitions work
//! so that each output element is produced by exactly one task, which keeps
//! results independent of the worker count.

use rayon::{ThreadPool, ThreadPoolBuilder};

/// Environment variable consulted for the default worker count.
pub const THREADS_ENV: &str = "SPECDRIVE_THREADS";

pub struct Workers {
    pool: ThreadPool,
    threads: usize,
}

impl Workers {
    pub fn new(threads: usize) -> Self {
        let threads = threads.max(1);
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("specdrive-{i}"))
            .build()
            .expect("failed to spawn worker threads");
        Workers { pool, threads }
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("threads", &self.threads).finish()
    }
}

/// Worker count from `SPECDRIVE_THREADS`, falling back to the number of
/// available cores.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}
