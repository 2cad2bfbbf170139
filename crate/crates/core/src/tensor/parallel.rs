use std::sync::OnceLock;

/// Environment variable bounding the worker count; defaults to 1.
pub const THREADS_ENV: &str = "CSCFUSE_THREADS";

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .thread_name(|i| format!("cscfuse-{i}"))
            .build()
            .expect("failed to build worker pool")
    })
}

/// Runs `f` inside the crate's worker pool.
pub(crate) fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool().install(f)
}
