//! Replicate-level fan-out. With the `parallel` feature the work runs on a
//! rayon pool; without it (or with one thread) it is a plain loop. Output
//! order is always the input order, so results do not depend on scheduling.

/// Maps `f` over `0..count` using up to `threads` workers (`0` = all cores).
pub fn map_indexed<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if threads == 1 || count <= 1 {
        return (0..count).map(f).collect();
    }
    par_map(count, threads, f)
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(count: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;

    let run = || (0..count).into_par_iter().map(&f).collect();
    if threads == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(run),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); using the global pool");
            run()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(count: usize, _threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Whether this build can actually run replicates concurrently.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
