//! Ordered parallel map for data loading.
//!
//! Workers claim indices from a shared counter and send results back over a
//! channel; a reorder buffer hands them to the consumer strictly in index
//! order. Results therefore never depend on the worker count or on thread
//! scheduling, provided `f` is a pure function of its index.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

/// Calls `sink(i, f(i))` for `i` in `0..n`, in order, computing `f` on up to
/// `workers` threads. Stops at the first error from `f` or `sink`.
pub fn ordered_map<T, E, F, S>(n: usize, workers: usize, f: F, mut sink: S) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
    S: FnMut(usize, T) -> Result<(), E>,
{
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 {
        for i in 0..n {
            sink(i, f(i)?)?;
        }
        return Ok(());
    }

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    // bound on how far workers may run ahead of the consumer
    let window = workers * 4;
    let delivered = AtomicUsize::new(0);

    thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<(usize, Result<T, E>)>();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, delivered, f) = (&next, &stop, &delivered, &f);
            scope.spawn(move || loop {
                if stop.load(Ordering::Acquire) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::AcqRel);
                if i >= n {
                    break;
                }
                while i >= delivered.load(Ordering::Acquire) + window
                    && !stop.load(Ordering::Acquire)
                {
                    thread::yield_now();
                }
                if tx.send((i, f(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        let mut pending = BTreeMap::new();
        let mut expected = 0;
        let mut outcome = Ok(());
        'recv: for (i, r) in rx.iter() {
            pending.insert(i, r);
            while let Some(r) = pending.remove(&expected) {
                let step = r.and_then(|v| sink(expected, v));
                expected += 1;
                delivered.store(expected, Ordering::Release);
                if let Err(e) = step {
                    outcome = Err(e);
                    break 'recv;
                }
            }
        }
        stop.store(true, Ordering::Release);
        outcome
    })
}

/// Collects `f(0..n)` in order using `workers` threads.
pub fn ordered_collect<T, E, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    let mut out = Vec::with_capacity(n);
    ordered_map(n, workers, f, |_, v| {
        out.push(v);
        Ok(())
    })?;
    Ok(out)
}
