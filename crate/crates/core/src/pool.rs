//! A small bounded worker pool over borrowed work items.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

/// Runs `work` over `items` on at most `workers` threads. `on_done` is called
/// on the calling thread, in completion order, with each item's position and
/// result.
pub fn for_each_bounded<T, R, W, D>(items: &[T], workers: usize, work: W, mut on_done: D)
where
    T: Sync,
    R: Send,
    W: Fn(usize, &T) -> R + Sync,
    D: FnMut(usize, R),
{
    if items.is_empty() {
        return;
    }
    let workers = workers.clamp(1, items.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                if tx.send((i, work(i, &items[i]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            on_done(i, r);
        }
    });
}

/// Like [`for_each_bounded`] but collects results in input order.
pub fn map_bounded<T, R, W>(items: &[T], workers: usize, work: W) -> Vec<R>
where
    T: Sync,
    R: Send,
    W: Fn(usize, &T) -> R + Sync,
{
    let mut out: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for_each_bounded(items, workers, work, |i, r| out[i] = Some(r));
    out.into_iter().map(|r| r.expect("every item completes")).collect()
}
