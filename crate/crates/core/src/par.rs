//! Index-addressed fan-out: run `f(0..n)` on up to `jobs` worker
//! threads and return the results in index order. Work items must be
//! pure functions of their index for the merged output to be
//! schedule-independent; everything parallel in this crate goes through
//! here so that guarantee sits in one place.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::Result;

/// Run `f` over `0..n` with at most `jobs` threads. Results come back
/// in index order; on failure the error with the lowest index wins,
/// regardless of which worker hit it first.
pub fn parallel_map<T, F>(jobs: usize, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }

    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let workers: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= n {
                            return done;
                        }
                        done.push((i, f(i)));
                    }
                })
            })
            .collect();
        for worker in workers {
            for (i, r) in worker.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index is claimed exactly once"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn results_come_back_in_index_order() {
        for jobs in [1, 2, 3, 8, 64] {
            let out = parallel_map(jobs, 33, |i| {
                // Stagger finish times so claim order differs from
                // completion order.
                std::thread::sleep(std::time::Duration::from_micros((33 - i as u64) * 30));
                Ok(i * i)
            })
            .unwrap();
            assert_eq!(out, (0..33).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn the_lowest_index_error_wins() {
        for jobs in [1, 4] {
            let err = parallel_map::<usize, _>(jobs, 20, |i| {
                if i == 7 || i == 13 {
                    Err(Error::UnknownClass(i))
                } else {
                    Ok(i)
                }
            })
            .unwrap_err();
            match err {
                Error::UnknownClass(7) => {}
                other => panic!("expected the index-7 error, got {other:?}"),
            }
        }
    }

    #[test]
    fn zero_items_and_oversubscription_are_fine() {
        assert_eq!(parallel_map(8, 0, |_| Ok(0u8)).unwrap(), Vec::<u8>::new());
        assert_eq!(parallel_map(64, 2, Ok).unwrap(), vec![0, 1]);
    }
}
