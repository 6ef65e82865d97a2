//! Deterministic fan-out over independent tasks.

use std::sync::OnceLock;

/// Worker cap from `SGNN_THREADS`, default 1.
pub fn worker_count() -> usize {
    static COUNT: OnceLock<usize> = OnceLock::new();
    *COUNT.get_or_init(|| {
        std::env::var("SGNN_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v >= 1)
            .unwrap_or(1)
    })
}

/// `(0..count).map(f)` evaluated on up to [`worker_count`] threads; results keep index order,
/// so any later reduction is independent of scheduling.
pub fn map_indexed<T, E, F>(count: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync,
{
    let workers = worker_count().min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let chunk = count.div_ceil(workers);
    let parts: Vec<Result<Vec<T>, E>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || {
                    let lo = w * chunk;
                    let hi = ((w + 1) * chunk).min(count);
                    (lo..hi).map(f).collect::<Result<Vec<T>, E>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(count);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v: Result<Vec<usize>, ()> = map_indexed(17, |i| Ok(i * i));
        assert_eq!(v.unwrap(), (0..17).map(|i| i * i).collect::<Vec<_>>());
        let e: Result<Vec<usize>, usize> = map_indexed(5, |i| if i == 3 { Err(i) } else { Ok(i) });
        assert_eq!(e, Err(3));
    }
}
