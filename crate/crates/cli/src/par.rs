//! Order-preserving parallel map over scoped threads.

/// Applies `f` to every item on up to `threads` workers.
///
/// Items are split into contiguous chunks and results are reassembled in
/// input order, so output never depends on scheduling.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, t)| f(c * chunk + i, t))
                        .collect::<Vec<R>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap_or_else(|e| std::panic::resume_unwind(e)))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::par_map;

    #[test]
    fn keeps_input_order() {
        let items: Vec<u64> = (0..1001).collect();
        for threads in [1, 2, 7, 64, 5000] {
            let out = par_map(&items, threads, |i, &x| (i as u64) * 1000 + x * x);
            let want: Vec<u64> = items.iter().map(|&x| x * 1000 + x * x).collect();
            assert_eq!(out, want);
        }
        assert!(par_map(&[] as &[u8], 4, |_, _| 0).is_empty());
    }
}
