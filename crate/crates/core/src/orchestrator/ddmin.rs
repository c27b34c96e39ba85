//! Delta debugging over an ordered list.

/// Shrinks `items` to a 1-minimal sublist on which `fails` still holds.
/// Order is preserved. `fails(items)` is assumed true and never re-checked.
pub fn ddmin<T: Clone>(items: &[T], mut fails: impl FnMut(&[T]) -> bool) -> Vec<T> {
    let mut cur: Vec<T> = items.to_vec();
    let mut n = 2usize;
    while cur.len() >= 2 {
        let chunks = split(cur.len(), n);
        let mut reduced = false;

        for &(lo, hi) in &chunks {
            let subset = &cur[lo..hi];
            if fails(subset) {
                cur = subset.to_vec();
                n = 2;
                reduced = true;
                break;
            }
        }
        if !reduced && n > 2 {
            for &(lo, hi) in &chunks {
                let complement: Vec<T> = cur[..lo].iter().chain(&cur[hi..]).cloned().collect();
                if fails(&complement) {
                    cur = complement;
                    n = (n - 1).max(2);
                    reduced = true;
                    break;
                }
            }
        }
        if !reduced {
            if n >= cur.len() {
                break;
            }
            n = (n * 2).min(cur.len());
        }
    }
    cur
}

/// Drops single elements until none can go; the fixed point is 1-minimal.
pub fn one_minimal<T: Clone>(items: &[T], mut fails: impl FnMut(&[T]) -> bool) -> Vec<T> {
    let mut cur = items.to_vec();
    let mut i = 0;
    while i < cur.len() && cur.len() > 1 {
        let mut candidate = cur.clone();
        candidate.remove(i);
        if fails(&candidate) {
            cur = candidate;
            i = 0;
        } else {
            i += 1;
        }
    }
    cur
}

fn split(len: usize, n: usize) -> Vec<(usize, usize)> {
    let n = n.min(len).max(1);
    (0..n).map(|k| (k * len / n, (k + 1) * len / n)).collect()
}
