use crate::error::{Error, Result};

/// Calls `visit` with the restricted-growth string of every set partition of
/// `n` items, in lexicographic order. `rgs[i]` is the block index of item `i`.
fn for_each_rgs(n: usize, mut visit: impl FnMut(&[usize])) {
    if n == 0 {
        return;
    }
    let mut rgs = vec![0usize; n];
    // prefix_max[i] = max(rgs[..=i])
    let mut prefix_max = vec![0usize; n];
    loop {
        visit(&rgs);
        // rightmost position that can still grow
        let mut i = n - 1;
        loop {
            if i == 0 {
                return;
            }
            if rgs[i] <= prefix_max[i - 1] {
                break;
            }
            i -= 1;
        }
        rgs[i] += 1;
        prefix_max[i] = prefix_max[i - 1].max(rgs[i]);
        for j in i + 1..n {
            rgs[j] = 0;
            prefix_max[j] = prefix_max[i];
        }
    }
}

fn blocks_of<T: Clone>(items: &[T], rgs: &[usize], k: usize) -> Vec<Vec<T>> {
    let mut blocks = vec![Vec::new(); k];
    for (item, &b) in items.iter().zip(rgs) {
        blocks[b].push(item.clone());
    }
    blocks
}

/// All partitions of `items` into exactly `k` nonempty blocks.
///
/// Order is lexicographic in the restricted-growth encoding, so blocks appear
/// sorted by their first (leader) item and partitions by their leaders.
pub fn set_partitions<T: Clone>(items: &[T], k: usize) -> Result<Vec<Vec<Vec<T>>>> {
    if k == 0 || k > items.len() {
        return Err(Error::invalid(format!(
            "cannot split {} items into {k} blocks",
            items.len()
        )));
    }
    let mut out = Vec::new();
    for_each_rgs(items.len(), |rgs| {
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        if blocks == k {
            out.push(blocks_of(items, rgs, k));
        }
    });
    Ok(out)
}

/// Every set partition of `items`, grouped by nothing; `Bell(|items|)` entries.
pub fn all_set_partitions<T: Clone>(items: &[T]) -> Vec<Vec<Vec<T>>> {
    let mut out = Vec::new();
    for_each_rgs(items.len(), |rgs| {
        let blocks = rgs.iter().max().map_or(0, |m| m + 1);
        out.push(blocks_of(items, rgs, blocks));
    });
    out
}
