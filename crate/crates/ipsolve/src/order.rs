//! Reverse Cuthill-McKee ordering for bandwidth reduction.
//!
//! The KKT systems assembled by the solver are banded under a good symmetric
//! permutation (trajectory problems interleave stages with their multipliers).
//! RCM recovers such an ordering from the sparsity pattern alone, so callers
//! never have to describe their block structure explicitly. All tie-breaking
//! is by vertex index, which keeps the ordering deterministic.

/// Computes an RCM permutation for a symmetric pattern given as (i, j) pairs.
/// Returns `perm` with `perm[old] = new`.
pub fn reverse_cuthill_mckee(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j) in edges {
        if i == j || i >= n || j >= n {
            continue;
        }
        adj[i].push(j);
        adj[j].push(i);
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut component = Vec::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let root = pseudo_peripheral(start, &adj, &mut component);
        // Cuthill-McKee BFS from the chosen root, neighbors by ascending degree.
        let base = order.len();
        order.push(root);
        visited[root] = true;
        let mut head = base;
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_unstable_by_key(|&w| (adj[w].len(), w));
            for w in next {
                visited[w] = true;
                order.push(w);
            }
        }
    }
    order.reverse();

    let mut perm = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        perm[old] = new;
    }
    perm
}

/// Finds an approximately peripheral vertex of the component containing
/// `start` (George-Liu: repeat BFS from a deepest, lowest-degree vertex).
fn pseudo_peripheral(start: usize, adj: &[Vec<usize>], scratch: &mut Vec<usize>) -> usize {
    let mut root = start;
    let mut depth = 0usize;
    for _ in 0..4 {
        let (levels, last) = bfs_levels(root, adj, scratch);
        if levels <= depth {
            break;
        }
        depth = levels;
        root = last;
    }
    root
}

fn bfs_levels(root: usize, adj: &[Vec<usize>], queue: &mut Vec<usize>) -> (usize, usize) {
    queue.clear();
    queue.push(root);
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut head = 0;
    let mut deepest = root;
    while head < queue.len() {
        let v = queue[head];
        head += 1;
        for &w in &adj[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push(w);
            }
        }
    }
    let max_level = queue.iter().map(|&v| level[v]).max().unwrap_or(0);
    let mut best_deg = usize::MAX;
    for &v in queue.iter() {
        if level[v] == max_level && adj[v].len() < best_deg {
            best_deg = adj[v].len();
            deepest = v;
        }
    }
    (max_level, deepest)
}

/// Largest |perm[i] - perm[j]| over the pattern, i.e. the bandwidth the
/// permuted matrix will need.
pub fn permuted_bandwidth(perm: &[usize], edges: impl Iterator<Item = (usize, usize)>) -> usize {
    let mut bw = 0usize;
    for (i, j) in edges {
        let (pi, pj) = (perm[i], perm[j]);
        bw = bw.max(pi.abs_diff(pj));
    }
    bw
}
