//! Dense HDBSCAN: mutual reachability, Prim MST, single-linkage hierarchy, condensed tree and
//! excess-of-mass cluster selection.
//!
//! Memory and time are quadratic in the number of points, which suits the desk-scale layouts
//! this crate produces.

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself.
    pub min_samples: usize,
    /// Lets the root be selected when it beats every split.
    pub allow_single_cluster: bool,
}

impl HdbscanParams {
    pub fn new(min_cluster_size: usize) -> Self {
        HdbscanParams {
            min_cluster_size,
            min_samples: min_cluster_size,
            allow_single_cluster: false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct CondensedEdge<T> {
    parent: usize,
    child: usize,
    lambda: T,
    size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

fn distance<T: Scalar, const D: usize>(a: &[T; D], b: &[T; D]) -> T {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum::<T>().sqrt()
}

/// Cluster label per point (`None` for noise). Labels are dense, `0..k`, ordered by the
/// clusters' position in the condensed tree.
pub fn hdbscan<T: Scalar, const D: usize>(points: &[[T; D]], params: HdbscanParams) -> Vec<Option<usize>> {
    let n = points.len();
    let mcs = params.min_cluster_size.max(2);
    if n < mcs || n < 2 {
        return vec![None; n];
    }

    let mut dist = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = distance(&points[i], &points[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let k = params.min_samples.clamp(1, n) - 1;
    let core: Vec<T> = (0..n)
        .map(|i| {
            let mut row = dist[i * n..(i + 1) * n].to_vec();
            row.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            row[k]
        })
        .collect();
    let reach = |i: usize, j: usize| dist[i * n + j].max(core[i]).max(core[j]);

    let mst = prim_mst(n, reach);
    let hierarchy = single_linkage(n, mst);
    let condensed = condense(n, &hierarchy, mcs);
    let selected = select_clusters(n, &condensed, params.allow_single_cluster);
    label_points(n, &condensed, &selected, params.allow_single_cluster)
}

/// Edges `(a, b, weight)` of a minimum spanning tree of the complete graph.
fn prim_mst<T: Scalar>(n: usize, weight: impl Fn(usize, usize) -> T) -> Vec<(usize, usize, T)> {
    let mut in_tree = vec![false; n];
    let mut best = vec![T::infinity(); n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = T::infinity();
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = weight(current, j);
            if w < best[j] {
                best[j] = w;
                from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_w));
        current = next;
    }
    edges
}

/// Merge hierarchy rows `(left, right, distance, size)`; row `k` creates node `n + k`.
fn single_linkage<T: Scalar>(n: usize, mut mst: Vec<(usize, usize, T)>) -> Vec<(usize, usize, T, usize)> {
    mst.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap_or(std::cmp::Ordering::Equal));
    let mut uf = UnionFind::new(2 * n - 1);
    let mut size = vec![1usize; 2 * n - 1];
    let mut rows = Vec::with_capacity(n - 1);
    for (k, (a, b, w)) in mst.into_iter().enumerate() {
        let (ra, rb) = (uf.find(a), uf.find(b));
        let node = n + k;
        size[node] = size[ra] + size[rb];
        uf.parent[ra] = node;
        uf.parent[rb] = node;
        rows.push((ra, rb, w, size[node]));
    }
    rows
}

fn lambda_of<T: Scalar>(d: T) -> T {
    // Duplicate points would otherwise give an infinite lambda and NaN stabilities.
    T::one() / d.max(T::epsilon())
}

fn condense<T: Scalar>(n: usize, hierarchy: &[(usize, usize, T, usize)], mcs: usize) -> Vec<CondensedEdge<T>> {
    let root = 2 * n - 2;
    let size_of = |node: usize| if node < n { 1 } else { hierarchy[node - n].3 };
    let leaves = |node: usize| -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let (l, r, _, _) = hierarchy[x - n];
                stack.push(r);
                stack.push(l);
            }
        }
        out
    };

    let mut relabel = vec![usize::MAX; 2 * n - 1];
    relabel[root] = n;
    let mut next_label = n + 1;
    let mut result = Vec::new();
    // Breadth-first from the root; subtrees whose points already fell out are never queued.
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let (left, right, d, _) = hierarchy[node - n];
        let lambda = lambda_of(d);
        let (ls, rs) = (size_of(left), size_of(right));
        let parent = relabel[node];
        match (ls >= mcs, rs >= mcs) {
            (true, true) => {
                for (child, s) in [(left, ls), (right, rs)] {
                    relabel[child] = next_label;
                    result.push(CondensedEdge { parent, child: next_label, lambda, size: s });
                    next_label += 1;
                    queue.push_back(child);
                }
            }
            (false, false) => {
                for p in leaves(left).into_iter().chain(leaves(right)) {
                    result.push(CondensedEdge { parent, child: p, lambda, size: 1 });
                }
            }
            (false, true) | (true, false) => {
                let (keep, drop) = if ls >= mcs { (left, right) } else { (right, left) };
                relabel[keep] = parent;
                for p in leaves(drop) {
                    result.push(CondensedEdge { parent, child: p, lambda, size: 1 });
                }
                queue.push_back(keep);
            }
        }
    }
    result
}

/// Excess-of-mass selection. Returns selected cluster labels (condensed numbering).
fn select_clusters<T: Scalar>(n: usize, condensed: &[CondensedEdge<T>], allow_single: bool) -> Vec<usize> {
    let root = n;
    let max_label = condensed.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(root).max(root);
    let mut birth = vec![T::zero(); max_label + 1];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); max_label + 1];
    for e in condensed.iter().filter(|e| e.child >= n) {
        birth[e.child] = e.lambda;
        children[e.parent].push(e.child);
    }
    let mut stability = vec![T::zero(); max_label + 1];
    for e in condensed {
        stability[e.parent] += (e.lambda - birth[e.parent]) * T::from_usize(e.size).expect("size fits");
    }

    let mut is_cluster = vec![false; max_label + 1];
    let lowest = if allow_single { root } else { root + 1 };
    for c in lowest..=max_label {
        is_cluster[c] = true;
    }
    // Children always carry larger labels than their parents, so descending order is bottom-up.
    for c in (lowest..=max_label).rev() {
        let subtree: T = children[c].iter().map(|&ch| stability[ch]).sum();
        if subtree > stability[c] {
            is_cluster[c] = false;
            stability[c] = subtree;
        } else {
            let mut stack = children[c].clone();
            while let Some(x) = stack.pop() {
                is_cluster[x] = false;
                stack.extend(children[x].iter().copied());
            }
        }
    }
    (lowest..=max_label).filter(|&c| is_cluster[c]).collect()
}

fn label_points<T: Scalar>(n: usize, condensed: &[CondensedEdge<T>], selected: &[usize], allow_single: bool) -> Vec<Option<usize>> {
    let root = n;
    let max_label = condensed.iter().map(|e| e.parent.max(e.child)).max().unwrap_or(root).max(root);
    let mut uf = UnionFind::new(max_label + 1);
    let is_selected = |c: usize| selected.binary_search(&c).is_ok();
    for e in condensed {
        if !is_selected(e.child) {
            uf.parent[e.child] = e.parent;
        }
    }
    let single_root = allow_single && selected == [root];
    // With the root selected, a point belongs to it only if it survived past the root's
    // last split.
    let root_threshold = condensed
        .iter()
        .filter(|e| e.parent == root)
        .map(|e| e.lambda)
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let mut point_lambda = vec![T::zero(); n];
    for e in condensed.iter().filter(|e| e.child < n) {
        point_lambda[e.child] = e.lambda;
    }

    (0..n)
        .map(|p| {
            let c = uf.find(p);
            if c == root {
                (single_root && point_lambda[p] >= root_threshold).then_some(0)
            } else if c < root {
                None
            } else {
                selected.binary_search(&c).ok()
            }
        })
        .collect()
}
