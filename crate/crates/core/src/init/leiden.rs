//! Leiden community detection with the RB-configuration quality
//! `Q = sum_c [e_c / m - gamma * (K_c / 2m)^2]`.
//!
//! Each round runs fast local moving, refines every community into
//! well-connected subsets, and aggregates the graph by the refined partition
//! until no further merging happens. Rounds repeat from the previous result
//! while the quality improves.

use std::collections::VecDeque;

use crate::init::knn::KnnGraph;
use crate::rng::RandomSource;

/// Strict-improvement margin for local moves; equal gains keep the node put.
const MOVE_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeidenConfig {
    pub resolution: f64,
    pub iterations: usize,
    /// Randomness of the refinement merge choice.
    pub theta: f64,
}

impl Default for LeidenConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            iterations: 10,
            theta: 0.01,
        }
    }
}

impl LeidenConfig {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }
}

/// Weighted graph with explicit self-loops. A self-loop of weight `w`
/// contributes `2w` to its node's degree and `w` to `m`.
#[derive(Clone, Debug)]
struct Graph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    m: f64,
}

impl Graph {
    fn from_knn(g: &KnnGraph) -> Self {
        Self::new(g.adjacency.clone(), vec![0.0; g.n])
    }

    fn new(adj: Vec<Vec<(usize, f64)>>, self_loop: Vec<f64>) -> Self {
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(l, s)| l.iter().map(|&(_, w)| w).sum::<f64>() + 2.0 * s)
            .collect();
        let m = degree.iter().sum::<f64>() / 2.0;
        Self {
            adj,
            self_loop,
            degree,
            m,
        }
    }

    fn n(&self) -> usize {
        self.adj.len()
    }

    /// Collapses nodes sharing a label in `groups` (compact ids).
    fn aggregate(&self, groups: &[usize], count: usize) -> Graph {
        let mut self_loop = vec![0.0; count];
        let mut lists: Vec<Vec<(usize, f64)>> = vec![Vec::new(); count];
        for v in 0..self.n() {
            let cv = groups[v];
            self_loop[cv] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                if u < v {
                    continue;
                }
                let cu = groups[u];
                if cu == cv {
                    self_loop[cv] += w;
                } else {
                    lists[cv].push((cu, w));
                    lists[cu].push((cv, w));
                }
            }
        }
        let adj = lists
            .into_iter()
            .map(|mut l| {
                l.sort_unstable_by_key(|&(j, _)| j);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(l.len());
                for (j, w) in l {
                    match merged.last_mut() {
                        Some(last) if last.0 == j => last.1 += w,
                        _ => merged.push((j, w)),
                    }
                }
                merged
            })
            .collect();
        Graph::new(adj, self_loop)
    }

    fn quality(&self, membership: &[usize], gamma: f64) -> f64 {
        if self.m == 0.0 {
            return 0.0;
        }
        let count = membership.iter().max().map_or(0, |&c| c + 1);
        let mut internal = vec![0.0; count];
        let mut total = vec![0.0; count];
        for v in 0..self.n() {
            let c = membership[v];
            total[c] += self.degree[v];
            internal[c] += self.self_loop[v];
            for &(u, w) in &self.adj[v] {
                if u > v && membership[u] == c {
                    internal[c] += w;
                }
            }
        }
        let two_m = 2.0 * self.m;
        internal
            .iter()
            .zip(&total)
            .map(|(e, k)| e / self.m - gamma * (k / two_m) * (k / two_m))
            .sum()
    }
}

/// Quality of `membership` on `g`.
pub fn quality(g: &KnnGraph, membership: &[usize], resolution: f64) -> f64 {
    Graph::from_knn(g).quality(membership, resolution)
}

/// Relabels to `0..count` in order of first occurrence.
pub fn renumber(membership: &[usize]) -> (Vec<usize>, usize) {
    let mut map = std::collections::HashMap::new();
    let out = membership
        .iter()
        .map(|&c| {
            let next = map.len();
            *map.entry(c).or_insert(next)
        })
        .collect();
    (out, map.len())
}

/// Community labels, numbered by first occurrence.
pub fn leiden_cluster(g: &KnnGraph, cfg: &LeidenConfig, source: &mut RandomSource) -> Vec<usize> {
    let base = Graph::from_knn(g);
    let gamma = cfg.resolution;
    let mut membership: Vec<usize> = (0..base.n()).collect();
    if base.m == 0.0 {
        return membership;
    }
    let mut q = base.quality(&membership, gamma);
    for _ in 0..cfg.iterations.max(1) {
        let next = one_round(&base, &membership, cfg, source);
        let q_next = base.quality(&next, gamma);
        if q_next > q + MOVE_EPS * q.abs().max(1.0) {
            membership = next;
            q = q_next;
        } else {
            break;
        }
    }
    renumber(&membership).0
}

fn one_round(base: &Graph, start: &[usize], cfg: &LeidenConfig, source: &mut RandomSource) -> Vec<usize> {
    let gamma = cfg.resolution;
    let mut graph = base.clone();
    let (mut part, _) = renumber(start);
    let mut node_of: Vec<usize> = (0..base.n()).collect();
    // Each level strictly shrinks the graph, so this bounds the loop.
    for _ in 0..=base.n() {
        move_nodes_fast(&graph, &mut part, gamma, source);
        let (compact, n_comm) = renumber(&part);
        part = compact;
        if n_comm == graph.n() {
            break;
        }
        let refined = refine(&graph, &part, gamma, cfg.theta, source);
        let (refined, n_ref) = renumber(&refined);
        let (groups, count) = if n_ref < graph.n() {
            (refined, n_ref)
        } else {
            (part.clone(), n_comm)
        };
        let mut next_part = vec![0; count];
        for v in 0..graph.n() {
            next_part[groups[v]] = part[v];
        }
        for slot in node_of.iter_mut() {
            *slot = groups[*slot];
        }
        graph = graph.aggregate(&groups, count);
        part = next_part;
    }
    node_of.iter().map(|&v| part[v]).collect()
}

/// Queue-based local moving; `part` must use ids below `graph.n()`.
fn move_nodes_fast(graph: &Graph, part: &mut [usize], gamma: f64, source: &mut RandomSource) {
    let n = graph.n();
    let two_m = 2.0 * graph.m;
    let mut tot = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        tot[part[v]] += graph.degree[v];
        size[part[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).rev().filter(|&c| size[c] == 0).collect();
    let mut queue: VecDeque<usize> = source.permutation(n).into();
    let mut queued = vec![true; n];
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let cur = part[v];
        let kv = graph.degree[v];
        tot[cur] -= kv;
        size[cur] -= 1;
        for &(u, w) in &graph.adj[v] {
            let c = part[u];
            if link[c] == 0.0 {
                touched.push(c);
            }
            link[c] += w;
        }
        let gain = |c: usize, link: &[f64]| link[c] - gamma * kv * tot[c] / two_m;
        let mut best = cur;
        let mut best_gain = gain(cur, &link);
        for &c in &touched {
            let g = gain(c, &link);
            if g > best_gain + MOVE_EPS {
                best = c;
                best_gain = g;
            }
        }
        if best_gain < -MOVE_EPS && size[cur] > 0 {
            while let Some(c) = empty.pop() {
                if size[c] == 0 && c != cur {
                    best = c;
                    break;
                }
            }
        }
        for &c in &touched {
            link[c] = 0.0;
        }
        touched.clear();

        part[v] = best;
        tot[best] += kv;
        size[best] += 1;
        if best != cur {
            if size[cur] == 0 {
                empty.push(cur);
            }
            for &(u, _) in &graph.adj[v] {
                if !queued[u] && part[u] != best {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Splits each community of `part` into well-connected subsets by merging
/// singletons. Returns labels on the same node set.
fn refine(graph: &Graph, part: &[usize], gamma: f64, theta: f64, source: &mut RandomSource) -> Vec<usize> {
    let n = graph.n();
    let two_m = 2.0 * graph.m;
    let n_comm = part.iter().max().map_or(0, |&c| c + 1);
    let mut comm_tot = vec![0.0; n_comm];
    for v in 0..n {
        comm_tot[part[v]] += graph.degree[v];
    }
    let mut refined: Vec<usize> = (0..n).collect();
    let mut r_tot = graph.degree.clone();
    let mut r_size = vec![1usize; n];
    // Weight from each refined subset to the rest of its community.
    let mut r_ext: Vec<f64> = (0..n)
        .map(|v| {
            graph.adj[v]
                .iter()
                .filter(|&&(u, _)| part[u] == part[v])
                .map(|&(_, w)| w)
                .sum()
        })
        .collect();
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    for v in source.permutation(n) {
        let own = refined[v];
        if r_size[own] != 1 {
            continue;
        }
        let s = part[v];
        let kv = graph.degree[v];
        let ks = comm_tot[s];
        if r_ext[own] < gamma * kv * (ks - kv) / two_m {
            continue;
        }
        for &(u, w) in &graph.adj[v] {
            if part[u] != s {
                continue;
            }
            let t = refined[u];
            if link[t] == 0.0 {
                touched.push(t);
            }
            link[t] += w;
        }
        let mut cands: Vec<(usize, f64)> = vec![(own, 0.0)];
        for &t in &touched {
            if t == own {
                continue;
            }
            let well_connected = r_ext[t] >= gamma * r_tot[t] * (ks - r_tot[t]) / two_m;
            let dh = link[t] - gamma * kv * r_tot[t] / two_m;
            if well_connected && dh >= 0.0 {
                cands.push((t, dh));
            }
        }
        let chosen = if cands.len() == 1 {
            own
        } else {
            let top = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = cands.iter().map(|c| ((c.1 - top) / theta).exp()).collect();
            cands[source.weighted_index(&weights)].0
        };
        if chosen != own {
            r_ext[chosen] += r_ext[own] - 2.0 * link[chosen];
            r_tot[chosen] += kv;
            r_size[chosen] += 1;
            r_tot[own] = 0.0;
            r_size[own] = 0;
            r_ext[own] = 0.0;
            refined[v] = chosen;
        }
        for &t in &touched {
            link[t] = 0.0;
        }
        touched.clear();
    }
    refined
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clique_edges(nodes: std::ops::Range<usize>) -> Vec<(usize, usize)> {
        let v: Vec<usize> = nodes.collect();
        let mut e = Vec::new();
        for (a, &i) in v.iter().enumerate() {
            for &j in &v[a + 1..] {
                e.push((i, j));
            }
        }
        e
    }

    fn n_communities(m: &[usize]) -> usize {
        renumber(m).1
    }

    #[test]
    fn single_clique_is_one_community() {
        let g = KnnGraph::from_edges(5, &clique_edges(0..5));
        let m = leiden_cluster(&g, &LeidenConfig::with_resolution(0.25), &mut RandomSource::new(1));
        assert_eq!(n_communities(&m), 1);
    }

    #[test]
    fn edgeless_graph_keeps_singletons() {
        let g = KnnGraph::empty(6);
        let m = leiden_cluster(&g, &LeidenConfig::with_resolution(0.25), &mut RandomSource::new(1));
        assert_eq!(m, (0..6).collect::<Vec<_>>());
    }

    /// Every set partition of `0..n` as restricted growth strings.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(cur: &mut Vec<usize>, max: usize, n: usize, out: &mut Vec<Vec<usize>>) {
            if cur.len() == n {
                out.push(cur.clone());
                return;
            }
            for c in 0..=max + 1 {
                cur.push(c);
                rec(cur, max.max(c), n, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        let mut cur = vec![0];
        rec(&mut cur, 0, n, &mut out);
        out
    }

    #[test]
    fn two_cliques_match_exhaustive_optimum() {
        let mut edges = clique_edges(0..5);
        edges.extend(clique_edges(5..10));
        edges.push((4, 5));
        let g = KnnGraph::from_edges(10, &edges);
        let gamma = 0.25;
        let best = all_partitions(10)
            .into_iter()
            .map(|p| (quality(&g, &p, gamma), p))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert_eq!(n_communities(&best.1), 2);
        for seed in 0..20 {
            let m = leiden_cluster(&g, &LeidenConfig::with_resolution(gamma), &mut RandomSource::new(seed));
            assert_eq!(n_communities(&m), 2);
            assert!((quality(&g, &m, gamma) - best.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quality_matches_pairwise_definition() {
        // Q = (1/2m) sum_ij (A_ij - gamma k_i k_j / 2m) [c_i == c_j]
        let mut src = RandomSource::new(4);
        let n = 12;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if src.uniform() < 0.3 {
                    edges.push((i, j));
                }
            }
        }
        let g = KnnGraph::from_edges(n, &edges);
        let memb: Vec<usize> = (0..n).map(|_| src.index(3)).collect();
        let deg: Vec<f64> = g.adjacency.iter().map(|l| l.len() as f64).collect();
        let two_m: f64 = deg.iter().sum();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                if memb[i] == memb[j] {
                    let a = if g.has_edge(i, j) { 1.0 } else { 0.0 };
                    q += a - 0.7 * deg[i] * deg[j] / two_m;
                }
            }
        }
        q /= two_m;
        assert!((quality(&g, &memb, 0.7) - q).abs() < 1e-12);
    }

    #[test]
    fn aggregation_preserves_quality() {
        let mut src = RandomSource::new(8);
        let n = 30;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if src.uniform() < 0.2 {
                    edges.push((i, j));
                }
            }
        }
        let base = Graph::from_knn(&KnnGraph::from_edges(n, &edges));
        let groups: Vec<usize> = (0..n).map(|i| i / 3).collect();
        let agg = base.aggregate(&groups, 10);
        assert!((agg.m - base.m).abs() < 1e-12);
        let coarse: Vec<usize> = (0..10).map(|c| c % 4).collect();
        let fine: Vec<usize> = groups.iter().map(|&c| coarse[c]).collect();
        assert!((agg.quality(&coarse, 1.0) - base.quality(&fine, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut src = RandomSource::new(2);
        let n = 60;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let same = i / 20 == j / 20;
                if src.uniform() < if same { 0.5 } else { 0.02 } {
                    edges.push((i, j));
                }
            }
        }
        let g = KnnGraph::from_edges(n, &edges);
        let cfg = LeidenConfig::with_resolution(1.0);
        let a = leiden_cluster(&g, &cfg, &mut RandomSource::new(5));
        let b = leiden_cluster(&g, &cfg, &mut RandomSource::new(5));
        assert_eq!(a, b);
        assert_eq!(n_communities(&a), 3);
    }
}
