//! Exact brute-force k-nearest neighbours and the union-symmetrized graph.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, RowMatrix};

/// Undirected graph on `n` nodes; adjacency lists are sorted and carry weights.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnGraph {
    pub n: usize,
    pub adjacency: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    /// Graph with no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![Vec::new(); n],
        }
    }

    /// Unit-weight graph from an undirected edge list; duplicates and
    /// self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in edges {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        Self::from_lists(adj)
    }

    /// Union-symmetrizes directed neighbour lists with unit weights.
    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Self {
        let n = neighbors.len();
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, list) in neighbors.iter().enumerate() {
            for &j in list {
                if i != j {
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
        Self::from_lists(adj)
    }

    fn from_lists(mut adj: Vec<Vec<usize>>) -> Self {
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            n: adj.len(),
            adjacency: adj
                .into_iter()
                .map(|l| l.into_iter().map(|j| (j, 1.0)).collect())
                .collect(),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search_by(|&(x, _)| x.cmp(&j)).is_ok()
    }

    /// Edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().filter(move |&&(j, _)| j > i).map(move |&(j, w)| (i, j, w)))
    }

    /// Subgraph induced by `nodes`, relabelled `0..nodes.len()` in the given order.
    pub fn induced(&self, nodes: &[usize]) -> KnnGraph {
        let mut local = vec![usize::MAX; self.n];
        for (li, &g) in nodes.iter().enumerate() {
            local[g] = li;
        }
        let adjacency = nodes
            .iter()
            .map(|&g| {
                self.adjacency[g]
                    .iter()
                    .filter(|&&(j, _)| local[j] != usize::MAX)
                    .map(|&(j, w)| (local[j], w))
                    .collect::<Vec<_>>()
            })
            .map(|mut l| {
                l.sort_unstable_by_key(|&(j, _)| j);
                l
            })
            .collect();
        KnnGraph {
            n: nodes.len(),
            adjacency,
        }
    }

    /// Size of the largest connected component.
    pub fn largest_component(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut best = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            stack.push(s);
            let mut size = 0;
            while let Some(v) = stack.pop() {
                size += 1;
                for &(w, _) in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            best = best.max(size);
        }
        best
    }
}

fn by_distance(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` nearest other rows of every row, closest first. Equal distances
/// are ordered by row index, so results do not depend on scheduling.
pub fn knn_indices(x: &RowMatrix, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = x.rows();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("neighbour count {k} must lie in 1..{n}")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let q = x.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(q, x.row(j)), j))
                .collect();
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_distance);
                cand.truncate(k);
            }
            cand.sort_unstable_by(by_distance);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect())
}

pub fn build_knn_graph(x: &RowMatrix, k: usize) -> Result<KnnGraph> {
    Ok(KnnGraph::from_neighbors(&knn_indices(x, k)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> RowMatrix {
        RowMatrix::new(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn collinear_example() {
        let g = build_knn_graph(&col(&[0.0, 1.0, 3.0]), 1).unwrap();
        let edges: Vec<(usize, usize)> = g.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn full_neighbourhood_is_complete() {
        let g = build_knn_graph(&col(&[0.0, 1.0, 5.0, 7.0, 7.5]), 4).unwrap();
        assert_eq!(g.n_edges(), 10);
    }

    #[test]
    fn duplicates_break_ties_by_index() {
        let x = col(&[2.0, 2.0, 2.0, 9.0]);
        let nn = knn_indices(&x, 1).unwrap();
        assert_eq!(nn, vec![vec![1], vec![0], vec![0], vec![0]]);
        let g = KnnGraph::from_neighbors(&nn);
        assert!(g.adjacency.iter().enumerate().all(|(i, l)| l.iter().all(|&(j, _)| j != i)));
    }

    #[test]
    fn rejects_bad_k() {
        assert!(knn_indices(&col(&[1.0, 2.0]), 2).is_err());
        assert!(knn_indices(&col(&[1.0, 2.0]), 0).is_err());
    }

    #[test]
    fn largest_component_sizes() {
        let g = KnnGraph::from_edges(4, &[(0, 1), (1, 2)]);
        assert_eq!(g.largest_component(), 3);
        assert_eq!(g.induced(&[3]).largest_component(), 1);
    }
}
