//! Minimum-cost bipartite assignment on rectangular cost matrices.

/// Returns, for each row, the column it is matched to. When there are more
/// rows than columns the surplus rows get `None`. Costs must be finite.
///
/// Shortest augmenting path with potentials, `O(r^2 c)` for `r <= c`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let col_to_row = solve(&transposed);
        let mut out = vec![None; rows];
        for (j, i) in col_to_row.into_iter().enumerate() {
            out[i] = Some(j);
        }
        return out;
    }
    solve(cost).into_iter().map(Some).collect()
}

/// Requires `rows <= cols`; every row is matched.
fn solve(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    fn total(cost: &[Vec<f64>], a: &[Option<usize>]) -> f64 {
        a.iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| cost[i][j]))
            .sum()
    }

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let rows = cost.len();
        let cols = cost[0].len();
        let take = rows.min(cols);
        let mut best = f64::INFINITY;
        // Enumerate injective maps from the smaller side into the larger.
        fn rec(
            depth: usize,
            take: usize,
            used: &mut Vec<bool>,
            acc: f64,
            f: &dyn Fn(usize, usize) -> f64,
            best: &mut f64,
        ) {
            if depth == take {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    rec(depth + 1, take, used, acc + f(depth, j), f, best);
                    used[j] = false;
                }
            }
        }
        if rows <= cols {
            let f = |i: usize, j: usize| cost[i][j];
            rec(0, take, &mut vec![false; cols], 0.0, &f, &mut best);
        } else {
            let f = |j: usize, i: usize| cost[i][j];
            rec(0, take, &mut vec![false; rows], 0.0, &f, &mut best);
        }
        best
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut src = RandomSource::new(17);
        for trial in 0..300 {
            let rows = 1 + trial % 5;
            let cols = 1 + (trial / 5) % 5;
            let cost: Vec<Vec<f64>> = (0..rows)
                .map(|_| (0..cols).map(|_| (src.uniform() * 10.0).floor()).collect())
                .collect();
            let a = min_cost_assignment(&cost);
            let used: Vec<usize> = a.iter().flatten().copied().collect();
            let mut dedup = used.clone();
            dedup.sort_unstable();
            dedup.dedup();
            assert_eq!(used.len(), rows.min(cols));
            assert_eq!(dedup.len(), used.len());
            assert!((total(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_permutation() {
        let cost = vec![
            vec![5.0, 0.0, 5.0],
            vec![5.0, 5.0, 0.0],
            vec![0.0, 5.0, 5.0],
        ];
        assert_eq!(min_cost_assignment(&cost), vec![Some(1), Some(2), Some(0)]);
    }
}
