//! Partition agreement: normalized mutual information and adjusted Rand index.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Contingency counts and marginals of two labelings.
struct Contingency {
    /// Nonzero cells keyed by (row, column) in sorted order.
    cells: Vec<((usize, usize), usize)>,
    rows: Vec<usize>,
    cols: Vec<usize>,
    n: usize,
}

fn compact(p: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let out = p
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect();
    (out, map.len())
}

fn contingency(p1: &[usize], p2: &[usize]) -> Result<Contingency> {
    if p1.len() != p2.len() {
        return Err(Error::invalid(format!("partitions differ in length ({} vs {})", p1.len(), p2.len())));
    }
    if p1.is_empty() {
        return Err(Error::invalid("partitions are empty"));
    }
    let (a, ra) = compact(p1);
    let (b, rb) = compact(p2);
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rows = vec![0; ra];
    let mut cols = vec![0; rb];
    for (&i, &j) in a.iter().zip(&b) {
        *table.entry((i, j)).or_default() += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    let mut cells: Vec<((usize, usize), usize)> = table.into_iter().collect();
    cells.sort_unstable();
    Ok(Contingency {
        cells,
        rows,
        cols,
        n: p1.len(),
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I / (H1 + H2)` with natural logarithms; zero when both entropies vanish.
pub fn nmi(p1: &[usize], p2: &[usize]) -> Result<f64> {
    let t = contingency(p1, p2)?;
    let n = t.n as f64;
    let h1 = entropy(&t.rows, n);
    let h2 = entropy(&t.cols, n);
    if h1 + h2 == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for &((i, j), c) in &t.cells {
        let pij = c as f64 / n;
        mi += pij * (pij * n * n / (t.rows[i] as f64 * t.cols[j] as f64)).ln();
    }
    Ok((2.0 * mi / (h1 + h2)).clamp(0.0, 1.0))
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index. When the expected and maximum index coincide the
/// value is 1 for identical partitions and 0 otherwise.
pub fn ari(p1: &[usize], p2: &[usize]) -> Result<f64> {
    let t = contingency(p1, p2)?;
    // Cleared of the pairs denominator so integer-valued sums stay exact.
    let index: f64 = t.cells.iter().map(|&(_, c)| choose2(c)).sum();
    let sa: f64 = t.rows.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = t.cols.iter().map(|&c| choose2(c)).sum();
    let pairs = choose2(t.n);
    let num = index * pairs - sa * sb;
    let denom = 0.5 * (sa + sb) * pairs - sa * sb;
    if denom == 0.0 {
        let identical = t.cells.len() == t.rows.len() && t.cells.len() == t.cols.len();
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    Ok(num / denom)
}
