use crate::error::{Error, Result};
use crate::init::knn::KnnGraph;

/// Mean over labels of `|largest component| / |label|` in the subgraph
/// induced by each label's cells.
pub fn graph_connectivity(graph: &KnnGraph, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || labels.len() != graph.n {
        return Err(Error::invalid("labels must cover every graph node"));
    }
    let n_labels = labels.iter().max().map_or(0, |&l| l + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let ratios: Vec<f64> = members
        .iter()
        .filter(|m| !m.is_empty())
        .map(|m| graph.induced(m).largest_component() as f64 / m.len() as f64)
        .collect();
    Ok(ratios.iter().sum::<f64>() / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_label_contributes_three_quarters() {
        let g = KnnGraph::from_edges(4, &[(0, 1), (1, 2)]);
        assert_eq!(graph_connectivity(&g, &[0, 0, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn connected_and_singleton_labels() {
        let g = KnnGraph::from_edges(5, &[(0, 1), (1, 2), (3, 0)]);
        assert_eq!(graph_connectivity(&g, &[0, 0, 0, 1, 2]).unwrap(), 1.0);
    }
}
