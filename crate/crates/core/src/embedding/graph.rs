use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};

/// Stored in place of a zero distance between distinct items.
pub const MIN_EDGE_WEIGHT: f64 = 1e-12;

/// Undirected weighted graph; each adjacency list is sorted by neighbour id.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph {
    pub k_graph: usize,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl NeighborGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j, w)` with `i < j`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, w) in adj {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search_by(|(n, _)| n.cmp(&j)).is_ok()
    }

    fn insert(&mut self, i: usize, j: usize, w: f64) {
        for (a, b) in [(i, j), (j, i)] {
            let adj = &mut self.adjacency[a];
            if let Err(pos) = adj.binary_search_by(|(n, _)| n.cmp(&b)) {
                adj.insert(pos, (b, w));
            }
        }
    }

    /// Connected-component id of every node; ids are assigned in order of lowest member.
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut comp = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            comp[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    pub fn is_connected(&self) -> bool {
        self.components().iter().all(|&c| c == 0)
    }
}

fn edge_weight(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt().max(MIN_EDGE_WEIGHT)
}

/// Symmetrised k-nearest-neighbour graph: `i-j` is an edge when either is
/// among the other's `k_graph` nearest. Distance ties go to the lower index.
pub fn build_knn_graph(latents: &Matrix<f64>, k_graph: usize) -> Result<NeighborGraph> {
    let n = latents.rows();
    if k_graph == 0 || k_graph >= n {
        return Err(Error::Config(format!(
            "k_graph must satisfy 1 <= k_graph < n (k_graph = {k_graph}, n = {n})"
        )));
    }
    let mut graph = NeighborGraph {
        k_graph,
        adjacency: vec![Vec::with_capacity(2 * k_graph); n],
    };
    let mut scored = Vec::with_capacity(n - 1);
    for i in 0..n {
        scored.clear();
        let xi = latents.row(i);
        scored.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(xi, latents.row(j)), j)),
        );
        scored.select_nth_unstable_by(k_graph - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &scored[..k_graph] {
            graph.insert(i, j, edge_weight(xi, latents.row(j)));
        }
    }
    Ok(graph)
}

/// Joins components by repeatedly adding the single shortest edge between
/// two different components until the graph is connected.
pub fn bridge_components(graph: &NeighborGraph, latents: &Matrix<f64>) -> NeighborGraph {
    let mut out = graph.clone();
    loop {
        let comp = out.components();
        if comp.iter().all(|&c| c == 0) {
            return out;
        }
        let n = out.node_count();
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                if comp[i] == comp[j] {
                    continue;
                }
                let d = squared_distance(latents.row(i), latents.row(j));
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        let (_, i, j) = best.expect("more than one component implies a cross pair");
        log::debug!("bridging components with edge {i}-{j}");
        let w = edge_weight(latents.row(i), latents.row(j));
        out.insert(i, j, w);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn points(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn random_points(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn collinear_points_link_to_neighbours() {
        let g = build_knn_graph(&points(&[&[0.0], &[1.0], &[2.0]]), 1).unwrap();
        let edges: Vec<_> = g.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn k_must_be_below_n() {
        let p = points(&[&[0.0], &[1.0]]);
        assert!(matches!(build_knn_graph(&p, 2), Err(Error::Config(_))));
        assert!(matches!(build_knn_graph(&p, 0), Err(Error::Config(_))));
    }

    #[test]
    fn duplicates_get_tiny_positive_weights() {
        let g = build_knn_graph(&points(&[&[1.0, 1.0], &[1.0, 1.0], &[5.0, 5.0]]), 1).unwrap();
        assert_eq!(g.neighbors(1), &[(0, MIN_EDGE_WEIGHT)]);
        assert_eq!(g.neighbors(0)[0], (1, MIN_EDGE_WEIGHT));
    }

    #[test]
    fn matches_brute_force_knn_union() {
        let p = random_points(50, 3, 8);
        let k = 5;
        let g = build_knn_graph(&p, k).unwrap();
        let mut expected = std::collections::BTreeSet::new();
        for i in 0..50 {
            let mut all: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = p.row(i).iter().zip(p.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    (d.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(_, j) in &all[..k] {
                expected.insert((i.min(j), i.max(j)));
            }
        }
        let got: std::collections::BTreeSet<_> = g.edges().iter().map(|&(i, j, _)| (i, j)).collect();
        assert_eq!(got, expected);
        for i in 0..50 {
            for &(j, w) in g.neighbors(i) {
                assert!(g.has_edge(j, i));
                assert!(w > 0.0);
                assert_ne!(i, j);
            }
        }
    }

    #[test]
    fn bridging_connects_closest_cross_pair() {
        // two tight clusters far apart; 1-NN keeps them separate
        let p = points(&[&[0.0, 0.0], &[0.1, 0.0], &[10.0, 0.0], &[10.2, 0.0]]);
        let g = build_knn_graph(&p, 1).unwrap();
        assert!(!g.is_connected());
        let b = bridge_components(&g, &p);
        assert!(b.is_connected());
        assert_eq!(b.edge_count(), g.edge_count() + 1);
        assert!(b.has_edge(1, 2));

        let again = bridge_components(&b, &p);
        assert_eq!(again, b);
    }

    #[test]
    fn three_components_need_two_bridges() {
        let p = points(&[
            &[0.0, 0.0],
            &[0.1, 0.0],
            &[5.0, 0.0],
            &[5.1, 0.0],
            &[0.0, 9.0],
            &[0.1, 9.0],
        ]);
        let g = build_knn_graph(&p, 1).unwrap();
        let b = bridge_components(&g, &p);
        assert_eq!(b.edge_count(), g.edge_count() + 2);

        // union-find oracle over the final edge set
        let mut parent: Vec<usize> = (0..6).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for (i, j, _) in b.edges() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            parent[ri] = rj;
        }
        let root = find(&mut parent, 0);
        assert!((0..6).all(|i| find(&mut parent, i) == root));
    }
}
