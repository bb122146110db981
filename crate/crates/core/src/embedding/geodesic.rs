use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::NeighborGraph;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// All-pairs shortest-path distances over a neighbour graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicDistances {
    matrix: Matrix<f64>,
}

impl GeodesicDistances {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn matrix(&self) -> &Matrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<f64> {
        self.matrix
    }
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node id
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &NeighborGraph, source: usize, dist: &mut [f64]) {
    dist.fill(f64::INFINITY);
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Frontier { dist: 0.0, node: source });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in graph.neighbors(node) {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Frontier { dist: nd, node: next });
            }
        }
    }
}

/// Dijkstra from every node. Sources are split across threads; each row
/// depends only on its source, so the result is schedule-independent.
/// The upper triangle is mirrored into the lower so the matrix is exactly symmetric.
pub fn geodesic_distances(graph: &NeighborGraph) -> Result<GeodesicDistances> {
    let n = graph.node_count();
    let mut data = vec![0.0; n * n];
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(n.max(1));
    let rows_per = n.div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        for (chunk_idx, chunk) in data.chunks_mut(rows_per * n.max(1)).enumerate() {
            scope.spawn(move || {
                for (r, row) in chunk.chunks_mut(n).enumerate() {
                    dijkstra(graph, chunk_idx * rows_per + r, row);
                }
            });
        }
    });
    if data.iter().any(|d| d.is_infinite()) {
        return Err(Error::Precondition(
            "neighbour graph is disconnected; bridge components first".into(),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            data[i * n + j] = data[j * n + i];
        }
    }
    Ok(GeodesicDistances {
        matrix: Matrix::from_vec(n, n, data)?,
    })
}
