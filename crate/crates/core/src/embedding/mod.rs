//! Projection of latent vectors onto the 2D workspace.

mod geodesic;
mod graph;
mod mds;
mod procrustes;

pub use geodesic::{geodesic_distances, GeodesicDistances};
pub use graph::{bridge_components, build_knn_graph, NeighborGraph};
pub use mds::{classical_mds, pca_2d, MdsResult};
pub use procrustes::procrustes_align;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Neighbourhood size used when none is configured.
pub const DEFAULT_K_GRAPH: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Isomap,
    Pca,
    Mds,
}

/// Workspace coordinates, one pair per dataset item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout2D {
    pub coords: Vec<[f64; 2]>,
    pub method: Method,
    /// Checkpoint whose latents produced this layout.
    pub epoch: usize,
}

/// One row of the layout export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub id: usize,
    pub x: f64,
    pub y: f64,
    pub method: Method,
    pub epoch: usize,
}

impl Layout2D {
    pub fn new(coords: Vec<[f64; 2]>, method: Method, epoch: usize) -> Self {
        Self {
            coords,
            method,
            epoch,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().flatten().all(|v| v.is_finite())
    }

    pub fn to_points(&self) -> Vec<LayoutPoint> {
        self.coords
            .iter()
            .enumerate()
            .map(|(id, c)| LayoutPoint {
                id,
                x: c[0],
                y: c[1],
                method: self.method,
                epoch: self.epoch,
            })
            .collect()
    }

    pub fn from_points(points: &[LayoutPoint]) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::Input("empty layout".into()))?;
        let mut coords = vec![[f64::NAN; 2]; points.len()];
        for p in points {
            if p.id >= points.len() || !coords[p.id][0].is_nan() {
                return Err(Error::Schema(format!(
                    "layout ids must be a permutation of 0..{}",
                    points.len()
                )));
            }
            coords[p.id] = [p.x, p.y];
        }
        Ok(Self::new(coords, first.method, first.epoch))
    }

    /// JSON array of `{id, x, y, method, epoch}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_points())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let points: Vec<LayoutPoint> = serde_json::from_str(text)?;
        Self::from_points(&points)
    }
}

/// Isomap: k-NN graph, component bridging, graph geodesics, classical MDS.
pub fn isomap(latents: &Matrix<f64>, k_graph: usize, out_dims: usize) -> Result<MdsResult> {
    if latents.rows() < 4 {
        return Err(Error::Precondition(format!(
            "isomap needs at least 4 items, got {}",
            latents.rows()
        )));
    }
    let graph = build_knn_graph(latents, k_graph)?;
    let graph = bridge_components(&graph, latents);
    let geo = geodesic_distances(&graph)?;
    classical_mds(geo.matrix(), out_dims)
}

/// 2D Isomap layout tagged with the checkpoint that produced `latents`.
pub fn isomap_layout(latents: &Matrix<f64>, k_graph: usize, epoch: usize) -> Result<Layout2D> {
    let res = isomap(latents, k_graph, 2)?;
    Ok(Layout2D::new(res.to_pairs(), Method::Isomap, epoch))
}

/// Pairwise Euclidean distances between rows.
pub fn euclidean_distances(points: &Matrix<f64>) -> Matrix<f64> {
    let n = points.rows();
    let mut d = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = crate::matrix::squared_distance(points.row(i), points.row(j)).sqrt();
            d.set(i, j, v);
            d.set(j, i, v);
        }
    }
    d
}

/// Classical MDS on straight-line latent distances.
pub fn mds_layout(latents: &Matrix<f64>, epoch: usize) -> Result<Layout2D> {
    let res = classical_mds(&euclidean_distances(latents), 2)?;
    Ok(Layout2D::new(res.to_pairs(), Method::Mds, epoch))
}

/// Writes a distance matrix as `u32 n` followed by `n·n` row-major `f32`, little-endian.
pub fn write_distance_matrix(d: &Matrix<f64>, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(d.rows() as u32).to_le_bytes())?;
    for v in d.as_slice() {
        f.write_all(&(*v as f32).to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_json_round_trip() {
        let l = Layout2D::new(vec![[0.1, -2.5], [1.0 / 3.0, 7.0]], Method::Pca, 4);
        let json = l.to_json().unwrap();
        assert!(json.starts_with(r#"[{"id":0,"x":0.1,"y":-2.5,"method":"pca","epoch":4}"#));
        assert_eq!(Layout2D::from_json(&json).unwrap(), l);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let json = r#"[{"id":0,"x":0,"y":0,"method":"isomap","epoch":0},{"id":0,"x":1,"y":1,"method":"isomap","epoch":0}]"#;
        assert!(matches!(Layout2D::from_json(json), Err(Error::Schema(_))));
    }

    #[test]
    fn distance_matrix_export_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.bin");
        let d = Matrix::from_vec(2, 2, vec![0.0, 1.5, 1.5, 0.0]).unwrap();
        write_distance_matrix(&d, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 16);
        assert_eq!(u32::from_le_bytes(bytes[..4].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1.5);
    }
}
