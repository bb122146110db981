use nalgebra::{DMatrix, SymmetricEigen};

use super::{Layout2D, Method};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Coordinates plus the eigenvalues they were scaled by.
#[derive(Clone, Debug, PartialEq)]
pub struct MdsResult {
    /// `n x out_dims`
    pub coords: Matrix<f64>,
    /// Top eigenvalues in descending order, negative ones clamped to zero.
    pub eigenvalues: Vec<f64>,
}

impl MdsResult {
    /// First two columns as coordinate pairs (zero-padded when fewer exist).
    pub fn to_pairs(&self) -> Vec<[f64; 2]> {
        self.coords
            .iter_rows()
            .map(|r| [r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)])
            .collect()
    }
}

/// Eigenpairs of a symmetric matrix, largest eigenvalue first. Ties keep solver order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Flips `column` so that its largest-magnitude entry (lowest index on ties) is positive.
fn fix_sign(column: &mut [f64]) {
    let mut pivot = 0;
    for (i, v) in column.iter().enumerate() {
        if v.abs() > column[pivot].abs() {
            pivot = i;
        }
    }
    if column.get(pivot).is_some_and(|&v| v < 0.0) {
        for v in column.iter_mut() {
            *v = -*v;
        }
    }
}

fn validate_distances(d: &Matrix<f64>) -> Result<()> {
    let n = d.rows();
    if d.cols() != n {
        return Err(Error::Input(format!("distance matrix is {}x{}", n, d.cols())));
    }
    if !d.all_finite() {
        return Err(Error::Input("distance matrix has non-finite entries".into()));
    }
    let scale = d.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        if d.get(i, i) < 0.0 {
            return Err(Error::Input(format!("negative diagonal entry at {i}")));
        }
        for j in 0..i {
            if (d.get(i, j) - d.get(j, i)).abs() > 1e-9 * scale {
                return Err(Error::Input(format!(
                    "distance matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

/// Classical (Torgerson) MDS: double-centre the squared distances and scale the
/// top eigenvectors by the square roots of their eigenvalues.
pub fn classical_mds(d: &Matrix<f64>, out_dims: usize) -> Result<MdsResult> {
    validate_distances(d)?;
    let n = d.rows();
    if out_dims == 0 || out_dims > n {
        return Err(Error::Config(format!(
            "out_dims must be in 1..={n}, got {out_dims}"
        )));
    }
    // B = -1/2 · J · D² · J via row/column means of D²
    let sq = d.map(|v| v * v);
    let row_means: Vec<f64> = sq.iter_rows().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq.get(i, j) - row_means[i] - row_means[j] + grand)
    });
    let (values, vectors) = sorted_eigen(b);

    let top = values[0].abs().max(f64::MIN_POSITIVE);
    let mut eigenvalues = Vec::with_capacity(out_dims);
    let mut coords = Matrix::zeros(n, out_dims);
    for c in 0..out_dims {
        let mut lambda = values[c];
        if lambda.abs() <= 1e-12 * top {
            lambda = 0.0;
        } else if lambda < 0.0 {
            log::warn!("classical MDS: eigenvalue {c} is negative ({lambda:e}); clamped to zero");
            lambda = 0.0;
        }
        let mut column: Vec<f64> = vectors.column(c).iter().copied().collect();
        fix_sign(&mut column);
        let s = lambda.sqrt();
        for (r, v) in column.iter().enumerate() {
            coords.set(r, c, v * s);
        }
        eigenvalues.push(lambda);
    }
    Ok(MdsResult {
        coords,
        eigenvalues,
    })
}

/// Projection onto the top two principal directions of the centred data.
pub fn pca_2d(latents: &Matrix<f64>, epoch: usize) -> Result<Layout2D> {
    let (n, dim) = latents.shape();
    if n < 2 {
        return Err(Error::Precondition("PCA needs at least two items".into()));
    }
    let means: Vec<f64> = latents.column_sums().iter().map(|s| s / n as f64).collect();
    let centered = DMatrix::from_fn(n, dim, |r, c| latents.get(r, c) - means[c]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let (_, vectors) = sorted_eigen(cov);
    let mut coords = vec![[0.0; 2]; n];
    for c in 0..dim.min(2) {
        let mut scores: Vec<f64> = (centered.clone() * vectors.column(c)).iter().copied().collect();
        fix_sign(&mut scores);
        for (p, s) in coords.iter_mut().zip(scores) {
            p[c] = s;
        }
    }
    Ok(Layout2D::new(coords, Method::Pca, epoch))
}
