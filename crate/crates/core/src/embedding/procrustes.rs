use nalgebra::Matrix2;

use crate::error::{Error, Result};

fn centroid(points: &[[f64; 2]]) -> [f64; 2] {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0], y + p[1]));
    [sx / n, sy / n]
}

/// Aligns `source` onto `target` with the translation, orthogonal map (rotation
/// or reflection) and, if `allow_scale`, uniform scale minimising the summed
/// squared residual. Returns the aligned points and the residual RMSE.
pub fn procrustes_align(
    target: &[[f64; 2]],
    source: &[[f64; 2]],
    allow_scale: bool,
) -> Result<(Vec<[f64; 2]>, f64)> {
    if target.len() != source.len() {
        return Err(Error::Shape(format!(
            "target has {} points, source has {}",
            target.len(),
            source.len()
        )));
    }
    if source.len() < 2 {
        return Err(Error::Alignment("need at least two points".into()));
    }
    let ct = centroid(target);
    let cs = centroid(source);
    let t: Vec<[f64; 2]> = target.iter().map(|p| [p[0] - ct[0], p[1] - ct[1]]).collect();
    let s: Vec<[f64; 2]> = source.iter().map(|p| [p[0] - cs[0], p[1] - cs[1]]).collect();
    let source_ss: f64 = s.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum();
    if source_ss == 0.0 {
        return Err(Error::Alignment("all source points coincide".into()));
    }

    // cross-covariance H = Σ s tᵀ; optimal R = V Uᵀ for H = U Σ Vᵀ, applied as R·s
    let mut h = Matrix2::<f64>::zeros();
    for (a, b) in s.iter().zip(&t) {
        for i in 0..2 {
            for j in 0..2 {
                h[(i, j)] += a[i] * b[j];
            }
        }
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let r: Matrix2<f64> = v_t.transpose() * u.transpose();
    let scale: f64 = if allow_scale {
        svd.singular_values.sum() / source_ss
    } else {
        1.0
    };

    let mut sq = 0.0;
    let aligned: Vec<[f64; 2]> = s
        .iter()
        .zip(&t)
        .map(|(p, q)| {
            let x = scale * (r[(0, 0)] * p[0] + r[(0, 1)] * p[1]);
            let y = scale * (r[(1, 0)] * p[0] + r[(1, 1)] * p[1]);
            sq += (x - q[0]).powi(2) + (y - q[1]).powi(2);
            [x + ct[0], y + ct[1]]
        })
        .collect();
    let rmse = (sq / source.len() as f64).sqrt();
    Ok((aligned, rmse))
}
