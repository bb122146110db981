use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::embedding::Layout2D;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_GRID: usize = 64;

/// Items ranked by their largest class probability, most confident first.
pub fn importance_scores(probs: &Matrix<f64>) -> Vec<(usize, f64)> {
    let mut ranked: Vec<(usize, f64)> = probs
        .iter_rows()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Kernel density of one class, sampled on a regular grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub class_id: usize,
    pub width: usize,
    pub height: usize,
    /// `[x_min, y_min, x_max, y_max]` of the sampled area.
    pub bounds: [f64; 4],
    /// Kernel standard deviation per axis.
    pub bandwidth: [f64; 2],
    /// Row-major densities; row 0 is `y_min`.
    pub values: Vec<f64>,
}

impl HeatmapGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// `(row, col)` of the cell containing `p`, clamped to the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let [x0, y0, x1, y1] = self.bounds;
        let fx = ((p[0] - x0) / (x1 - x0) * self.width as f64).floor();
        let fy = ((p[1] - y0) / (y1 - y0) * self.height as f64).floor();
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        (clamp(fy, self.height), clamp(fx, self.width))
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Binary portable graymap, densities scaled to 0..=255.
    pub fn write_pgm(&self, out: &mut impl Write) -> Result<()> {
        let max = self.values.iter().copied().fold(0.0f64, f64::max);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        // PGM rows run top to bottom, so emit y_max first
        for row in (0..self.height).rev() {
            let bytes: Vec<u8> = (0..self.width)
                .map(|c| if max > 0.0 { (self.get(row, c) / max * 255.0).round() as u8 } else { 0 })
                .collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Gaussian KDE of `class_id` over the bounding box of the whole layout.
///
/// The default bandwidth is Scott's rule per axis, `n^(-1/6)·std`, never
/// narrower than half a grid cell so the density stays visible on the grid.
pub fn class_heatmap(
    layout: &Layout2D,
    labels: &[usize],
    class_id: usize,
    grid: usize,
    bandwidth: Option<[f64; 2]>,
) -> Result<HeatmapGrid> {
    if labels.len() != layout.len() {
        return Err(Error::Shape("labels and layout differ in length".into()));
    }
    if grid == 0 {
        return Err(Error::Config("grid size must be positive".into()));
    }
    let members: Vec<[f64; 2]> = layout
        .coords
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == class_id)
        .map(|(c, _)| *c)
        .collect();
    if members.is_empty() {
        return Err(Error::EmptyClass(class_id));
    }

    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in &layout.coords {
        x0 = x0.min(c[0]);
        x1 = x1.max(c[0]);
        y0 = y0.min(c[1]);
        y1 = y1.max(c[1]);
    }
    let pad = |lo: f64, hi: f64| {
        let span = hi - lo;
        if span > 0.0 {
            (lo - 0.05 * span, hi + 0.05 * span)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let (cell_x, cell_y) = ((x1 - x0) / grid as f64, (y1 - y0) / grid as f64);

    let bw = bandwidth.unwrap_or_else(|| {
        let factor = (members.len() as f64).powf(-1.0 / 6.0);
        [
            factor * std_dev(members.iter().map(|p| p[0])),
            factor * std_dev(members.iter().map(|p| p[1])),
        ]
    });
    let bw = [bw[0].max(1e-6).max(cell_x / 2.0), bw[1].max(1e-6).max(cell_y / 2.0)];

    let norm = 1.0 / (2.0 * std::f64::consts::PI * bw[0] * bw[1] * members.len() as f64);
    let mut values = vec![0.0; grid * grid];
    for row in 0..grid {
        let y = y0 + (row as f64 + 0.5) * cell_y;
        for col in 0..grid {
            let x = x0 + (col as f64 + 0.5) * cell_x;
            let density: f64 = members
                .iter()
                .map(|p| {
                    let dx = (x - p[0]) / bw[0];
                    let dy = (y - p[1]) / bw[1];
                    (-0.5 * (dx * dx + dy * dy)).exp()
                })
                .sum();
            values[row * grid + col] = density * norm;
        }
    }
    Ok(HeatmapGrid {
        class_id,
        width: grid,
        height: grid,
        bounds: [x0, y0, x1, y1],
        bandwidth: bw,
        values,
    })
}

/// Centre and spread of one class in the workspace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuideCircle {
    pub class_id: usize,
    pub centroid: [f64; 2],
    /// Root-mean-square distance of members to the centroid.
    pub radius: f64,
}

pub fn guide_geometry(layout: &Layout2D, labels: &[usize], num_classes: usize) -> Result<Vec<GuideCircle>> {
    if labels.len() != layout.len() {
        return Err(Error::Shape("labels and layout differ in length".into()));
    }
    let mut sums = vec![[0.0f64; 2]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (c, &l) in layout.coords.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::Input(format!("label {l} outside 0..{num_classes}")));
        }
        sums[l][0] += c[0];
        sums[l][1] += c[1];
        counts[l] += 1;
    }
    if let Some(missing) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass(missing));
    }
    let centroids: Vec<[f64; 2]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| [s[0] / n as f64, s[1] / n as f64])
        .collect();
    let mut sq = vec![0.0f64; num_classes];
    for (c, &l) in layout.coords.iter().zip(labels) {
        let m = centroids[l];
        sq[l] += (c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2);
    }
    Ok((0..num_classes)
        .map(|k| GuideCircle {
            class_id: k,
            centroid: centroids[k],
            radius: (sq[k] / counts[k] as f64).sqrt(),
        })
        .collect())
}
