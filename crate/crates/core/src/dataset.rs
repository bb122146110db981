//! Dataset bundles: synthetic generation and CSV ingestion.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

/// Items, labels and split assignment. Item ids are row indices.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub features: Matrix<f32>,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    pub class_names: Vec<String>,
    pub class_colors: Vec<String>,
    pub thumbnails: Vec<Option<String>>,
}

impl DatasetBundle {
    pub fn new(features: Matrix<f32>, labels: Vec<usize>, splits: Vec<Split>) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let bundle = Self {
            thumbnails: vec![None; labels.len()],
            class_names: (0..classes).map(|c| format!("class {c}")).collect(),
            class_colors: (0..classes).map(|c| PALETTE[c % PALETTE.len()].to_string()).collect(),
            features,
            labels,
            splits,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.labels.len() != n || self.splits.len() != n || self.thumbnails.len() != n {
            return Err(Error::Schema(format!(
                "{n} feature rows, {} labels, {} split entries",
                self.labels.len(),
                self.splits.len()
            )));
        }
        if self.class_names.len() != self.class_colors.len() {
            return Err(Error::Schema("class names and colors differ in length".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_names.len()) {
            return Err(Error::Schema(format!("label {bad} has no class entry")));
        }
        let mut train_classes: Vec<usize> = self.ids(Split::Train).map(|i| self.labels[i]).collect();
        train_classes.sort_unstable();
        train_classes.dedup();
        if train_classes.len() < 2 {
            return Err(Error::Schema("the train split must contain at least two classes".into()));
        }
        if !self.features.all_finite() {
            return Err(Error::Schema("non-finite feature value".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = usize> + '_ {
        self.splits
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == split)
            .map(|(i, _)| i)
    }

    /// Feature rows and labels of one split.
    pub fn subset(&self, split: Split) -> (Vec<usize>, Matrix<f32>, Vec<usize>) {
        let ids: Vec<usize> = self.ids(split).collect();
        let x = self.features.select_rows(&ids);
        let y = ids.iter().map(|&i| self.labels[i]).collect();
        (ids, x, y)
    }

    /// Writes `features.csv`, `labels.csv` and `split.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("features.csv"))?);
        for row in self.features.iter_rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("labels.csv"))?);
        for l in &self.labels {
            writeln!(f, "{l}")?;
        }
        f.flush()?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("split.csv"))?);
        for s in &self.splits {
            writeln!(f, "{s}")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Train/validation/test sizes in 4:1:2 proportion.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 4.0 / 7.0).round() as usize;
    let validation = (n as f64 / 7.0).round() as usize;
    (train, validation, n - train - validation)
}

/// Seeded 4:1:2 split of `n` items.
pub fn seeded_split(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, validation, _) = split_sizes(n);
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < train {
            splits[i] = Split::Train;
        } else if rank < train + validation {
            splits[i] = Split::Validation;
        }
    }
    splits
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub classes: usize,
    pub input_dim: usize,
    /// 0 keeps the confusable class pairs apart; 1 makes their means coincide.
    pub overlap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 700,
            classes: 4,
            input_dim: 16,
            overlap: 0.6,
            seed: 0,
        }
    }
}

/// Distance between the two means of a confusable pair at zero overlap, in noise standard deviations.
const PAIR_SEPARATION: f64 = 5.0;
/// Distance between pair centres.
const GROUP_SEPARATION: f64 = 8.0;

fn random_unit(dim: usize, rng: &mut ChaCha8Rng, against: &[Vec<f64>]) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        // Gram-Schmidt against earlier directions (skipped once dim is exhausted)
        if against.len() < dim {
            for u in against {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(u) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Gaussian class clusters with unit noise. Classes are grouped in pairs
/// (0,1), (2,3), ...; the first two pairs are confusable, their means being
/// `PAIR_SEPARATION·(1−overlap)` apart. Remaining classes sit well apart.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<DatasetBundle> {
    let SyntheticConfig {
        n,
        classes,
        input_dim,
        overlap,
        seed,
    } = *config;
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap must lie in [0, 1], got {overlap}")));
    }
    if classes < 2 || input_dim == 0 {
        return Err(Error::Config("need at least two classes and one input dimension".into()));
    }
    if n < 4 * classes {
        return Err(Error::Config(format!(
            "n must be at least 4·classes = {}",
            4 * classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions: Vec<Vec<f64>> = Vec::new();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);

    let groups = classes.div_ceil(2);
    for g in 0..groups {
        let centre_dir = random_unit(input_dim, &mut rng, &directions);
        directions.push(centre_dir.clone());
        let centre: Vec<f64> = centre_dir.iter().map(|d| d * GROUP_SEPARATION * g as f64).collect();
        let split_dir = random_unit(input_dim, &mut rng, &directions);
        directions.push(split_dir.clone());
        let half = if g < 2 {
            PAIR_SEPARATION * (1.0 - overlap) / 2.0
        } else {
            PAIR_SEPARATION / 2.0
        };
        for side in [-1.0, 1.0] {
            if means.len() < classes {
                means.push(centre.iter().zip(&split_dir).map(|(c, d)| c + side * half * d).collect());
            }
        }
    }

    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(n * input_dim);
    for &label in &labels {
        for d in 0..input_dim {
            let noise: f64 = StandardNormal.sample(&mut rng);
            data.push((means[label][d] + noise) as f32);
        }
    }
    let features = Matrix::from_vec(n, input_dim, data)?;
    let splits = seeded_split(n, seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    DatasetBundle::new(features, labels, splits)
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Input(format!("{}: {other:?}", path.display())),
        })
}

fn read_rows(path: &Path) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut out = Vec::new();
    for (i, rec) in reader(path)?.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec));
    }
    Ok(out)
}

fn parse_field<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("cannot parse {field:?}"),
    })
}

/// Reads a bundle from CSV files. Without a split file, items receive a
/// seeded 4:1:2 train/validation/test split.
pub fn ingest_csv(features: &Path, labels: &Path, split: Option<&Path>, seed: u64) -> Result<DatasetBundle> {
    let rows = read_rows(features)?;
    let width = rows.first().map_or(0, |(_, r)| r.len());
    let mut data = Vec::with_capacity(rows.len() * width);
    for (line, rec) in &rows {
        if rec.len() != width {
            return Err(Error::Schema(format!(
                "{} line {line}: {} fields, expected {width}",
                features.display(),
                rec.len()
            )));
        }
        for field in rec.iter() {
            let v: f32 = parse_field(features, *line, field)?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: features.to_path_buf(),
                    line: *line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
    }
    let label_values = read_rows(labels)?
        .iter()
        .map(|(line, rec)| parse_field::<usize>(labels, *line, rec.get(0).unwrap_or("")))
        .collect::<Result<Vec<_>>>()?;
    if label_values.len() != rows.len() {
        return Err(Error::Schema(format!(
            "{} feature rows but {} labels",
            rows.len(),
            label_values.len()
        )));
    }
    let splits = match split {
        Some(path) => {
            let s = read_rows(path)?
                .iter()
                .map(|(line, rec)| parse_field::<Split>(path, *line, rec.get(0).unwrap_or("")))
                .collect::<Result<Vec<_>>>()?;
            if s.len() != rows.len() {
                return Err(Error::Schema(format!(
                    "{} feature rows but {} split entries",
                    rows.len(),
                    s.len()
                )));
            }
            s
        }
        None => seeded_split(rows.len(), seed),
    };
    DatasetBundle::new(Matrix::from_vec(rows.len(), width, data)?, label_values, splits)
}

/// Reads `features.csv`, `labels.csv` and (if present) `split.csv` from a directory.
pub fn read_dir(dir: &Path, seed: u64) -> Result<DatasetBundle> {
    let split = dir.join("split.csv");
    ingest_csv(
        &dir.join("features.csv"),
        &dir.join("labels.csv"),
        split.exists().then_some(split.as_path()),
        seed,
    )
}
