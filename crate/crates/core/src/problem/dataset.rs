use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::problem::ProblemError;
use crate::scalar::Scalar;

/// Dense sample matrix (row-major) with one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    dim: usize,
    features: Vec<T>,
    targets: Vec<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(dim: usize, features: Vec<T>, targets: Vec<T>) -> Result<Self, ProblemError> {
        if targets.is_empty() {
            return Err(ProblemError::EmptyDataset);
        }
        if dim == 0 || features.len() != dim * targets.len() {
            return Err(ProblemError::DimensionMismatch {
                expected: dim * targets.len(),
                got: features.len(),
            });
        }
        if features.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(ProblemError::InvalidParameter(
                "dataset entries must be finite".into(),
            ));
        }
        Ok(Dataset {
            dim,
            features,
            targets,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], targets: Vec<T>) -> Result<Self, ProblemError> {
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(ProblemError::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        Self::new(dim, rows.concat(), targets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.features[k * self.dim..(k + 1) * self.dim]
    }

    pub fn target(&self, k: usize) -> T {
        self.targets[k]
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.features.chunks_exact(self.dim)
    }

    /// Subset in the given row order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, ProblemError> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut targets = Vec::with_capacity(indices.len());
        for &k in indices {
            if k >= self.len() {
                return Err(ProblemError::IndexOutOfRange {
                    index: k,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(k));
            targets.push(self.targets[k]);
        }
        Self::new(self.dim, features, targets)
    }

    /// Seeded shuffle followed by contiguous blocks whose sizes differ by at
    /// most one. Every sample lands in exactly one part.
    pub fn partition(&self, parts: usize, seed: u64) -> Result<Vec<Self>, ProblemError> {
        if parts == 0 || parts > self.len() {
            return Err(ProblemError::InvalidParameter(format!(
                "cannot split {} samples into {parts} nonempty parts",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let base = self.len() / parts;
        let extra = self.len() % parts;
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for p in 0..parts {
            let size = base + usize::from(p < extra);
            out.push(self.select(&order[start..start + size])?);
            start += size;
        }
        Ok(out)
    }
}

/// How the first token of a LIBSVM line is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// `+1`/`1` map to `+1`; `-1`/`0` map to `-1`; anything else is an error.
    Binary,
    /// Real-valued regression target.
    Real,
}

/// Parses the sparse `label idx:val ...` text format (1-based indices) into a
/// dense dataset. With `dim = None` the dimension is the largest index seen.
pub fn parse_libsvm<T: Scalar>(
    text: &str,
    dim: Option<usize>,
    mode: LabelMode,
) -> Result<Dataset<T>, ProblemError> {
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut lines = Vec::new();
    let mut max_index = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| ProblemError::Parse {
            line: line_no,
            reason,
        };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("invalid label `{label_tok}`")))?;
        let label = match mode {
            LabelMode::Real => label,
            LabelMode::Binary if label == 1.0 => 1.0,
            LabelMode::Binary if label == -1.0 || label == 0.0 => -1.0,
            LabelMode::Binary => return Err(err(format!("label `{label_tok}` is not binary"))),
        };
        if !label.is_finite() {
            return Err(err(format!("label `{label_tok}` is not finite")));
        }
        let mut row = Vec::new();
        for tok in tokens {
            let (i, v) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got `{tok}`")))?;
            let i: usize = i
                .parse()
                .map_err(|_| err(format!("invalid feature index `{i}`")))?;
            if i == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let v: f64 = v
                .parse()
                .map_err(|_| err(format!("invalid feature value `{v}`")))?;
            if !v.is_finite() {
                return Err(err(format!("feature value `{v}` is not finite")));
            }
            if let Some(d) = dim {
                if i > d {
                    return Err(ProblemError::InconsistentDimension {
                        line: line_no,
                        index: i,
                        dim: d,
                    });
                }
            }
            max_index = max_index.max(i);
            row.push((i - 1, v));
        }
        entries.push(row);
        labels.push(label);
        lines.push(line_no);
    }
    if labels.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    let dim = dim.unwrap_or(max_index).max(1);
    let mut features = vec![T::zero(); dim * labels.len()];
    for (r, row) in entries.iter().enumerate() {
        for &(i, v) in row {
            features[r * dim + i] = T::of(v);
        }
    }
    Dataset::new(dim, features, labels.into_iter().map(T::of).collect())
}

pub fn load_libsvm<T: Scalar>(
    path: &Path,
    dim: Option<usize>,
    mode: LabelMode,
) -> Result<Dataset<T>, ProblemError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProblemError::Io(format!("{}: {e}", path.display())))?;
    parse_libsvm(&text, dim, mode)
}

/// Synthetic data models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynthKind {
    /// Gaussian features, labels from a planted hyperplane, each label
    /// flipped with probability `label_noise`.
    SeparableLogistic { label_noise: f64 },
    /// Gaussian features, targets `d·w + noise·N(0,1)` for planted `w`.
    GaussianLeastSquares { noise: f64 },
}

impl SynthKind {
    pub fn separable_logistic() -> Self {
        SynthKind::SeparableLogistic { label_noise: 0.05 }
    }

    pub fn gaussian_least_squares() -> Self {
        SynthKind::GaussianLeastSquares { noise: 0.1 }
    }
}

/// Deterministic synthetic dataset with `samples` rows of dimension `dim`.
pub fn synth_dataset<T: Scalar>(
    dim: usize,
    samples: usize,
    kind: SynthKind,
    seed: u64,
) -> Result<Dataset<T>, ProblemError> {
    if dim == 0 || samples == 0 {
        return Err(ProblemError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted: Vec<f64> = (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) / (dim as f64).sqrt())
        .collect();
    let mut features = Vec::with_capacity(dim * samples);
    let mut targets = Vec::with_capacity(samples);
    for _ in 0..samples {
        let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let score: f64 = row.iter().zip(&planted).map(|(a, b)| a * b).sum();
        let target = match kind {
            SynthKind::SeparableLogistic { label_noise } => {
                let label = if score >= 0.0 { 1.0 } else { -1.0 };
                if rng.random::<f64>() < label_noise {
                    -label
                } else {
                    label
                }
            }
            SynthKind::GaussianLeastSquares { noise } => {
                score + noise * rng.sample::<f64, _>(StandardNormal)
            }
        };
        features.extend(row.into_iter().map(T::of));
        targets.push(T::of(target));
    }
    Dataset::new(dim, features, targets)
}
