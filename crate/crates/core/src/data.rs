//! Synthetic datasets, the IDX image/label container, and class-balanced subsets.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linear::RegressionSet;
use crate::mlp::Batch;
use crate::numerics::{Matrix, Rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Split {
    Train,
    Test,
}

/// Features `x` (`N x d_in`) and targets `y` (`N x k`).
///
/// For classification sets `labels` holds the class of each row and the
/// rows of `y` are one-hot (up to label smoothing).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Option<Vec<u8>>,
    pub split: Split,
}

/// What [`gen_gaussian`] puts in the targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    /// Balanced one-hot classes, sample `i` in class `i mod k`.
    Classes(usize),
    /// A single target alternating `+1, -1`.
    Regression,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    pub fn batch(&self) -> Batch {
        Batch {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }

    /// The single-output regression view used by the linear model.
    pub fn regression(&self) -> Result<RegressionSet> {
        if self.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                what: "regression targets",
                expected: 1,
                found: self.output_dim(),
            });
        }
        RegressionSet::new(self.x.clone(), self.y.column(0))
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: Matrix::from_fn(indices.len(), self.x.cols(), |i, j| self.x[(indices[i], j)]),
            y: Matrix::from_fn(indices.len(), self.y.cols(), |i, j| self.y[(indices[i], j)]),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            split: self.split,
        }
    }

    /// Lowers the hot entry of every one-hot target to `1 - eps`.
    pub fn with_label_smoothing(mut self, eps: f64) -> Dataset {
        if let Some(labels) = &self.labels {
            for (r, &c) in labels.iter().enumerate() {
                self.y[(r, c as usize)] = 1.0 - eps;
            }
        }
        self
    }

    /// Restricts a classification set to the given classes, relabelled `0..classes.len()`.
    pub fn restrict_classes(&self, classes: &[u8]) -> Result<Dataset> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("dataset has no class labels".into()))?;
        let rows: Vec<usize> = (0..self.len()).filter(|&r| classes.contains(&labels[r])).collect();
        let new_labels: Vec<u8> = rows
            .iter()
            .map(|&r| classes.iter().position(|&c| c == labels[r]).unwrap() as u8)
            .collect();
        Ok(Dataset {
            x: Matrix::from_fn(rows.len(), self.x.cols(), |i, j| self.x[(rows[i], j)]),
            y: one_hot(&new_labels, classes.len()),
            labels: Some(new_labels),
            split: self.split,
        })
    }
}

/// Input preprocessing fitted on a training set and applied to any split.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Preprocess {
    /// Features as loaded.
    Raw,
    /// Subtract the per-feature training mean, then scale all features by one
    /// factor so the training inputs have mean squared norm `target`.
    CenterScale { target: f64 },
}

/// The affine map `x -> (x - mean) * scale` fitted by [`Preprocess::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct InputMap {
    pub mean: Vec<f64>,
    pub scale: f64,
}

impl Preprocess {
    pub fn fit(self, train: &Dataset) -> Result<InputMap> {
        let (n, d) = (train.len(), train.input_dim());
        match self {
            Preprocess::Raw => Ok(InputMap {
                mean: vec![0.0; d],
                scale: 1.0,
            }),
            Preprocess::CenterScale { target } => {
                if !(target > 0.0 && target.is_finite()) || n == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "centering needs samples and a positive target norm (got {target})"
                    )));
                }
                let mut mean = vec![0.0; d];
                for r in 0..n {
                    mean.iter_mut().zip(train.x.row(r)).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut ss = 0.0;
                for r in 0..n {
                    ss += train.x.row(r).iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
                }
                if ss == 0.0 {
                    return Err(Error::InvalidConfig("all training inputs are identical".into()));
                }
                Ok(InputMap {
                    mean,
                    scale: libm::sqrt(target * n as f64 / ss),
                })
            }
        }
    }
}

impl InputMap {
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.input_dim() != self.mean.len() {
            return Err(Error::ShapeMismatch {
                what: "input dimension",
                expected: self.mean.len(),
                found: ds.input_dim(),
            });
        }
        let mut out = ds.clone();
        for r in 0..out.len() {
            out.x.row_mut(r).iter_mut().zip(&self.mean).for_each(|(v, m)| *v = (*v - m) * self.scale);
        }
        Ok(out)
    }
}

pub fn one_hot(labels: &[u8], classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), classes, |i, j| if labels[i] as usize == j { 1.0 } else { 0.0 })
}

/// Rows i.i.d. `N(0, I/d)` with balanced labels.
pub fn gen_gaussian(rng: &mut Rng, n: usize, d: usize, labels: LabelKind) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidConfig("dataset needs N >= 1 and d >= 1".into()));
    }
    let mut x = Matrix::zeros(n, d);
    rng.fill_normal(x.as_mut_slice(), 1.0 / libm::sqrt(d as f64));
    let (y, labels) = match labels {
        LabelKind::Regression => (
            Matrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
            None,
        ),
        LabelKind::Classes(k) => {
            if k == 0 || k > 256 {
                return Err(Error::InvalidConfig(format!("class count {k} outside 1..=256")));
            }
            let l: Vec<u8> = (0..n).map(|i| (i % k) as u8).collect();
            (one_hot(&l, k), Some(l))
        }
    };
    Ok(Dataset {
        x,
        y,
        labels,
        split: Split::Train,
    })
}

/// `k` well-separated classes: class means drawn once from `N(0, separation^2 I / d)`,
/// samples are a mean plus `N(0, I/d)` noise. Labels balanced as in [`gen_gaussian`].
pub fn gen_mixture(rng: &mut Rng, n: usize, d: usize, k: usize, separation: f64) -> Result<Dataset> {
    let mut means = Matrix::zeros(k.max(1), d.max(1));
    rng.fill_normal(means.as_mut_slice(), separation / libm::sqrt(d.max(1) as f64));
    let mut ds = gen_gaussian(rng, n, d, LabelKind::Classes(k))?;
    let labels = ds.labels.clone().unwrap_or_default();
    for (r, &c) in labels.iter().enumerate() {
        for (xv, mv) in ds.x.row_mut(r).iter_mut().zip(means.row(c as usize)) {
            *xv += mv;
        }
    }
    Ok(ds)
}

/// The single-sample set `x = 1, y = 0`.
pub fn warmup_dataset() -> Dataset {
    Dataset {
        x: Matrix::from_fn(1, 1, |_, _| 1.0),
        y: Matrix::zeros(1, 1),
        labels: None,
        split: Split::Train,
    }
}

/// A parsed IDX image file: `count` images of `rows x cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let chunk = bytes.get(at..at + 4).ok_or(Error::TruncatedFile {
        needed: at + 4,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let needed = header
        .checked_add(len)
        .ok_or(Error::TruncatedFile {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    bytes.get(header..needed).ok_or(Error::TruncatedFile {
        needed,
        available: bytes.len(),
    })
}

/// Big-endian IDX image file (magic `0x00000803`, three dimensions).
pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let len = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(Error::TruncatedFile {
            needed: usize::MAX,
            available: bytes.len(),
        })?;
    let pixels = payload(bytes, 16, len)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

/// Big-endian IDX label file (magic `0x00000801`, one dimension); every
/// label must be below `classes`.
pub fn parse_idx_labels(bytes: &[u8], classes: usize) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let labels = payload(bytes, 8, count)?;
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(labels.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Flattened images times `pixel_scale` (use `1/255` for `[0, 1]` features)
/// with one-hot targets.
pub fn dataset_from_idx(
    images: &IdxImages,
    labels: &[u8],
    classes: usize,
    pixel_scale: f64,
    split: Split,
) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::ShapeMismatch {
            what: "IDX label count",
            expected: images.count,
            found: labels.len(),
        });
    }
    if images.count == 0 {
        return Err(Error::InvalidConfig("IDX file holds no images".into()));
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let d = images.rows * images.cols;
    let x = Matrix::from_vec(
        images.count,
        d,
        images.pixels.iter().map(|&p| p as f64 * pixel_scale).collect(),
    )?;
    Ok(Dataset {
        x,
        y: one_hot(labels, classes),
        labels: Some(labels.to_vec()),
        split,
    })
}

/// Indices of a class-balanced subset of `size` samples: every class gets
/// `size / classes` samples and the first `size % classes` classes one more.
/// Within a class the samples are a seeded random choice; the returned order
/// is a seeded shuffle of the union.
pub fn balanced_subset(labels: &[u8], classes: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if classes == 0 {
        return Err(Error::InvalidConfig("need at least one class".into()));
    }
    let mut rng = Rng::new(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l as u8, classes });
        }
        by_class[l].push(i);
    }
    let mut picked = Vec::with_capacity(size);
    for (c, members) in by_class.iter_mut().enumerate() {
        let quota = size / classes + usize::from(c < size % classes);
        if members.len() < quota {
            return Err(Error::InvalidConfig(format!(
                "class {c} has {} samples, subset needs {quota}",
                members.len()
            )));
        }
        rng.shuffle(members);
        picked.extend_from_slice(&members[..quota]);
    }
    rng.shuffle(&mut picked);
    Ok(picked)
}
