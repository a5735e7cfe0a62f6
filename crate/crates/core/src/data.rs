//! Datasets, label regimes and batching.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::objectives::{LabelRegime, RegimeKind};
use crate::rng::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Unlabeled,
}

impl Label {
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(c),
            Label::Unlabeled => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Matrix,
    pub labels: Vec<Label>,
}

impl LabeledBatch {
    pub fn new(x: Matrix, labels: Vec<Label>) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::dim(
                "LabeledBatch",
                format!("{} rows, {} labels", x.rows(), labels.len()),
            ));
        }
        Ok(LabeledBatch { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<Label>,
    pub regime: LabelRegime,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<Label>, regime: LabelRegime, split: Split) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::dim(
                "Dataset",
                format!("{} rows, {} labels", x.rows(), labels.len()),
            ));
        }
        if let Some(c) = labels
            .iter()
            .filter_map(|l| l.class())
            .find(|&c| c >= regime.num_classes)
        {
            return Err(Error::arg(format!(
                "label {c} out of range for {} classes",
                regime.num_classes
            )));
        }
        Ok(Dataset {
            x,
            labels,
            regime,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|l| l.class().is_some()).count()
    }

    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        LabeledBatch {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn as_batch(&self) -> LabeledBatch {
        LabeledBatch {
            x: self.x.clone(),
            labels: self.labels.clone(),
        }
    }
}

/// Isotropic 2-D Gaussian mixture, one component per class.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmSpec {
    pub means: Vec<[f64; 2]>,
    pub cov_scale: f64,
    pub per_class_count: usize,
}

impl GmmSpec {
    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(Error::arg("a mixture needs at least one component"));
        }
        for (i, a) in self.means.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::arg(format!("mean {i} is not finite")));
            }
            if self.means[..i].contains(a) {
                return Err(Error::arg(format!("mean {i} duplicates an earlier mean")));
            }
        }
        if !(self.cov_scale >= 0.0 && self.cov_scale.is_finite()) {
            return Err(Error::arg(format!("cov_scale must be nonnegative, got {}", self.cov_scale)));
        }
        Ok(())
    }
}

/// Samples `per_class_count` points per component, class by class.
pub fn make_gmm(spec: &GmmSpec, rng: Rng, split: Split) -> Result<Dataset> {
    spec.validate()?;
    let mut g = rng.generator();
    let k = spec.num_classes();
    let n = k * spec.per_class_count;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.per_class_count {
            for &mu in mean {
                let z: f64 = g.sample(StandardNormal);
                data.push(mu + spec.cov_scale * z);
            }
            labels.push(Label::Class(c));
        }
    }
    Dataset::new(
        Matrix::from_vec(n, 2, data)?,
        labels,
        LabelRegime::supervised(k),
        split,
    )
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an IDX image/label file pair. Pixels are scaled to `[0, 1]` and
/// each image is flattened row-major.
pub fn read_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "image file magic is {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_u32(images, 4, "image file")? as usize;
    let rows = read_u32(images, 8, "image file")? as usize;
    let cols = read_u32(images, 12, "image file")? as usize;

    let magic = read_u32(labels, 0, "label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "label file magic is {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = read_u32(labels, 4, "label file")? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "image file holds {count} images but label file holds {label_count} labels"
        )));
    }

    let dim = rows * cols;
    let pixels = images
        .get(16..16 + count * dim)
        .ok_or_else(|| Error::Format(format!("image file too short for {count} images of {rows}x{cols}")))?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or_else(|| Error::Format(format!("label file too short for {count} labels")))?;

    let x = Matrix::from_vec(count, dim, pixels.iter().map(|&p| f64::from(p) / 255.0).collect())?;
    let labels: Vec<Label> = label_bytes.iter().map(|&l| Label::Class(l as usize)).collect();
    let num_classes = label_bytes.iter().map(|&l| l as usize + 1).max().unwrap_or(1);
    Dataset::new(x, labels, LabelRegime::supervised(num_classes), Split::Train)
}

/// Writes an IDX pair for images of `rows × cols`. Values are mapped back to
/// bytes by `round(255·v)` after clamping to `[0, 1]`.
pub fn write_idx(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::dim(
            "write_idx",
            format!("{rows}x{cols} images for rows of width {}", data.dim()),
        ));
    }
    let count = u32::try_from(data.len()).map_err(|_| Error::arg("too many images for IDX"))?;
    let mut img = Vec::with_capacity(16 + data.x.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&count.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(data.x.as_slice().iter().map(|&v| pixel_byte(v)));

    let mut lab = Vec::with_capacity(8 + data.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&count.to_be_bytes());
    for l in &data.labels {
        let c = l
            .class()
            .ok_or_else(|| Error::arg("IDX label files cannot hold unlabeled rows"))?;
        lab.push(u8::try_from(c).map_err(|_| Error::arg(format!("label {c} does not fit a byte")))?);
    }
    fs::File::create(images_path)?.write_all(&img)?;
    fs::File::create(labels_path)?.write_all(&lab)?;
    Ok(())
}

/// `round(255·v)` with halves rounded up, clamped to the byte range.
pub fn pixel_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Keeps exactly `labeled_per_class` labels per class and hides the rest.
pub fn mask_labels(data: &Dataset, labeled_per_class: usize, rng: Rng) -> Result<Dataset> {
    let k = data.regime.num_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, l) in data.labels.iter().enumerate() {
        if let Some(c) = l.class() {
            by_class[c].push(i);
        }
    }
    if let Some((c, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, m)| m.len() < labeled_per_class)
    {
        return Err(Error::arg(format!(
            "class {c} has {} labeled examples, {labeled_per_class} requested",
            members.len()
        )));
    }
    let mut g = rng.generator();
    let mut keep = vec![false; data.len()];
    for members in &mut by_class {
        members.shuffle(&mut g);
        for &i in &members[..labeled_per_class] {
            keep[i] = true;
        }
    }
    let labels = data
        .labels
        .iter()
        .zip(&keep)
        .map(|(&l, &k)| if k { l } else { Label::Unlabeled })
        .collect();
    Ok(Dataset {
        x: data.x.clone(),
        labels,
        regime: data.regime.with_kind(RegimeKind::SemiSupervised),
        split: data.split,
    })
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Matrix> {
    let mut out = Matrix::zeros(labels.len(), num_classes);
    for (i, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::arg(format!("label {c} out of range for {num_classes} classes")));
        }
        out[(i, c)] = 1.0;
    }
    Ok(out)
}

/// A shuffled partition of `0..len` into chunks of `n`; the short tail is dropped.
pub fn batch_indices(len: usize, n: usize, rng: Rng) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::arg("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng.generator());
    Ok(order.chunks_exact(n).map(<[usize]>::to_vec).collect())
}

pub fn batches(data: &Dataset, n: usize, rng: Rng) -> Result<Vec<LabeledBatch>> {
    Ok(batch_indices(data.len(), n, rng)?
        .iter()
        .map(|idx| data.select(idx))
        .collect())
}

/// Balanced class labels for a fake batch: `i mod K`, so every class gets
/// `⌊n/K⌋` rows and the remainder goes round-robin from class 0.
pub fn balanced_labels(n: usize, num_classes: usize) -> Vec<usize> {
    (0..n).map(|i| i % num_classes).collect()
}
