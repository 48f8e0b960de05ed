//! Dataset ingestion: MNIST-style IDX files (optionally gzipped), synthetic
//! Gaussian clusters, and seeded mini-batching.

use std::borrow::Cow;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{RngSeed, Stream};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Raw IDX image payload: `n` images of `rows × cols` unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub n: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    /// Flattened `n × (rows·cols)` matrix scaled to `[0, 1]` by dividing by 255.
    pub fn to_inputs(&self) -> Array2<f64> {
        let width = self.rows * self.cols;
        Array2::from_shape_fn((self.n, width), |(i, j)| {
            f64::from(self.pixels[i * width + j]) / 255.0
        })
    }
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Cow<'_, [u8]>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        Ok(Cow::Owned(out))
    } else {
        Ok(Cow::Borrowed(bytes))
    }
}

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4-byte slice")))
        .ok_or_else(|| Error::Format(format!("header truncated at byte {offset}")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_be_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format(format!(
            "magic 0x{magic:08x}, expected 0x{expected:08x}"
        )));
    }
    Ok(())
}

fn payload(bytes: &[u8], header: usize, expected: usize) -> Result<&[u8]> {
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Length { expected, actual });
    }
    Ok(&bytes[header..])
}

/// Parses an IDX image file (`0x00000803`); gzip input is detected and inflated.
pub fn read_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let bytes = maybe_gunzip(bytes)?;
    check_magic(&bytes, IDX_IMAGES_MAGIC)?;
    let n = read_be_u32(&bytes, 4)? as usize;
    let rows = read_be_u32(&bytes, 8)? as usize;
    let cols = read_be_u32(&bytes, 12)? as usize;
    let pixels = payload(&bytes, 16, n * rows * cols)?.to_vec();
    Ok(IdxImages {
        n,
        rows,
        cols,
        pixels,
    })
}

/// Parses an IDX label file (`0x00000801`); gzip input is detected and inflated.
pub fn read_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let bytes = maybe_gunzip(bytes)?;
    check_magic(&bytes, IDX_LABELS_MAGIC)?;
    let n = read_be_u32(&bytes, 4)? as usize;
    Ok(payload(&bytes, 8, n)?.to_vec())
}

pub fn write_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for word in [
        IDX_IMAGES_MAGIC,
        images.n as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    IdxFiles,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub k: usize,
    pub provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        k: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(
                "inputs vs labels",
                inputs.nrows(),
                labels.len(),
            ));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange { index, label, k });
        }
        crate::numeric::check_finite(inputs.view(), "dataset inputs")?;
        Ok(Self {
            inputs,
            labels,
            k,
            provenance,
        })
    }

    /// Pairs parsed IDX images and labels into a dataset of `k` classes.
    pub fn from_idx(images: &IdxImages, labels: &[u8], k: usize) -> Result<Self> {
        if images.n != labels.len() {
            return Err(Error::shape(
                "IDX image count vs label count",
                images.n,
                labels.len(),
            ));
        }
        let labels = labels.iter().map(|&l| usize::from(l)).collect();
        Self::new(images.to_inputs(), labels, k, Provenance::IdxFiles)
    }

    /// Reads an image/label file pair, keeping at most `limit` leading samples.
    pub fn load_idx(images: &Path, labels: &Path, k: usize, limit: Option<usize>) -> Result<Self> {
        let mut imgs = read_idx_images(&read_file(images)?)?;
        let mut lbls = read_idx_labels(&read_file(labels)?)?;
        if imgs.n != lbls.len() {
            return Err(Error::shape(
                "IDX image count vs label count",
                imgs.n,
                lbls.len(),
            ));
        }
        if let Some(limit) = limit.filter(|&l| l < imgs.n) {
            imgs.pixels.truncate(limit * imgs.rows * imgs.cols);
            imgs.n = limit;
            lbls.truncate(limit);
        }
        Self::from_idx(&imgs, &lbls, k)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn select(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        (
            self.inputs.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    pub fn inputs_view(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub k: usize,
    pub d: usize,
    pub n_per_class: usize,
    /// Class means sit at this distance from the origin.
    pub mean_radius: f64,
    pub cluster_std: f64,
    pub seed: RngSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d == 0 || self.n_per_class == 0 {
            return Err(Error::InvalidArgument(format!(
                "synthetic spec needs k >= 2, d >= 1, n_per_class >= 1; got k={}, d={}, n={}",
                self.k, self.d, self.n_per_class
            )));
        }
        if !(self.mean_radius > 0.0 && self.mean_radius.is_finite()) {
            return Err(Error::InvalidArgument(
                "mean_radius must be positive".into(),
            ));
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::InvalidArgument(
                "cluster_std must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Class means: equally spaced on a circle for `d = 2`, otherwise
    /// orthonormal directions (Gram-Schmidt on Gaussian draws; random unit
    /// directions once `k > d`). For `d = 1` they are evenly spaced on
    /// `[-radius, radius]`.
    pub fn class_means(&self) -> Array2<f64> {
        let (k, d, r) = (self.k, self.d, self.mean_radius);
        if d == 2 {
            return Array2::from_shape_fn((k, 2), |(j, t)| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                r * if t == 0 { angle.cos() } else { angle.sin() }
            });
        }
        if d == 1 {
            return Array2::from_shape_fn((k, 1), |(j, _)| {
                r * (2.0 * j as f64 / (k - 1) as f64 - 1.0)
            });
        }
        let mut rng = self.seed.rng(Stream::SyntheticMeans);
        let mut means = Array2::<f64>::zeros((k, d));
        for j in 0..k {
            loop {
                let mut v: ndarray::Array1<f64> =
                    (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                if j < d {
                    for prev in 0..j {
                        let p = means.row(prev).to_owned() / r;
                        let proj = v.dot(&p);
                        v.scaled_add(-proj, &p);
                    }
                }
                let norm = v.dot(&v).sqrt();
                if norm > 1e-8 {
                    means.row_mut(j).assign(&(v * (r / norm)));
                    break;
                }
            }
        }
        means
    }
}

/// Training split of the synthetic task.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    make_synthetic_split(spec, Split::Train)
}

/// Both splits share class means; noise comes from split-specific streams.
/// Samples are laid out class by class.
pub fn make_synthetic_split(spec: &SyntheticSpec, split: Split) -> Result<LabeledDataset> {
    spec.validate()?;
    let means = spec.class_means();
    let mut rng = spec.seed.rng(match split {
        Split::Train => Stream::SyntheticTrain,
        Split::Test => Stream::SyntheticTest,
    });
    let n = spec.k * spec.n_per_class;
    let mut inputs = Array2::zeros((n, spec.d));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in inputs.outer_iter_mut().enumerate() {
        let class = i / spec.n_per_class;
        for (v, &mu) in row.iter_mut().zip(means.row(class)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = mu + spec.cluster_std * z;
        }
        labels.push(class);
    }
    LabeledDataset::new(inputs, labels, spec.k, Provenance::Synthetic)
}

/// A seeded permutation of `0..n` cut into consecutive slices of
/// `batch_size`; the last slice may be short.
pub fn make_batches(n: usize, batch_size: usize, seed: RngSeed) -> Result<Vec<Vec<usize>>> {
    let mut rng = seed.rng(Stream::Batching);
    batches_from(n, batch_size, &mut rng)
}

pub(crate) fn batches_from(
    n: usize,
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument(
            "batch_size must be at least 1".into(),
        ));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
