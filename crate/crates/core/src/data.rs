//! Image datasets: CIFAR binary files and a synthetic class-conditional
//! Gaussian-blob generator.
//!
//! Pixels are stored as `f64` in `[0, 1]`, quantized to multiples of 1/255 so
//! that every dataset survives a CIFAR-binary round trip bit for bit.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{NtkError, Result};
use crate::tensor::Tensor;

/// One CIFAR record: label byte followed by 3x32x32 planar RGB bytes.
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labelled images, row-major `n x (C*H*W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Vec<usize>,
    images: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        shape: Vec<usize>,
        images: Vec<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let d: usize = shape.iter().product();
        if d == 0 || images.len() != d * labels.len() {
            return Err(NtkError::Data(format!(
                "{} pixel values for {} images of shape {shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(NtkError::Data(format!("label {l} >= class count {num_classes}")));
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(NtkError::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            shape,
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn image_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let d = self.image_len();
        &self.images[i * d..(i + 1) * d]
    }

    /// Stacks the given samples into a `(B, C, H, W)` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.shape);
        (Tensor::from_raw(shape, data), labels)
    }

    /// Indices of samples whose label is in `classes`.
    pub fn indices_of(&self, classes: &BTreeSet<usize>) -> Vec<usize> {
        (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub classes: usize,
    pub per_class: usize,
    /// `(C, H, W)`.
    pub shape: Vec<usize>,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

const BLOBS_PER_CLASS: usize = 2;

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Class mean images: each class is a sum of Gaussian blobs with its own
/// centers, radii and channel colors.
pub fn class_prototypes(params: &SyntheticParams) -> Result<Vec<Vec<f64>>> {
    if params.shape.len() != 3 || params.shape.contains(&0) {
        return Err(NtkError::Config(format!(
            "synthetic images need a (C, H, W) shape, got {:?}",
            params.shape
        )));
    }
    let (ch, h, w) = (params.shape[0], params.shape[1], params.shape[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(0);
    let mut protos = Vec::with_capacity(params.classes);
    for _ in 0..params.classes {
        let mut img = vec![0.0; ch * h * w];
        for _ in 0..BLOBS_PER_CLASS {
            let cy = rng.random_range(0.0..h as f64);
            let cx = rng.random_range(0.0..w as f64);
            let sigma = rng.random_range(0.6..1.6) * (h.min(w) as f64 / 8.0);
            let color: Vec<f64> = (0..ch).map(|_| rng.random_range(0.2..1.0)).collect();
            for (c, &col) in color.iter().enumerate() {
                for y in 0..h {
                    for x in 0..w {
                        let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        img[(c * h + y) * w + x] += col * (-r2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        protos.push(img.into_iter().map(|v| v.min(1.0)).collect());
    }
    Ok(protos)
}

/// Class-conditional Gaussian-blob images. Train and test splits share the
/// class prototypes and use independent noise. Labels cycle `0, 1, ..., C-1`.
pub fn synthetic_dataset(params: &SyntheticParams, split: Split) -> Result<Dataset> {
    if params.classes < 2 {
        return Err(NtkError::Config("synthetic data needs at least 2 classes".into()));
    }
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(NtkError::Config(format!("noise must be a nonnegative number, got {}", params.noise)));
    }
    let protos = class_prototypes(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    let d: usize = params.shape.iter().product();
    let n = params.classes * params.per_class;
    let mut images = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % params.classes;
        for &m in &protos[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            images.push(quantize(m + params.noise * z));
        }
        labels.push(label);
    }
    Dataset::new(params.shape.clone(), images, labels, params.classes, split)
}

/// Reads a CIFAR-10 binary batch file.
pub fn load_cifar_binary(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| NtkError::io(path, e))?;
    decode_cifar(&bytes, split)
}

pub fn decode_cifar(bytes: &[u8], split: Split) -> Result<Dataset> {
    let full = bytes.len() / CIFAR_RECORD_BYTES;
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(NtkError::Data(format!(
            "truncated CIFAR record at byte offset {} ({} trailing bytes)",
            full * CIFAR_RECORD_BYTES,
            bytes.len() % CIFAR_RECORD_BYTES
        )));
    }
    let mut images = Vec::with_capacity(full * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(full);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(NtkError::Data(format!(
                "label {label} at byte offset {} is not a CIFAR-10 class",
                r * CIFAR_RECORD_BYTES
            )));
        }
        labels.push(label);
        images.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Dataset::new(vec![3, 32, 32], images, labels, CIFAR_CLASSES, split)
}

/// Encodes a 3x32x32 dataset in CIFAR-10 binary layout.
pub fn encode_cifar(data: &Dataset) -> Result<Vec<u8>> {
    if data.shape() != [3, 32, 32] || data.num_classes() > 256 {
        return Err(NtkError::Data(format!(
            "CIFAR layout needs 3x32x32 images, got {:?}",
            data.shape()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_BYTES);
    for i in 0..data.len() {
        out.push(data.labels()[i] as u8);
        out.extend(data.image(i).iter().map(|&v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

pub fn write_cifar_binary(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cifar(data)?).map_err(|e| NtkError::io(path, e))
}
