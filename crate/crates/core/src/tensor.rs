//! Dense row-major tensors and flat parameter vectors.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NtkError, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero-sized dimensions, length mismatches and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(NtkError::Config(format!(
                "tensor shape {shape:?} has a zero dimension"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NtkError::Config(format!(
                "tensor shape {shape:?} needs {expected} entries, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(NtkError::numerical(
                "tensor",
                format!("entry {pos} is {}", data[pos]),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    /// Internal constructor for kernels that already guarantee the invariants
    /// (finiteness is checked by the tape after every op).
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NtkError::Config(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One named block of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Forward multiplier applied to the raw values (1 for standard
    /// parametrization, `1/sqrt(fan_in)` for NTK-style weights).
    pub multiplier: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed)
}

/// Identity of a parameter snapshot: tapes remember it so that a backward
/// pass against mutated parameters is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint {
    id: u64,
    generation: u64,
}

/// Flattened network parameters with a layer directory.
#[derive(Debug)]
pub struct ParamVector {
    segments: Vec<Segment>,
    data: Vec<f64>,
    id: u64,
    generation: u64,
}

impl Clone for ParamVector {
    fn clone(&self) -> Self {
        ParamVector {
            segments: self.segments.clone(),
            data: self.data.clone(),
            id: next_id(),
            generation: 0,
        }
    }
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.segments == other.segments && self.data == other.data
    }
}

impl ParamVector {
    /// Lays out the named segments back to back and fills them with `data`.
    pub fn new(layout: Vec<(String, Vec<usize>, f64)>, data: Vec<f64>) -> Result<Self> {
        let mut offset = 0;
        let mut segments = Vec::with_capacity(layout.len());
        for (name, shape, multiplier) in layout {
            if shape.contains(&0) {
                return Err(NtkError::Config(format!(
                    "segment {name} has empty shape {shape:?}"
                )));
            }
            if segments.iter().any(|s: &Segment| s.name == name) {
                return Err(NtkError::Config(format!("duplicate segment {name}")));
            }
            let seg = Segment {
                name,
                shape,
                offset,
                multiplier,
            };
            offset += seg.len();
            segments.push(seg);
        }
        if offset != data.len() {
            return Err(NtkError::Config(format!(
                "parameter layout covers {offset} entries but data has {}",
                data.len()
            )));
        }
        Ok(ParamVector {
            segments,
            data,
            id: next_id(),
            generation: 0,
        })
    }

    /// A zero vector with the same layout, e.g. to accumulate gradients.
    pub fn zeros_like(other: &ParamVector) -> Self {
        ParamVector {
            segments: other.segments.clone(),
            data: vec![0.0; other.data.len()],
            id: next_id(),
            generation: 0,
        }
    }

    pub(crate) fn with_layout_of(other: &ParamVector, data: Vec<f64>) -> Self {
        assert_eq!(other.data.len(), data.len());
        ParamVector {
            segments: other.segments.clone(),
            data,
            id: next_id(),
            generation: 0,
        }
    }

    /// Total parameter count P.
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segment_index(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; bumps the generation so existing tapes become stale.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.data
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            id: self.id,
            generation: self.generation,
        }
    }

    /// Raw (un-multiplied) values of one segment.
    pub fn view(&self, name: &str) -> Option<&[f64]> {
        self.segment(name).map(|s| &self.data[s.range()])
    }

    /// Splits into one tensor per segment, in layout order.
    pub fn to_layers(&self) -> Vec<(String, Tensor)> {
        self.segments
            .iter()
            .map(|s| {
                (
                    s.name.clone(),
                    Tensor::from_raw(s.shape.clone(), self.data[s.range()].to_vec()),
                )
            })
            .collect()
    }

    /// Inverse of [`ParamVector::to_layers`] for a given layout.
    pub fn from_layers(template: &ParamVector, layers: &[(String, Tensor)]) -> Result<Self> {
        if layers.len() != template.segments.len() {
            return Err(NtkError::Config(format!(
                "expected {} layers, got {}",
                template.segments.len(),
                layers.len()
            )));
        }
        let mut data = Vec::with_capacity(template.dim());
        for (seg, (name, t)) in template.segments.iter().zip(layers) {
            if &seg.name != name || seg.shape.as_slice() != t.shape() {
                return Err(NtkError::Config(format!(
                    "layer {name} {:?} does not match segment {} {:?}",
                    t.shape(),
                    seg.name,
                    seg.shape
                )));
            }
            data.extend_from_slice(t.data());
        }
        Ok(ParamVector::with_layout_of(template, data))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(NtkError::Config(format!(
                "parameter dims differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        for (a, b) in self.data_mut().iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in self.data_mut() {
            *v *= alpha;
        }
    }
}
