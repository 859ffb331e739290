//! Empirical NTK on a frozen probe set and the kernel metrics built on it.
//!
//! The kernel entry for samples `i, j` is `g_i . g_j` with `g_i` the parameter
//! gradient of a scalarized network output. Metrics:
//! - spectral norm: largest eigenvalue of the (PSD) kernel;
//! - kernel distance `S(a, b) = 1 - CKA(a, b)`;
//! - velocity `S(K_t, K_{t+dt}) / dt`;
//! - alignment `CKA(K, Y Y^T)` with the label kernel.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{NtkError, Result};
use crate::linalg::symmetric_eigen;
use crate::models::{forward, ModelSpec};
use crate::tensor::{ParamVector, Tensor};

/// Relative tolerance below which negative eigenvalues are treated as roundoff.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Symmetric `n x n` kernel matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl GramMatrix {
    /// Builds from row-major entries, replacing the matrix by its symmetric
    /// part.
    pub fn new(n: usize, mut entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(NtkError::Config("empty Gram matrix".into()));
        }
        if entries.len() != n * n {
            return Err(NtkError::Config(format!(
                "{n}x{n} Gram matrix needs {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(NtkError::numerical(
                "Gram matrix",
                format!("entry ({}, {}) is not finite", pos / n, pos % n),
            ));
        }
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (entries[i * n + j] + entries[j * n + i]);
                entries[i * n + j] = avg;
                entries[j * n + i] = avg;
            }
        }
        Ok(GramMatrix { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(NtkError::Config("Gram rows must form a square matrix".into()));
        }
        GramMatrix::new(n, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        GramMatrix { n, entries }
    }

    /// Gram matrix of the rows of a row-major `n x d` feature matrix.
    pub fn from_features(n: usize, d: usize, features: &[f64]) -> Result<Self> {
        if features.len() != n * d {
            return Err(NtkError::Config("feature matrix size mismatch".into()));
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let fi = &features[i * d..(i + 1) * d];
            for j in i..n {
                let fj = &features[j * d..(j + 1) * d];
                let v: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        GramMatrix::new(n, out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        GramMatrix::new(self.n, self.entries.iter().map(|v| v * c).collect())
    }

    /// `P K P^T` for the permutation sending row `perm[i]` to row `i`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n;
        if perm.len() != n {
            return Err(NtkError::Config("permutation length mismatch".into()));
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(perm[i], perm[j]);
            }
        }
        GramMatrix::new(n, out)
    }

    /// `H K H` with `H = I - 11^T/n`.
    pub fn double_centered(&self) -> Self {
        let n = self.n;
        let nf = n as f64;
        let row_means: Vec<f64> = (0..n)
            .map(|i| self.entries[i * n..(i + 1) * n].iter().sum::<f64>() / nf)
            .collect();
        let col_means: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| self.get(i, j)).sum::<f64>() / nf)
            .collect();
        let grand = row_means.iter().sum::<f64>() / nf;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j) - row_means[i] - col_means[j] + grand;
            }
        }
        GramMatrix { n, entries: out }
    }

    /// Eigendecomposition with PSD repair: eigenvalues in
    /// `(-1e-8 * spectral_radius, 0)` are clamped to zero, anything more
    /// negative is an error.
    pub fn spectrum(&self) -> Result<Spectrum> {
        let (mut values, vectors) = symmetric_eigen(self.n, &self.entries)?;
        let radius = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = -PSD_TOLERANCE * radius;
        if let Some(&min) = values.last() {
            if min < floor {
                return Err(NtkError::numerical(
                    "Gram spectrum",
                    format!("eigenvalue {min:e} is below the PSD floor {floor:e}"),
                ));
            }
        }
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Spectrum {
            n: self.n,
            eigenvalues: values,
            eigenvectors: vectors,
        })
    }
}

/// Eigenvalues (descending) and the matching orthonormal eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    n: usize,
    eigenvalues: Vec<f64>,
    /// Row-major `n x n`; column `i` belongs to `eigenvalues[i]`.
    eigenvectors: Vec<f64>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvector_matrix(&self) -> &[f64] {
        &self.eigenvectors
    }

    /// `Q[row][col]`.
    pub fn q(&self, row: usize, col: usize) -> f64 {
        self.eigenvectors[row * self.n + col]
    }

    /// `Q^T v`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|col| (0..self.n).map(|row| self.q(row, col) * v[row]).sum())
            .collect()
    }

    /// `Q v`.
    pub fn unproject(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|row| (0..self.n).map(|col| self.q(row, col) * v[col]).sum())
            .collect()
    }

    /// `Q diag(lambda) Q^T`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = (0..n)
                    .map(|k| self.q(i, k) * self.eigenvalues[k] * self.q(j, k))
                    .sum();
            }
        }
        out
    }
}

/// Which scalar of a multi-output network the kernel differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalarization {
    TrueClassLogit,
    SumLogits,
    MeanLogits,
}

impl FromStr for Scalarization {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_class_logit" => Ok(Scalarization::TrueClassLogit),
            "sum_logits" => Ok(Scalarization::SumLogits),
            "mean_logits" => Ok(Scalarization::MeanLogits),
            _ => Err(NtkError::Config(format!("unknown scalarization {s:?}"))),
        }
    }
}

impl fmt::Display for Scalarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scalarization::TrueClassLogit => "true_class_logit",
            Scalarization::SumLogits => "sum_logits",
            Scalarization::MeanLogits => "mean_logits",
        })
    }
}

impl Scalarization {
    /// Output-space seed vector for one sample.
    pub fn seed(&self, label: usize, outputs: usize) -> Result<Vec<f64>> {
        Ok(match self {
            Scalarization::TrueClassLogit => {
                if label >= outputs {
                    return Err(NtkError::Data(format!(
                        "label {label} out of range for {outputs} outputs"
                    )));
                }
                let mut s = vec![0.0; outputs];
                s[label] = 1.0;
                s
            }
            Scalarization::SumLogits => vec![1.0; outputs],
            Scalarization::MeanLogits => vec![1.0 / outputs as f64; outputs],
        })
    }
}

/// Fixed batch of labelled inputs on which every kernel is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    input_shape: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    scalarization: Scalarization,
}

impl ProbeSet {
    pub fn new(
        input_shape: Vec<usize>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        scalarization: Scalarization,
    ) -> Result<Self> {
        let d: usize = input_shape.iter().product();
        if labels.is_empty() {
            return Err(NtkError::Config("probe set is empty".into()));
        }
        if d == 0 || inputs.len() != d * labels.len() {
            return Err(NtkError::Config(format!(
                "probe inputs have {} values, expected {} x {d}",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(ProbeSet {
            input_shape,
            inputs,
            labels,
            scalarization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn scalarization(&self) -> Scalarization {
        self.scalarization
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input(&self, i: usize) -> Tensor {
        let d = self.inputs.len() / self.labels.len();
        Tensor::from_raw(self.input_shape.clone(), self.inputs[i * d..(i + 1) * d].to_vec())
    }

    /// The first `k` samples (nested subsets share a prefix).
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(NtkError::Config(format!(
                "prefix of {k} from a probe set of {}",
                self.len()
            )));
        }
        let d = self.inputs.len() / self.labels.len();
        ProbeSet::new(
            self.input_shape.clone(),
            self.inputs[..k * d].to_vec(),
            self.labels[..k].to_vec(),
            self.scalarization,
        )
    }

    /// Reorders samples so that new sample `i` is old sample `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let d = self.inputs.len() / self.labels.len();
        let mut inputs = Vec::with_capacity(self.inputs.len());
        let mut labels = Vec::with_capacity(self.len());
        for &p in perm {
            inputs.extend_from_slice(&self.inputs[p * d..(p + 1) * d]);
            labels.push(self.labels[p]);
        }
        ProbeSet::new(self.input_shape.clone(), inputs, labels, self.scalarization)
    }

    pub fn with_scalarization(&self, scalarization: Scalarization) -> Self {
        ProbeSet {
            scalarization,
            ..self.clone()
        }
    }

    /// SHA-256 over shape, inputs, labels and scalarization, hex-encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for d in &self.input_shape {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &self.inputs {
            h.update(v.to_bits().to_le_bytes());
        }
        for l in &self.labels {
            h.update((*l as u64).to_le_bytes());
        }
        h.update(self.scalarization.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

/// Per-sample scalarized gradients, one row of length P per probe sample.
pub fn probe_gradients(spec: &ModelSpec, params: &ParamVector, probe: &ProbeSet) -> Result<Vec<f64>> {
    let p = params.dim();
    let mut jac = Vec::with_capacity(probe.len() * p);
    for i in 0..probe.len() {
        let (out, tape) = forward(spec, params, &probe.input(i))?;
        let outputs = out.shape()[1];
        let seed = Tensor::from_raw(
            vec![1, outputs],
            probe.scalarization.seed(probe.labels[i], outputs)?,
        );
        let g = tape.backward(params, &seed)?;
        if !g.data().iter().all(|v| v.is_finite()) {
            return Err(NtkError::numerical(
                format!("probe sample {i}"),
                "non-finite gradient",
            ));
        }
        jac.extend_from_slice(g.data());
    }
    Ok(jac)
}

/// Empirical NTK of the probe set under its scalarization.
pub fn empirical_ntk(spec: &ModelSpec, params: &ParamVector, probe: &ProbeSet) -> Result<GramMatrix> {
    let n = probe.len();
    if n == 0 {
        return Err(NtkError::Config("probe set is empty".into()));
    }
    let jac = probe_gradients(spec, params, probe)?;
    let p = params.dim();
    let mut gram = vec![0.0; n * n];
    // SAFETY: jac is n x p row-major, gram is n x n row-major.
    unsafe {
        matrixmultiply::dgemm(
            n,
            p,
            n,
            1.0,
            jac.as_ptr(),
            p as isize,
            1,
            jac.as_ptr(),
            1,
            p as isize,
            0.0,
            gram.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    GramMatrix::new(n, gram)
}

/// Largest eigenvalue (the spectral norm of a PSD kernel).
pub fn max_eigenvalue(k: &GramMatrix) -> Result<f64> {
    Ok(k.spectrum()?.eigenvalues[0])
}

/// Normalized Frobenius alignment `<a, b>_F / (|a|_F |b|_F)`, optionally
/// after double-centering both inputs.
pub fn cka(a: &GramMatrix, b: &GramMatrix, centered: bool) -> Result<f64> {
    if a.n != b.n {
        return Err(NtkError::Config(format!(
            "CKA of {}x{} and {}x{} kernels",
            a.n, a.n, b.n, b.n
        )));
    }
    let (ca, cb);
    let (a, b) = if centered {
        ca = a.double_centered();
        cb = b.double_centered();
        (&ca, &cb)
    } else {
        (a, b)
    };
    let saa: f64 = a.entries.iter().map(|v| v * v).sum();
    let sbb: f64 = b.entries.iter().map(|v| v * v).sum();
    if saa == 0.0 || sbb == 0.0 {
        return Err(NtkError::UndefinedSimilarity(
            "CKA with a zero-norm kernel".into(),
        ));
    }
    let inner: f64 = a.entries.iter().zip(&b.entries).map(|(x, y)| x * y).sum();
    // sqrt(s * s) == s exactly, so cka(k, k) is exactly 1
    Ok((inner / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `1 - CKA(a, b)`.
pub fn kernel_distance(a: &GramMatrix, b: &GramMatrix, centered: bool) -> Result<f64> {
    Ok(1.0 - cka(a, b, centered)?)
}

/// Kernel distance per unit time between two snapshots `dt` apart.
pub fn kernel_velocity(k_t: &GramMatrix, k_later: &GramMatrix, dt: usize, centered: bool) -> Result<f64> {
    if dt == 0 {
        return Err(NtkError::Config("velocity needs dt >= 1".into()));
    }
    Ok(kernel_distance(k_t, k_later, centered)? / dt as f64)
}

/// Label matrix `Y` whose outer product is the target kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    n: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LabelMatrix {
    /// One-hot `n x classes` indicator matrix.
    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(NtkError::Config("label matrix of an empty probe".into()));
        }
        let mut data = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(NtkError::Data(format!("label {l} out of range for {classes} classes")));
            }
            data[i * classes + l] = 1.0;
        }
        Ok(LabelMatrix {
            n: labels.len(),
            cols: classes,
            data,
        })
    }

    /// Single column of signed (e.g. +-1) targets.
    pub fn signed(y: &[f64]) -> Result<Self> {
        if y.is_empty() {
            return Err(NtkError::Config("label matrix of an empty probe".into()));
        }
        Ok(LabelMatrix {
            n: y.len(),
            cols: 1,
            data: y.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Y Y^T`.
    pub fn kernel(&self) -> Result<GramMatrix> {
        GramMatrix::from_features(self.n, self.cols, &self.data)
    }
}

/// `CKA(K, Y Y^T)`.
pub fn kernel_alignment(k: &GramMatrix, labels: &LabelMatrix, centered: bool) -> Result<f64> {
    cka(k, &labels.kernel()?, centered)
}
