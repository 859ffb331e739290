//! Independent reference implementations of the kernel-regime mathematics.
//!
//! Nothing here goes through the tape or the GEMM kernels: gradients are
//! materialized by explicit per-layer loops, Gram matrices by plain dot
//! products, and the largest eigenvalue by power iteration. Tests compare
//! these against the production paths.
//!
//! Residual dynamics under a static kernel `K` and step size `eta`:
//! `e_{t+1} = (I - eta K) e_t`, or per eigenmode
//! `(Q^T e_t)_i = (1 - eta lambda_i)^t (Q^T e_0)_i`.

use crate::error::{NtkError, Result};
use crate::models::{forward, ModelKind, ModelSpec};
use crate::ntk::{empirical_ntk, GramMatrix, ProbeSet, Spectrum};
use crate::tensor::{ParamVector, Tensor};

/// Largest `n * P` the brute-force kernel will materialize.
pub const BRUTE_FORCE_MAX_ENTRIES: usize = 10_000_000;

/// Residual vector `f(x_i) - y_i` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualState {
    pub e: Vec<f64>,
    pub t: usize,
}

impl ResidualState {
    pub fn new(e: Vec<f64>) -> Self {
        ResidualState { e, t: 0 }
    }

    pub fn norm(&self) -> f64 {
        self.e.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Iterates `e <- (I - eta K) e`; returns `steps + 1` states starting at `e0`.
pub fn evolve_residuals(
    e0: &ResidualState,
    kernel: &GramMatrix,
    eta: f64,
    steps: usize,
) -> Result<Vec<ResidualState>> {
    let n = kernel.n();
    if e0.e.len() != n {
        return Err(NtkError::Config(format!(
            "residual of length {} under a {n}x{n} kernel",
            e0.e.len()
        )));
    }
    let mut out = Vec::with_capacity(steps + 1);
    out.push(e0.clone());
    let mut e = e0.e.clone();
    for s in 0..steps {
        let ke: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| kernel.get(i, j) * e[j]).sum())
            .collect();
        for (ei, kei) in e.iter_mut().zip(&ke) {
            *ei -= eta * kei;
        }
        out.push(ResidualState {
            e: e.clone(),
            t: e0.t + s + 1,
        });
    }
    Ok(out)
}

/// Residual in the eigenbasis after `t` steps: `(1 - eta lambda_i)^t (Q^T e0)_i`.
pub fn eigenmode_decay(e0: &ResidualState, spectrum: &Spectrum, eta: f64, t: usize) -> Result<Vec<f64>> {
    if e0.e.len() != spectrum.n() {
        return Err(NtkError::Config("residual length does not match the spectrum".into()));
    }
    let projected = spectrum.project(&e0.e);
    let exp = i32::try_from(t).map_err(|_| NtkError::Config(format!("step count {t} too large")))?;
    Ok(projected
        .iter()
        .zip(spectrum.eigenvalues())
        .map(|(p, l)| (1.0 - eta * l).powi(exp) * p)
        .collect())
}

/// Largest eigenvalue by power iteration (Rayleigh quotient), for PSD input.
pub fn power_iteration(k: &GramMatrix, max_iter: usize, tol: f64) -> Result<f64> {
    let n = k.n();
    // deterministic start with no special alignment to any basis vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let w: Vec<f64> = (0..n).map(|i| (0..n).map(|j| k.get(i, j) * v[j]).sum()).collect();
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        v = w;
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(NtkError::numerical("power iteration", format!("no convergence in {max_iter} iterations")))
}

// ---------------------------------------------------------------------------
// Explicit backpropagation for the model zoo

fn segment(params: &ParamVector, name: &str) -> Result<(Vec<f64>, f64, std::ops::Range<usize>)> {
    let seg = params
        .segment(name)
        .ok_or_else(|| NtkError::Config(format!("missing segment {name}")))?;
    let raw = &params.data()[seg.range()];
    Ok((raw.iter().map(|v| v * seg.multiplier).collect(), seg.multiplier, seg.range()))
}

struct ConvCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    argmax: Vec<usize>,
    channels_in: usize,
    side: (usize, usize),
}

fn conv_same(x: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, h: usize, wd: usize) -> Vec<f64> {
    let mut out = vec![0.0; cout * h * wd];
    for co in 0..cout {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b[co];
                for ci in 0..cin {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            let sx = xx as isize + kx as isize - 1;
                            if sy >= 0 && sy < h as isize && sx >= 0 && sx < wd as isize {
                                acc += w[((co * cin + ci) * 3 + ky) * 3 + kx]
                                    * x[(ci * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                }
                out[(co * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

fn relu_pool(pre: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let act: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    let mut arg = vec![0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let cands = [
                    (ch * h + 2 * oy) * w + 2 * ox,
                    (ch * h + 2 * oy) * w + 2 * ox + 1,
                    (ch * h + 2 * oy + 1) * w + 2 * ox,
                    (ch * h + 2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = cands[0];
                for &cand in &cands[1..] {
                    if act[cand] > act[best] {
                        best = cand;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = act[best];
                arg[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    (out, arg)
}

/// Parameter gradient of `seed . f(x)` for one sample, computed with
/// hand-written per-layer backpropagation.
pub fn explicit_gradient(spec: &ModelSpec, params: &ParamVector, x: &[f64], seed: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.input_len() || seed.len() != spec.num_classes {
        return Err(NtkError::Config("input or seed length does not match the model".into()));
    }
    let mut grad = vec![0.0; params.dim()];
    match spec.kind {
        ModelKind::Linear => {
            let (_, m, range) = segment(params, "fc.weight")?;
            let d = x.len();
            for (o, s) in seed.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    grad[range.start + o * d + j] = m * s * xj;
                }
            }
        }
        ModelKind::Mlp => {
            let n = spec.width;
            let d = x.len();
            let (w1, m1, r1) = segment(params, "fc1.weight")?;
            let (b1, mb1, rb1) = segment(params, "fc1.bias")?;
            let (w2, m2, r2) = segment(params, "fc2.weight")?;
            let (_, mb2, rb2) = segment(params, "fc2.bias")?;
            let pre: Vec<f64> = (0..n)
                .map(|u| b1[u] + (0..d).map(|j| w1[u * d + j] * x[j]).sum::<f64>())
                .collect();
            let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
            for (o, s) in seed.iter().enumerate() {
                for u in 0..n {
                    grad[r2.start + o * n + u] = m2 * s * hidden[u];
                }
                grad[rb2.start + o] = mb2 * s;
            }
            for u in 0..n {
                let dh: f64 = (0..spec.num_classes).map(|o| w2[o * n + u] * seed[o]).sum();
                let dpre = if pre[u] > 0.0 { dh } else { 0.0 };
                grad[rb1.start + u] = mb1 * dpre;
                for j in 0..d {
                    grad[r1.start + u * d + j] = m1 * dpre * x[j];
                }
            }
        }
        ModelKind::Cnn3 => {
            let n = spec.width;
            let (mut c, mut h, mut w) = (spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]);
            let mut a = x.to_vec();
            let mut caches = Vec::with_capacity(3);
            for l in 1..=3 {
                let (wl, _, _) = segment(params, &format!("conv{l}.weight"))?;
                let (bl, _, _) = segment(params, &format!("conv{l}.bias"))?;
                let pre = conv_same(&a, &wl, &bl, c, n, h, w);
                let (pooled, argmax) = relu_pool(&pre, n, h, w);
                caches.push(ConvCache {
                    input: a,
                    pre,
                    argmax,
                    channels_in: c,
                    side: (h, w),
                });
                a = pooled;
                c = n;
                h /= 2;
                w /= 2;
            }
            let flat = a;
            let fdim = flat.len();
            let (wf, mf, rf) = segment(params, "fc.weight")?;
            let (_, mbf, rbf) = segment(params, "fc.bias")?;
            for (o, s) in seed.iter().enumerate() {
                for j in 0..fdim {
                    grad[rf.start + o * fdim + j] = mf * s * flat[j];
                }
                grad[rbf.start + o] = mbf * s;
            }
            let mut da: Vec<f64> = (0..fdim)
                .map(|j| (0..spec.num_classes).map(|o| wf[o * fdim + j] * seed[o]).sum())
                .collect();
            for l in (1..=3).rev() {
                let cache = &caches[l - 1];
                let (h, w) = cache.side;
                let cin = cache.channels_in;
                let mut dz = vec![0.0; n * h * w];
                for (g, &src) in da.iter().zip(&cache.argmax) {
                    if cache.pre[src] > 0.0 {
                        dz[src] += g;
                    }
                }
                let (wl, ml, rl) = segment(params, &format!("conv{l}.weight"))?;
                let (_, mbl, rbl) = segment(params, &format!("conv{l}.bias"))?;
                let mut dprev = vec![0.0; cin * h * w];
                for co in 0..n {
                    grad[rbl.start + co] = mbl * dz[co * h * w..(co + 1) * h * w].iter().sum::<f64>();
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let widx = ((co * cin + ci) * 3 + ky) * 3 + kx;
                                let mut acc = 0.0;
                                for y in 0..h {
                                    let sy = y as isize + ky as isize - 1;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for xx in 0..w {
                                        let sx = xx as isize + kx as isize - 1;
                                        if sx < 0 || sx >= w as isize {
                                            continue;
                                        }
                                        let g = dz[(co * h + y) * w + xx];
                                        let src = (ci * h + sy as usize) * w + sx as usize;
                                        acc += g * cache.input[src];
                                        dprev[src] += g * wl[widx];
                                    }
                                }
                                grad[rl.start + widx] = ml * acc;
                            }
                        }
                    }
                }
                da = dprev;
            }
        }
    }
    if let Some(pos) = grad.iter().position(|v| !v.is_finite()) {
        return Err(NtkError::numerical("explicit gradient", format!("entry {pos} is not finite")));
    }
    Ok(grad)
}

/// NTK from explicitly materialized per-sample gradient rows and pairwise dot
/// products.
pub fn brute_force_ntk(spec: &ModelSpec, params: &ParamVector, probe: &ProbeSet) -> Result<GramMatrix> {
    let n = probe.len();
    let p = params.dim();
    if n.saturating_mul(p) > BRUTE_FORCE_MAX_ENTRIES {
        return Err(NtkError::Config(format!(
            "brute-force NTK would materialize {n} x {p} gradient entries (limit {BRUTE_FORCE_MAX_ENTRIES})"
        )));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let seed = probe.scalarization().seed(probe.labels()[i], spec.num_classes)?;
        rows.push(explicit_gradient(spec, params, probe.input(i).data(), &seed)?);
    }
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for (a, b) in rows[i].iter().zip(&rows[j]) {
                acc += a * b;
            }
            k[i * n + j] = acc;
        }
    }
    GramMatrix::new(n, k)
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every
/// parameter coordinate.
pub fn finite_difference_gradient(
    params: &ParamVector,
    h: f64,
    f: impl Fn(&ParamVector) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut p = params.clone();
    let mut out = Vec::with_capacity(params.dim());
    for i in 0..params.dim() {
        let x = params.data()[i];
        p.data_mut()[i] = x + h;
        let up = f(&p)?;
        p.data_mut()[i] = x - h;
        let down = f(&p)?;
        p.data_mut()[i] = x;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`; the floor keeps entries that
/// are zero on both sides from dividing by zero.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Largest entrywise relative deviation `|a - b| / max(|a|, |b|)` (0 when both
/// entries are 0).
pub fn max_relative_deviation(a: &GramMatrix, b: &GramMatrix) -> f64 {
    a.entries()
        .iter()
        .zip(b.entries())
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if scale == 0.0 {
                0.0
            } else {
                (x - y).abs() / scale
            }
        })
        .fold(0.0, f64::max)
}

/// Outcome of [`lazy_training_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct LazyReport {
    /// Residuals of the trained network, one vector per step (including 0).
    pub actual: Vec<Vec<f64>>,
    /// Residuals predicted by the static initial kernel.
    pub predicted: Vec<Vec<f64>>,
    /// `|e_actual(t) - e_predicted(t)| / |e(0)|` per step.
    pub deviations: Vec<f64>,
}

impl LazyReport {
    pub fn max_deviation(&self) -> f64 {
        self.deviations.iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_deviation(&self) -> f64 {
        *self.deviations.last().expect("at least the initial step")
    }
}

fn scalar_outputs(spec: &ModelSpec, params: &ParamVector, probe: &ProbeSet) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut seeds = Vec::with_capacity(probe.len());
    let mut values = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let (out, _) = forward(spec, params, &probe.input(i))?;
        let seed = probe.scalarization().seed(probe.labels()[i], spec.num_classes)?;
        values.push(out.data().iter().zip(&seed).map(|(a, b)| a * b).sum());
        seeds.push(seed);
    }
    Ok((values, seeds))
}

/// Trains the real network by full-batch gradient descent on
/// `(1/n) sum_i 0.5 (s(f(x_i)) - y_i)^2` over the probe set, and compares its
/// residuals against the static-kernel recursion with the initial NTK. The
/// `1/n` of the mean loss is folded into the step: the prediction uses
/// `eta / n`.
pub fn lazy_training_check(
    spec: &ModelSpec,
    params: &ParamVector,
    probe: &ProbeSet,
    targets: &[f64],
    eta: f64,
    steps: usize,
) -> Result<LazyReport> {
    let n = probe.len();
    if targets.len() != n {
        return Err(NtkError::Config(format!("{} targets for {n} probe samples", targets.len())));
    }
    let kernel = empirical_ntk(spec, params, probe)?;
    let (s0, seeds) = scalar_outputs(spec, params, probe)?;
    let e0: Vec<f64> = s0.iter().zip(targets).map(|(s, y)| s - y).collect();
    let predicted: Vec<Vec<f64>> = evolve_residuals(&ResidualState::new(e0.clone()), &kernel, eta / n as f64, steps)?
        .into_iter()
        .map(|r| r.e)
        .collect();

    let mut theta = params.clone();
    let mut actual = vec![e0.clone()];
    let mut e = e0.clone();
    let mut batch = Vec::with_capacity(n * spec.input_len());
    for i in 0..n {
        batch.extend_from_slice(probe.input(i).data());
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&spec.input_shape);
    let inputs = Tensor::new(shape, batch)?;
    for _ in 0..steps {
        let (_, tape) = forward(spec, &theta, &inputs)?;
        let mut seed = Vec::with_capacity(n * spec.num_classes);
        for (ei, s) in e.iter().zip(&seeds) {
            seed.extend(s.iter().map(|v| v * ei / n as f64));
        }
        let grad = tape.backward(&theta, &Tensor::new(vec![n, spec.num_classes], seed)?)?;
        theta.axpy(-eta, &grad)?;
        let (s, _) = scalar_outputs(spec, &theta, probe)?;
        e = s.iter().zip(targets).map(|(s, y)| s - y).collect();
        actual.push(e.clone());
    }

    let scale = e0.iter().map(|v| v * v).sum::<f64>().sqrt();
    let deviations = actual
        .iter()
        .zip(&predicted)
        .map(|(a, p)| {
            let diff = a.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if scale == 0.0 {
                diff
            } else {
                diff / scale
            }
        })
        .collect();
    Ok(LazyReport {
        actual,
        predicted,
        deviations,
    })
}
