//! Model zoo and parametrization regimes.
//!
//! `cnn3` is three blocks of (3x3 conv, ReLU, 2x2 max pool) followed by a fully
//! connected classifier; `mlp` is dense-ReLU-dense; `linear` is a single
//! bias-free dense map, used where an exactly linear model is needed.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::autodiff::{Tape, TapeBuilder};
use crate::error::{NtkError, Result};
use crate::tensor::{ParamVector, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cnn3,
    Mlp,
    Linear,
}

impl FromStr for ModelKind {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn3" => Ok(ModelKind::Cnn3),
            "mlp" => Ok(ModelKind::Mlp),
            "linear" => Ok(ModelKind::Linear),
            _ => Err(NtkError::Config(format!(
                "unknown model kind {s:?} (expected cnn3, mlp or linear)"
            ))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Cnn3 => "cnn3",
            ModelKind::Mlp => "mlp",
            ModelKind::Linear => "linear",
        })
    }
}

/// Architecture description; the parameter count is a function of these fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Channels (cnn3) or hidden units (mlp); ignored by `linear`.
    pub width: usize,
    /// Per-sample input shape, `(C, H, W)` for images.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

/// Shape and fan-in of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl ModelSpec {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NtkError::Config(format!("degenerate model spec {self:?}")));
        }
        match self.kind {
            ModelKind::Cnn3 => {
                if self.input_shape.len() != 3 {
                    return Err(NtkError::Config(format!(
                        "cnn3 needs a (C, H, W) input, got {:?}",
                        self.input_shape
                    )));
                }
                let (h, w) = (self.input_shape[1], self.input_shape[2]);
                if h % 8 != 0 || w % 8 != 0 {
                    return Err(NtkError::Config(format!(
                        "cnn3 pools three times; H and W must be multiples of 8, got {h}x{w}"
                    )));
                }
                if self.width == 0 {
                    return Err(NtkError::Config("width must be positive".into()));
                }
            }
            ModelKind::Mlp => {
                if self.width == 0 {
                    return Err(NtkError::Config("width must be positive".into()));
                }
            }
            ModelKind::Linear => {}
        }
        Ok(())
    }

    /// Parameter blocks in storage order.
    pub fn layout(&self) -> Result<Vec<LayerLayout>> {
        self.validate()?;
        let n = self.width;
        let c = self.num_classes;
        let w = |name: &str, shape: Vec<usize>, fan_in: usize| LayerLayout {
            name: name.into(),
            shape,
            fan_in,
            is_bias: false,
        };
        let b = |name: &str, len: usize, fan_in: usize| LayerLayout {
            name: name.into(),
            shape: vec![len],
            fan_in,
            is_bias: true,
        };
        Ok(match self.kind {
            ModelKind::Cnn3 => {
                let cin = self.input_shape[0];
                let spatial = (self.input_shape[1] / 8) * (self.input_shape[2] / 8);
                vec![
                    w("conv1.weight", vec![n, cin, 3, 3], cin * 9),
                    b("conv1.bias", n, cin * 9),
                    w("conv2.weight", vec![n, n, 3, 3], n * 9),
                    b("conv2.bias", n, n * 9),
                    w("conv3.weight", vec![n, n, 3, 3], n * 9),
                    b("conv3.bias", n, n * 9),
                    w("fc.weight", vec![c, n * spatial], n * spatial),
                    b("fc.bias", c, n * spatial),
                ]
            }
            ModelKind::Mlp => {
                let d = self.input_len();
                vec![
                    w("fc1.weight", vec![n, d], d),
                    b("fc1.bias", n, d),
                    w("fc2.weight", vec![c, n], n),
                    b("fc2.bias", c, n),
                ]
            }
            ModelKind::Linear => {
                let d = self.input_len();
                vec![w("fc.weight", vec![c, d], d)]
            }
        })
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self
            .layout()?
            .iter()
            .map(|l| l.shape.iter().product::<usize>())
            .sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    KaimingUniform,
    KaimingNormal,
    NtkLike,
}

impl FromStr for InitKind {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming_uniform" => Ok(InitKind::KaimingUniform),
            "kaiming_normal" => Ok(InitKind::KaimingNormal),
            "ntk_like" => Ok(InitKind::NtkLike),
            _ => Err(NtkError::Config(format!("unknown init {s:?}"))),
        }
    }
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::KaimingUniform => "kaiming_uniform",
            InitKind::KaimingNormal => "kaiming_normal",
            InitKind::NtkLike => "ntk_like",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrScaling {
    None,
    InverseWidth,
}

impl FromStr for LrScaling {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LrScaling::None),
            "inverse_width" => Ok(LrScaling::InverseWidth),
            _ => Err(NtkError::Config(format!("unknown lr scaling {s:?}"))),
        }
    }
}

impl fmt::Display for LrScaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrScaling::None => "none",
            LrScaling::InverseWidth => "inverse_width",
        })
    }
}

/// Initialization law plus learning-rate rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRegime {
    pub init: InitKind,
    pub lr_base: f64,
    pub lr_scaling: LrScaling,
    /// Width at which `inverse_width` scaling returns `lr_base`.
    pub reference_width: usize,
}

/// `lr_base`, or `lr_base * N_ref / N` under inverse-width scaling.
pub fn effective_learning_rate(regime: &ParamRegime, width: usize) -> Result<f64> {
    if width == 0 {
        return Err(NtkError::Config("width must be positive".into()));
    }
    Ok(match regime.lr_scaling {
        LrScaling::None => regime.lr_base,
        LrScaling::InverseWidth => regime.lr_base * regime.reference_width as f64 / width as f64,
    })
}

/// Draws a fresh parameter vector. Biases start at zero under every regime.
///
/// - `kaiming_normal`: `W ~ N(0, 2/fan_in)`
/// - `kaiming_uniform`: `W ~ U(-sqrt(6/fan_in), sqrt(6/fan_in))`
/// - `ntk_like`: raw `W ~ N(0, 1)` with a forward multiplier `1/sqrt(fan_in)`
pub fn initialize(spec: &ModelSpec, regime: &ParamRegime, seed: u64) -> Result<ParamVector> {
    let layout = spec.layout()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(spec.param_count()?);
    let mut blocks = Vec::with_capacity(layout.len());
    for layer in layout {
        let len: usize = layer.shape.iter().product();
        let fan_in = layer.fan_in as f64;
        let mut multiplier = 1.0;
        if layer.is_bias {
            data.extend(std::iter::repeat_n(0.0, len));
        } else {
            match regime.init {
                InitKind::KaimingNormal => {
                    let std = (2.0 / fan_in).sqrt();
                    data.extend((0..len).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); std * z }));
                }
                InitKind::KaimingUniform => {
                    let bound = (6.0 / fan_in).sqrt();
                    let u = Uniform::new(-bound, bound)
                        .map_err(|e| NtkError::Config(format!("uniform bound: {e}")))?;
                    data.extend((0..len).map(|_| u.sample(&mut rng)));
                }
                InitKind::NtkLike => {
                    multiplier = 1.0 / fan_in.sqrt();
                    data.extend((0..len).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
                }
            }
        }
        blocks.push((layer.name, layer.shape, multiplier));
    }
    ParamVector::new(blocks, data)
}

/// Runs the model on a batch `(B, input_shape...)` or a single sample
/// `(input_shape...)`; the output is always `(B, num_classes)`.
pub fn forward(spec: &ModelSpec, params: &ParamVector, x: &Tensor) -> Result<(Tensor, Tape)> {
    spec.validate()?;
    let expected = spec.param_count()?;
    if params.dim() != expected {
        return Err(NtkError::Config(format!(
            "parameter vector has {} entries, {} model needs {expected}",
            params.dim(),
            spec.kind
        )));
    }
    let batched = if x.shape() == spec.input_shape.as_slice() {
        let mut shape = vec![1];
        shape.extend_from_slice(x.shape());
        x.clone().reshape(shape)?
    } else if x.shape().len() == spec.input_shape.len() + 1 && &x.shape()[1..] == spec.input_shape.as_slice() {
        x.clone()
    } else {
        return Err(NtkError::Config(format!(
            "input shape {:?} does not match model input {:?}",
            x.shape(),
            spec.input_shape
        )));
    };

    let mut b = TapeBuilder::new(params);
    let input = b.input(batched)?;
    let out = match spec.kind {
        ModelKind::Cnn3 => {
            let mut h = input;
            for i in 1..=3 {
                let w = b.param(&format!("conv{i}.weight"))?;
                let bias = b.param(&format!("conv{i}.bias"))?;
                h = b.conv3x3(&format!("conv{i}"), h, w, Some(bias))?;
                h = b.relu(&format!("relu{i}"), h)?;
                h = b.max_pool2(&format!("pool{i}"), h)?;
            }
            let flat = b.flatten("flatten", h)?;
            let w = b.param("fc.weight")?;
            let bias = b.param("fc.bias")?;
            b.dense("fc", flat, w, Some(bias))?
        }
        ModelKind::Mlp => {
            let flat = b.flatten("flatten", input)?;
            let w1 = b.param("fc1.weight")?;
            let b1 = b.param("fc1.bias")?;
            let h = b.dense("fc1", flat, w1, Some(b1))?;
            let h = b.relu("relu1", h)?;
            let w2 = b.param("fc2.weight")?;
            let b2 = b.param("fc2.bias")?;
            b.dense("fc2", h, w2, Some(b2))?
        }
        ModelKind::Linear => {
            let flat = b.flatten("flatten", input)?;
            let w = b.param("fc.weight")?;
            b.dense("fc", flat, w, None)?
        }
    };
    b.finish(out)
}
