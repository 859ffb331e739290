//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ntk_lab::autodiff::{grad_loss, loss_and_output_grad, LossKind, Tape, TapeBuilder, Target};
use ntk_lab::models::{forward, initialize, InitKind, LrScaling, ModelKind, ModelSpec, ParamRegime};
use ntk_lab::oracle::{finite_difference_gradient, max_relative_error};
use ntk_lab::tensor::{ParamVector, Tensor};
use ntk_lab::Result;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for coordinates whose gradient is zero on both sides.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, uniform(rng, n)).unwrap()
}

pub fn params(rng: &mut ChaCha8Rng, layout: &[(&str, Vec<usize>, f64)]) -> ParamVector {
    let layout: Vec<(String, Vec<usize>, f64)> = layout
        .iter()
        .map(|(n, s, m)| (n.to_string(), s.clone(), *m))
        .collect();
    let dim = layout.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
    ParamVector::new(layout, uniform(rng, dim)).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compares the tape gradient of `<output, c>` with central differences.
pub fn check_graph(p: &ParamVector, build: impl Fn(&ParamVector) -> Result<(Tensor, Tape)>, seed: u64) -> f64 {
    let (out, tape) = build(p).unwrap();
    let c = tensor(&mut rng(seed), out.shape().to_vec());
    let analytic = tape.backward(p, &c).unwrap();
    let numeric = finite_difference_gradient(p, FD_STEP, |q| {
        let (o, _) = build(q)?;
        Ok(dot(o.data(), c.data()))
    })
    .unwrap();
    max_relative_error(analytic.data(), &numeric, FD_FLOOR)
}

/// Compares a mean-loss gradient with central differences.
pub fn check_loss(
    p: &ParamVector,
    build: impl Fn(&ParamVector) -> Result<(Tensor, Tape)>,
    kind: LossKind,
    target: &Target,
) -> f64 {
    let (_, tape) = build(p).unwrap();
    let (_, analytic) = grad_loss(&tape, p, kind, target).unwrap();
    let numeric = finite_difference_gradient(p, FD_STEP, |q| {
        let (o, _) = build(q)?;
        Ok(loss_and_output_grad(&o, kind, target)?.0)
    })
    .unwrap();
    max_relative_error(analytic.data(), &numeric, FD_FLOOR)
}

/// Max relative error of every layer type and every model, keyed by name.
pub fn gradient_suite(seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();

    let x2 = tensor(&mut r, vec![3, 5]);
    let p = params(&mut r, &[("w", vec![4, 5], 0.5), ("b", vec![4], 1.0)]);
    let dense = |q: &ParamVector| {
        let mut b = TapeBuilder::new(q);
        let x = b.input(x2.clone())?;
        let w = b.param("w")?;
        let bias = b.param("b")?;
        let y = b.dense("fc", x, w, Some(bias))?;
        b.finish(y)
    };
    out.push(("dense".to_string(), check_graph(&p, dense, seed + 1)));

    let relu = |q: &ParamVector| {
        let mut b = TapeBuilder::new(q);
        let x = b.input(x2.clone())?;
        let w = b.param("w")?;
        let bias = b.param("b")?;
        let y = b.dense("fc", x, w, Some(bias))?;
        let y = b.relu("relu", y)?;
        b.finish(y)
    };
    out.push(("relu".to_string(), check_graph(&p, relu, seed + 2)));

    let pm = params(&mut r, &[("w", vec![4, 5], 1.0), ("s", vec![4], 1.0)]);
    let mul_square = |q: &ParamVector| {
        let mut b = TapeBuilder::new(q);
        let x = b.input(x2.clone())?;
        let w = b.param("w")?;
        let s = b.param("s")?;
        let y = b.dense("fc", x, w, None)?;
        let y = b.mul("scale", y, s)?;
        let y = b.square("square", y)?;
        b.finish(y)
    };
    out.push(("mul+square".to_string(), check_graph(&pm, mul_square, seed + 3)));

    let x4 = tensor(&mut r, vec![2, 2, 4, 4]);
    let pc = params(
        &mut r,
        &[("k", vec![3, 2, 3, 3], 0.7), ("c", vec![3], 1.0), ("fw", vec![2, 12], 1.0)],
    );
    let conv = |q: &ParamVector| {
        let mut b = TapeBuilder::new(q);
        let x = b.input(x4.clone())?;
        let k = b.param("k")?;
        let c = b.param("c")?;
        let y = b.conv3x3("conv", x, k, Some(c))?;
        let y = b.flatten("flatten", y)?;
        b.finish(y)
    };
    out.push(("conv3x3+flatten".to_string(), check_graph(&pc, conv, seed + 4)));

    let pool = |q: &ParamVector| {
        let mut b = TapeBuilder::new(q);
        let x = b.input(x4.clone())?;
        let k = b.param("k")?;
        let y = b.conv3x3("conv", x, k, None)?;
        let y = b.max_pool2("pool", y)?;
        let y = b.flatten("flatten", y)?;
        let w = b.param("fw")?;
        let y = b.dense("fc", y, w, None)?;
        b.finish(y)
    };
    out.push(("max_pool2".to_string(), check_graph(&pc, pool, seed + 5)));

    out.push((
        "cross_entropy".to_string(),
        check_loss(&p, dense, LossKind::CrossEntropy, &Target::Classes(vec![0, 3, 1])),
    ));
    let y = tensor(&mut r, vec![3, 4]);
    out.push(("squared".to_string(), check_loss(&p, dense, LossKind::Squared, &Target::Values(y))));

    for (kind, width) in [(ModelKind::Linear, 0), (ModelKind::Mlp, 6), (ModelKind::Cnn3, 3)] {
        let spec = ModelSpec {
            kind,
            width,
            input_shape: vec![3, 8, 8],
            num_classes: 4,
        };
        let regime = ParamRegime {
            init: InitKind::KaimingNormal,
            lr_base: 1.0,
            lr_scaling: LrScaling::None,
            reference_width: width.max(1),
        };
        let theta = initialize(&spec, &regime, seed).unwrap();
        let xs = tensor(&mut r, vec![2, 3, 8, 8]);
        let model = |q: &ParamVector| forward(&spec, q, &xs);
        out.push((
            format!("{kind} cross_entropy"),
            check_loss(&theta, model, LossKind::CrossEntropy, &Target::Classes(vec![1, 2])),
        ));
    }
    out
}

/// Model, initial parameters and a probe drawn from the default synthetic data.
pub fn probe_setup(
    kind: ModelKind,
    width: usize,
    n: usize,
    seed: u64,
) -> (ModelSpec, ParamVector, ntk_lab::ntk::ProbeSet) {
    use ntk_lab::runner::{self, ExperimentConfig};
    let mut cfg = ExperimentConfig {
        probe_size: n,
        seed,
        ..ExperimentConfig::default()
    };
    cfg.model = kind;
    cfg.width = width;
    let (train, _) = runner::load_data(&cfg).unwrap();
    let first = cfg.schedule.tasks[0].spec.distribution(train.num_classes()).unwrap();
    let spec = runner::model_spec(&cfg, &train).unwrap();
    let regime = ParamRegime {
        init: InitKind::KaimingNormal,
        lr_base: 1.0,
        lr_scaling: LrScaling::None,
        reference_width: width.max(1),
    };
    let theta = initialize(&spec, &regime, seed).unwrap();
    let probe = runner::draw_probe(&cfg, &train, &first).unwrap();
    (spec, theta, probe)
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}
