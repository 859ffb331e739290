mod common;

use common::*;
use ntk_lab::autodiff::TapeBuilder;
use ntk_lab::tensor::{ParamVector, Tensor};
use proptest::prelude::*;

#[test]
fn every_layer_matches_finite_differences() {
    for (name, err) in gradient_suite(7) {
        assert!(err <= 1e-4, "{name}: max relative error {err:e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dense_relu_gradients_on_random_inputs(seed in 0u64..10_000, batch in 1usize..4, fan_in in 1usize..6) {
        let mut r = rng(seed);
        let x = tensor(&mut r, vec![batch, fan_in]);
        let p = params(&mut r, &[("w", vec![3, fan_in], 1.0), ("b", vec![3], 1.0)]);
        let build = |q: &ParamVector| {
            let mut b = TapeBuilder::new(q);
            let xi = b.input(x.clone())?;
            let w = b.param("w")?;
            let bias = b.param("b")?;
            let y = b.dense("fc", xi, w, Some(bias))?;
            let y = b.square("sq", y)?;
            b.finish(y)
        };
        prop_assert!(check_graph(&p, build, seed ^ 0x55) <= 1e-4);
    }
}

#[test]
fn non_finite_activation_names_the_layer() {
    let p = ParamVector::new(vec![("w".into(), vec![1, 1], 1.0)], vec![f64::INFINITY]).unwrap();
    let mut b = TapeBuilder::new(&p);
    let x = b.input(Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
    let w = b.param("w");
    let err = match w {
        Err(e) => e,
        Ok(w) => b.dense("fc", x, w, None).unwrap_err(),
    };
    assert!(err.to_string().contains("w") || err.to_string().contains("fc"), "{err}");
}
