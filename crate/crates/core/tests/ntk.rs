mod common;

use common::*;
use ntk_lab::models::ModelKind;
use ntk_lab::ntk::{cka, empirical_ntk, kernel_alignment, kernel_distance, max_eigenvalue, GramMatrix, LabelMatrix, Scalarization};
use ntk_lab::oracle::{brute_force_ntk, max_relative_deviation, power_iteration};
use ntk_lab::NtkError;
use proptest::prelude::*;

#[test]
fn tape_kernel_matches_brute_force() {
    for (kind, width) in [(ModelKind::Mlp, 64), (ModelKind::Cnn3, 16), (ModelKind::Linear, 1)] {
        let (spec, theta, probe) = probe_setup(kind, width, 8, 3);
        let a = empirical_ntk(&spec, &theta, &probe).unwrap();
        let b = brute_force_ntk(&spec, &theta, &probe).unwrap();
        let dev = max_relative_deviation(&a, &b);
        assert!(dev <= 1e-10, "{kind}: {dev:e}");
    }
}

#[test]
fn kernel_is_permutation_equivariant() {
    let (spec, theta, probe) = probe_setup(ModelKind::Mlp, 16, 6, 1);
    let perm = [3, 0, 5, 1, 4, 2];
    let k = empirical_ntk(&spec, &theta, &probe).unwrap();
    let kp = empirical_ntk(&spec, &theta, &probe.permuted(&perm).unwrap()).unwrap();
    let expected = k.permuted(&perm).unwrap();
    assert!(max_relative_deviation(&kp, &expected) < 1e-12);
}

#[test]
fn kernel_is_symmetric_psd_and_power_iteration_agrees() {
    for s in [Scalarization::TrueClassLogit, Scalarization::SumLogits, Scalarization::MeanLogits] {
        let (spec, theta, probe) = probe_setup(ModelKind::Cnn3, 8, 10, 2);
        let k = empirical_ntk(&spec, &theta, &probe.with_scalarization(s)).unwrap();
        for i in 0..k.n() {
            for j in 0..k.n() {
                assert_eq!(k.get(i, j), k.get(j, i));
            }
        }
        let spectrum = k.spectrum().unwrap();
        assert!(spectrum.eigenvalues().iter().all(|&l| l >= 0.0));
        let lam = max_eigenvalue(&k).unwrap();
        let pi = power_iteration(&k, 10_000, 1e-14).unwrap();
        assert!((lam - pi).abs() <= 1e-8 * lam, "{s}: {lam} vs {pi}");
    }
}

#[test]
fn nested_probes_grow_lambda_max() {
    let (spec, theta, probe) = probe_setup(ModelKind::Mlp, 32, 40, 0);
    let mut last = 0.0;
    for k in [5, 10, 20, 40] {
        let lam = max_eigenvalue(&empirical_ntk(&spec, &theta, &probe.prefix(k).unwrap()).unwrap()).unwrap();
        assert!(lam >= last, "prefix {k}: {lam} < {last}");
        last = lam;
    }
}

#[test]
fn cka_worked_value_and_zero_kernel() {
    let i2 = GramMatrix::identity(2);
    let ones = GramMatrix::new(2, vec![1.0; 4]).unwrap();
    let c = cka(&i2, &ones, false).unwrap();
    assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() <= 1e-12);
    let zero = GramMatrix::new(2, vec![0.0; 4]).unwrap();
    assert!(matches!(cka(&zero, &i2, false), Err(NtkError::UndefinedSimilarity(_))));
    // the all-ones kernel vanishes after centering
    assert!(matches!(cka(&ones, &i2, true), Err(NtkError::UndefinedSimilarity(_))));
}

#[test]
fn alignment_of_label_kernel_with_itself_is_one() {
    let labels = LabelMatrix::one_hot(&[0, 1, 1, 2, 0], 3).unwrap();
    let k = labels.kernel().unwrap();
    for centered in [false, true] {
        let a = kernel_alignment(&k, &labels, centered).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
    }
}

fn psd(n: usize, d: usize, feats: Vec<f64>) -> GramMatrix {
    GramMatrix::from_features(n, d, &feats).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cka_properties(
        fa in proptest::collection::vec(-1.0f64..1.0, 15),
        fb in proptest::collection::vec(-1.0f64..1.0, 15),
        scale in 1e-3f64..1e3,
        centered in any::<bool>(),
    ) {
        let a = psd(5, 3, fa);
        let b = psd(5, 3, fb);
        match (cka(&a, &a, centered), cka(&a, &b, centered)) {
            (Ok(self_sim), Ok(ab)) => {
                prop_assert!((self_sim - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(&ab));
                let ba = cka(&b, &a, centered).unwrap();
                prop_assert!((ab - ba).abs() < 1e-14);
                let scaled = cka(&a.scaled(scale).unwrap(), &b, centered).unwrap();
                prop_assert!((ab - scaled).abs() < 1e-12);
                let d = kernel_distance(&a, &b, centered).unwrap();
                prop_assert!((d - (1.0 - ab)).abs() < 1e-15);
            }
            (Err(e), _) | (_, Err(e)) => prop_assert!(matches!(e, NtkError::UndefinedSimilarity(_))),
        }
    }
}
