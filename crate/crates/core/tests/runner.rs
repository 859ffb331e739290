use std::fs;

use ntk_lab::autodiff::{grad_loss, LossKind, TapeBuilder, Target};
use ntk_lab::runner::{
    read_metrics_csv, run_experiment, run_to_dir, sweep_configs, ExperimentConfig, RunStatus, METRICS_FILE,
};
use ntk_lab::tensor::{ParamVector, Tensor};
use ntk_lab::NtkError;

const SMALL: &str = "model = mlp
width = 8
data.classes = 4
data.train_per_class = 20
data.test_per_class = 5
probe_size = 6
batch_size = 8
tasks = window(0,2); window(2,2)
epochs = 2
eval_size = 10
";

fn small() -> ExperimentConfig {
    ExperimentConfig::from_text(SMALL).unwrap()
}

#[test]
fn repeated_runs_write_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for name in ["a", "b"] {
        let mut cfg = small();
        cfg.out = dir.path().join(name);
        run_to_dir(&cfg).unwrap();
        bytes.push(fs::read(cfg.out.join(METRICS_FILE)).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let mut other = small();
    other.seed = 1;
    other.out = dir.path().join("c");
    run_to_dir(&other).unwrap();
    assert_ne!(fs::read(other.out.join(METRICS_FILE)).unwrap(), bytes[0]);
}

#[test]
fn probe_hash_is_constant_and_switch_lands_on_a_probe() {
    let out = run_experiment(&small()).unwrap();
    assert!(out.probe_hashes.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(out.probe_hashes.len(), out.records().len());
    let b = out.boundaries();
    assert_eq!(b.len(), 1);
    let recs = out.records();
    assert_eq!(recs[b[0]].task_index, 0);
    assert_eq!(recs[b[0] + 1].task_index, 1);
    assert_eq!(recs[b[0]].iteration % 10, 0);
    for (i, r) in recs.iter().enumerate() {
        assert_eq!(r.global_step, i);
        assert_eq!(r.iteration, i * 10);
    }
}

#[test]
fn zero_learning_rate_freezes_the_kernel() {
    let mut cfg = small();
    cfg.regime.lr_base = 0.0;
    let out = run_experiment(&cfg).unwrap();
    let lam0 = out.records()[0].lambda_max;
    for r in out.records() {
        assert_eq!(r.kernel_distance_from_init, 0.0);
        assert_eq!(r.lambda_max, lam0);
        if let Some(v) = r.velocity {
            assert_eq!(v, 0.0);
        }
    }
}

#[test]
fn zero_iterations_give_a_single_record() {
    let mut cfg = small();
    cfg.schedule = ntk_lab::continual::TaskSchedule::parse("window(0,2)@0", 1).unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records().len(), 1);
    let r = &out.records()[0];
    assert_eq!((r.global_step, r.iteration), (0, 0));
    assert_eq!(r.kernel_distance_from_init, 0.0);
    assert!(r.velocity.is_none() && r.kernel_distance_from_prev.is_none());
}

#[test]
fn one_sgd_step_on_a_quadratic_is_exact() {
    let (w, x, y, lr) = (0.7, 1.3, -0.4, 0.05);
    let mut p = ParamVector::new(vec![("w".into(), vec![1, 1], 1.0)], vec![w]).unwrap();
    let mut b = TapeBuilder::new(&p);
    let xi = b.input(Tensor::new(vec![1, 1], vec![x]).unwrap()).unwrap();
    let wi = b.param("w").unwrap();
    let out = b.dense("fc", xi, wi, None).unwrap();
    let (_, tape) = b.finish(out).unwrap();
    let target = Target::Values(Tensor::new(vec![1, 1], vec![y]).unwrap());
    let (loss, g) = grad_loss(&tape, &p, LossKind::Squared, &target).unwrap();
    assert_eq!(loss, 0.5 * (w * x - y) * (w * x - y));
    p.axpy(-lr, &g).unwrap();
    assert_eq!(p.data()[0], w - lr * (w * x - y) * x);
}

#[test]
fn divergence_leaves_a_poisoned_last_record_and_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.model = ntk_lab::models::ModelKind::Linear;
    cfg.loss = LossKind::Squared;
    cfg.regime.lr_base = 1e10;
    cfg.out = dir.path().to_path_buf();
    let out = run_to_dir(&cfg).unwrap();
    let RunStatus::Diverged { iteration } = out.status else {
        panic!("expected divergence");
    };
    let recs = out.records();
    let last = recs.last().unwrap();
    assert!(last.is_poisoned());
    assert_eq!(last.iteration, iteration);
    assert!(recs[..recs.len() - 1].iter().all(|r| !r.is_poisoned()));
    let back = read_metrics_csv(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(back.records.len(), recs.len());
    assert!(back.records.last().unwrap().is_poisoned());
    let meta = fs::read_to_string(dir.path().join("run.meta")).unwrap();
    assert!(meta.contains(&format!("diverged at iteration {iteration}")));
}

#[test]
fn config_round_trips_and_rejects_unknown_keys() {
    let cfg = small();
    let again = ExperimentConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(cfg.hash(), again.hash());
    let err = ExperimentConfig::from_text("lr = 0.1\nlearning_rate = 0.1\n").unwrap_err();
    assert!(matches!(err, NtkError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn sweep_expands_the_cartesian_product() {
    let cfgs = sweep_configs(
        &small(),
        &[
            ("width".into(), vec!["8".into(), "16".into()]),
            ("tasks".into(), vec!["window(0,2); window(1,2)".into(), "window(0,2); window(2,2)".into()]),
        ],
    )
    .unwrap();
    assert_eq!(cfgs.len(), 4);
    let mut outs: Vec<_> = cfgs.iter().map(|c| c.out.clone()).collect();
    outs.sort();
    outs.dedup();
    assert_eq!(outs.len(), 4);
    assert!(sweep_configs(&small(), &[("nope".into(), vec!["1".into()])]).is_err());
}
