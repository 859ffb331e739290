//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! `cargo test -p ntk-lab --test acceptance` runs all eleven; numeric
//! arguments after `--` select a subset, e.g. `-- 1 5 11`.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use ntk_lab::continual::jaccard_similarity;
use ntk_lab::data::{decode_cifar, encode_cifar, synthetic_dataset, Split, SyntheticParams};
use ntk_lab::models::ModelKind;
use ntk_lab::ntk::{cka, empirical_ntk, kernel_distance, max_eigenvalue, GramMatrix, Scalarization};
use ntk_lab::oracle::{brute_force_ntk, eigenmode_decay, evolve_residuals, lazy_training_check, max_relative_deviation, ResidualState};
use ntk_lab::report::{median, reactivation_stats, spearman, ReactivationStats, Tolerance, DEFAULT_RELATIVE_TOLERANCE};
use ntk_lab::runner::{metrics_from_str, metrics_to_string, run_experiment, ExperimentConfig, MetricLog, MetricRecord, RunOutput};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Synthetic setting shared by the reactivation and frequency-shift runs.
const REACTIVATION_BASE: &str = "model = cnn3
width = 32
lr = 0.001
data.noise = 0.1
data.train_per_class = 300
epoch_samples = 1500
epochs = 20
";
const DISJOINT_TASKS: &str = "classes(0,1,2,3,4); classes(5,6,7,8,9)";

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn config(text: &str, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_text(text).expect("acceptance config");
    cfg.seed = seed;
    cfg
}

fn run(label: &str, cfg: &ExperimentConfig) -> RunOutput {
    let t = Instant::now();
    let out = run_experiment(cfg).expect("run");
    eprintln!("  {label} seed {}: {} records in {:.1}s", cfg.seed, out.records().len(), t.elapsed().as_secs_f64());
    out
}

fn switch_stats(out: &RunOutput) -> Vec<ReactivationStats> {
    reactivation_stats(
        out.records(),
        out.probe_steps_per_epoch,
        Tolerance::Relative(DEFAULT_RELATIVE_TOLERANCE),
    )
    .expect("stats")
}

fn seed_median(values: &[f64]) -> f64 {
    median(values).expect("at least one seed")
}

fn fmt_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let results: Vec<(String, f64)> = (0..3).flat_map(gradient_suite).collect();
    let secs = t.elapsed().as_secs_f64();
    let (worst_name, worst) = results
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    Outcome::new(
        worst <= 1e-4 && secs < 60.0,
        format!("{} checks, worst {worst:.2e} ({worst_name}), {secs:.1}s", results.len()),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (kind, widths) in [(ModelKind::Mlp, [16, 32, 64]), (ModelKind::Cnn3, [16, 32, 64])] {
        for w in widths {
            for seed in 0..2 {
                let (spec, theta, probe) = probe_setup(kind, w, 8, seed);
                let a = empirical_ntk(&spec, &theta, &probe).unwrap();
                let b = brute_force_ntk(&spec, &theta, &probe).unwrap();
                worst = worst.max(max_relative_deviation(&a, &b));
                count += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 1e-10 && secs < 60.0,
        format!("{count} kernels, worst relative deviation {worst:.2e}, {secs:.1}s"),
    )
}

fn criterion_3() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let mut r = rng(1000 + seed);
        let k = GramMatrix::from_features(6, 6, &uniform(&mut r, 36)).unwrap();
        let spectrum = k.spectrum().unwrap();
        let eta = r.random_range(0.1..1.9) / spectrum.eigenvalues()[0];
        let e0 = ResidualState::new(uniform(&mut r, 6));
        let traj = evolve_residuals(&e0, &k, eta, 50).unwrap();
        for (t, state) in traj.iter().enumerate() {
            let closed = eigenmode_decay(&e0, &spectrum, eta, t).unwrap();
            for (a, b) in spectrum.project(&state.e).iter().zip(&closed) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Outcome::new(worst <= 1e-10, format!("50 kernels x 50 steps, worst |difference| {worst:.2e}"))
}

fn criterion_4() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (spec, theta, probe) = probe_setup(ModelKind::Linear, 1, 8, seed);
        let mut r = rng(seed);
        let targets = uniform(&mut r, 8);
        let rep = lazy_training_check(&spec, &theta, &probe, &targets, 0.05, 200).unwrap();
        worst = worst.max(rep.max_deviation());
    }
    Outcome::new(worst <= 1e-10, format!("3 seeds x 200 steps, worst deviation {worst:.2e}"))
}

fn criterion_5() -> Outcome {
    let mut failures = Vec::new();
    let i2 = GramMatrix::identity(2);
    let ones = GramMatrix::new(2, vec![1.0; 4]).unwrap();
    let worked = cka(&i2, &ones, false).unwrap();
    if (worked - std::f64::consts::FRAC_1_SQRT_2).abs() > 1e-12 {
        failures.push(format!("cka(I2, ones) = {worked}"));
    }
    let mut r = rng(5);
    for _ in 0..500 {
        let a = GramMatrix::from_features(6, 3, &uniform(&mut r, 18)).unwrap();
        let b = GramMatrix::from_features(6, 4, &uniform(&mut r, 24)).unwrap();
        let c = r.random_range(1e-3..1e3);
        for centered in [false, true] {
            let ab = cka(&a, &b, centered).unwrap();
            let aa = cka(&a, &a, centered).unwrap();
            let ba = cka(&b, &a, centered).unwrap();
            let scaled = cka(&a.scaled(c).unwrap(), &b.scaled(1.0 / c).unwrap(), centered).unwrap();
            let d = kernel_distance(&a, &b, centered).unwrap();
            if aa != 1.0 {
                failures.push(format!("self-similarity {aa}"));
            }
            if !(0.0..=1.0).contains(&ab) || (d - (1.0 - ab)).abs() > 1e-15 {
                failures.push(format!("range: cka {ab}, distance {d}"));
            }
            if (ab - ba).abs() > 1e-14 {
                failures.push(format!("symmetry {ab} vs {ba}"));
            }
            if (ab - scaled).abs() > 1e-12 {
                failures.push(format!("scale invariance {ab} vs {scaled}"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("cka(I2, ones) = {worked:.15}; 1000 random PSD pairs satisfy all properties")
    } else {
        format!("{} violations, first: {}", failures.len(), failures[0])
    };
    Outcome::new(failures.is_empty(), detail)
}

fn reactivation_runs() -> Vec<RunOutput> {
    let text = format!("{REACTIVATION_BASE}tasks = {DISJOINT_TASKS}\n");
    SEEDS.iter().map(|&s| run("disjoint", &config(&text, s))).collect()
}

fn criterion_6(runs: &[RunOutput]) -> Outcome {
    let mut good = 0;
    let mut rows = Vec::new();
    for (seed, out) in SEEDS.iter().zip(runs) {
        let stats = switch_stats(out);
        let ok = !stats.is_empty()
            && stats
                .iter()
                .all(|s| s.velocity_spike_ratio >= 3.0 && s.drop_depth > 0.0 && s.recovery_steps.is_some());
        good += ok as usize;
        let s = &stats[0];
        rows.push(format!(
            "s{seed}:{}(spike {:.1}, drop {:.3e}, rec {:?})",
            if ok { "ok" } else { "no" },
            s.velocity_spike_ratio,
            s.drop_depth,
            s.recovery_steps
        ));
    }
    Outcome::new(good >= 4, format!("{good}/5 seeds; {}", rows.join(" ")))
}

fn criterion_7() -> Outcome {
    let widths = [32, 64, 128, 256];
    let mut medians = Vec::new();
    for w in widths {
        let text = format!("model = cnn3\nwidth = {w}\nlr = 0.001\nlr_scaling = inverse_width\nlr_ref_width = 32\ntasks = window(0,5)\n");
        let dist: Vec<f64> = SEEDS
            .iter()
            .map(|&s| run(&format!("width {w}"), &config(&text, s)).records().last().unwrap().kernel_distance_from_init)
            .collect();
        medians.push(seed_median(&dist));
    }
    let decreasing = medians.windows(2).all(|p| p[1] < p[0]);
    Outcome::new(
        decreasing,
        format!("seed-median distance from init at widths {widths:?}: {}", fmt_list(&medians)),
    )
}

fn criterion_8() -> Outcome {
    let base = "model = cnn3
width = 32
lr = 0.001
data.classes = 12
data.noise = 0.1
data.train_per_class = 300
epochs = 20
";
    let mut sims = Vec::new();
    let mut drops = Vec::new();
    let mut zero_shift_spikes = Vec::new();
    for shift in 0..5 {
        let tasks = format!("window(0,4); window({shift},4)");
        let cfg0 = config(&format!("{base}tasks = {tasks}\n"), 0);
        let d: Vec<_> = cfg0
            .schedule
            .tasks
            .iter()
            .map(|t| t.spec.distribution(12).unwrap())
            .collect();
        sims.push(jaccard_similarity(&d[0], &d[1]));
        let mut per_seed = Vec::new();
        for &s in &SEEDS {
            let mut cfg = cfg0.clone();
            cfg.seed = s;
            let st = switch_stats(&run(&format!("shift {shift}"), &cfg)).remove(0);
            per_seed.push(st.drop_depth);
            if shift == 0 {
                zero_shift_spikes.push(st.velocity_spike_ratio);
            }
        }
        drops.push(seed_median(&per_seed));
    }
    let rho = spearman(&sims, &drops).unwrap();
    let spike = seed_median(&zero_shift_spikes);
    Outcome::new(
        rho <= -0.7 && spike < 1.5,
        format!(
            "similarity {} vs seed-median drop {}: rank correlation {rho:.2}; zero-shift seed-median spike ratio {spike:.2} (per seed {})",
            fmt_list(&sims),
            fmt_list(&drops),
            fmt_list(&zero_shift_spikes)
        ),
    )
}

fn criterion_9(disjoint: &[RunOutput]) -> Outcome {
    let text = format!("{REACTIVATION_BASE}tasks = mixture(0.1); mixture(0.9)\n");
    let mix: Vec<f64> = SEEDS
        .iter()
        .map(|&s| switch_stats(&run("mixture 0.9", &config(&text, s)))[0].peak_velocity)
        .collect();
    let dis: Vec<f64> = disjoint.iter().map(|o| switch_stats(o)[0].peak_velocity).collect();
    let (m, d) = (seed_median(&mix), seed_median(&dis));
    Outcome::new(
        m <= 0.5 * d,
        format!(
            "seed-median peak velocity: mixture(0.9) {m:.3e} vs disjoint {d:.3e} (ratio {:.2}); per seed {} vs {}",
            m / d,
            fmt_list(&mix),
            fmt_list(&dis)
        ),
    )
}

fn criterion_10() -> Outcome {
    let sizes = [10usize, 20, 100];
    let mut per_size = vec![Vec::new(); sizes.len()];
    for seed in SEEDS {
        let (spec, theta, probe) = probe_setup(ModelKind::Cnn3, 32, 100, seed);
        for (i, &n) in sizes.iter().enumerate() {
            let k = empirical_ntk(&spec, &theta, &probe.prefix(n).unwrap()).unwrap();
            per_size[i].push(max_eigenvalue(&k).unwrap());
        }
    }
    let lambdas: Vec<f64> = per_size.iter().map(|v| seed_median(v)).collect();
    let xs: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let r2 = linear_r2(&xs, &lambdas);
    Outcome::new(
        r2 >= 0.9,
        format!("seed-median lambda_max at n = {sizes:?}: {}; R^2 = {r2:.4}", fmt_list(&lambdas)),
    )
}

fn criterion_11() -> Outcome {
    let small = "model = mlp
width = 8
data.classes = 4
data.train_per_class = 20
data.test_per_class = 5
probe_size = 6
tasks = window(0,2); window(2,2)
epochs = 3
";
    let cfg = config(small, 7);
    let a = metrics_to_string(&run_experiment(&cfg).unwrap().log).unwrap();
    let b = metrics_to_string(&run_experiment(&cfg).unwrap().log).unwrap();
    let deterministic = a == b;

    let mut r = rng(11);
    let mut records = Vec::new();
    for i in 0..100 {
        let mut v = uniform(&mut r, 7);
        v.iter_mut().for_each(|x| *x *= 10f64.powi(r.random_range(-30..30)));
        records.push(MetricRecord {
            global_step: i,
            task_index: i / 50,
            iteration: 10 * i,
            lambda_max: v[0],
            kernel_distance_from_init: v[1],
            kernel_distance_from_prev: (i > 0).then_some(v[2]),
            velocity: (i > 0).then_some(v[3]),
            alignment: v[4],
            train_loss: (i % 3 != 0).then_some(v[5]),
            task1_test_accuracy: v[6],
        });
    }
    let log = MetricLog {
        scalarization: Scalarization::SumLogits,
        probe_every: 10,
        velocity_dt: 2,
        records,
    };
    let csv_exact = metrics_from_str(&metrics_to_string(&log).unwrap()).unwrap() == log;

    let data = synthetic_dataset(
        &SyntheticParams {
            classes: 10,
            per_class: 5,
            shape: vec![3, 32, 32],
            noise: 0.3,
            seed: 3,
        },
        Split::Train,
    )
    .unwrap();
    let cifar_exact = decode_cifar(&encode_cifar(&data).unwrap(), Split::Train).unwrap() == data;
    Outcome::new(
        deterministic && csv_exact && cifar_exact,
        format!("repeat run identical: {deterministic}; CSV round trip exact: {csv_exact}; CIFAR round trip exact: {cifar_exact}"),
    )
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let names = [
        "gradient correctness",
        "NTK cross-implementation",
        "kernel-regime math",
        "exact lazy limit",
        "CKA/distance properties",
        "reactivation signature",
        "width-laziness trend",
        "similarity monotonicity",
        "frequency-shift contrast",
        "sample-size ablation",
        "determinism and persistence",
    ];
    let disjoint = (wanted(6) || wanted(9)).then(reactivation_runs);
    let mut all = true;
    for (i, name) in names.iter().enumerate() {
        let n = i + 1;
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let outcome = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(disjoint.as_deref().unwrap()),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(disjoint.as_deref().unwrap()),
            10 => criterion_10(),
            _ => criterion_11(),
        };
        all &= outcome.pass;
        println!(
            "{} criterion {n:>2} ({name}): {} [{:.1}s]",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
