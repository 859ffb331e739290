use std::fs;

use ntk_lab::report::{plot_metrics, reactivation_stats, similarity_trend, stats_to_text, Tolerance};
use ntk_lab::runner::{write_metrics_csv, MetricLog, MetricRecord};
use ntk_lab::ntk::Scalarization;
use ntk_lab::NtkError;

fn trajectory(tasks: &[(usize, &[f64])]) -> Vec<MetricRecord> {
    let mut out = Vec::new();
    for &(task, lambdas) in tasks {
        for &l in lambdas {
            let i = out.len();
            out.push(MetricRecord {
                global_step: i,
                task_index: task,
                iteration: 10 * i,
                lambda_max: l,
                kernel_distance_from_init: 0.01 * i as f64,
                kernel_distance_from_prev: (i > 0).then_some(0.01),
                velocity: (i > 0).then_some(0.01 + if l < 9.0 { 0.05 } else { 0.0 }),
                alignment: 0.5,
                train_loss: (i > 0).then_some(1.0),
                task1_test_accuracy: 0.9,
            });
        }
    }
    out
}

const PRE: [f64; 5] = [10.0, 10.0, 10.0, 10.0, 10.0];
const POST: [f64; 7] = [4.0, 5.0, 7.0, 9.0, 10.0, 10.0, 10.0];

fn log(records: Vec<MetricRecord>) -> MetricLog {
    MetricLog {
        scalarization: Scalarization::TrueClassLogit,
        probe_every: 10,
        velocity_dt: 1,
        records,
    }
}

#[test]
fn rescaling_lambda_rescales_only_the_drop() {
    let recs = trajectory(&[(0, &PRE), (1, &POST)]);
    let base = &reactivation_stats(&recs, 5, Tolerance::Relative(0.05)).unwrap()[0];
    for c in [1e-3, 0.5, 7.0, 1e4] {
        let scaled: Vec<_> = recs
            .iter()
            .map(|r| MetricRecord {
                lambda_max: r.lambda_max * c,
                ..r.clone()
            })
            .collect();
        let s = &reactivation_stats(&scaled, 5, Tolerance::Relative(0.05)).unwrap()[0];
        assert!((s.drop_depth - c * base.drop_depth).abs() <= 1e-12 * c * base.drop_depth);
        assert_eq!(
            (s.switch_step, s.min_offset, s.recovery_steps),
            (base.switch_step, base.min_offset, base.recovery_steps)
        );
        assert_eq!(s.velocity_spike_ratio, base.velocity_spike_ratio);
    }
}

#[test]
fn two_switches_give_independent_entries() {
    let recs = trajectory(&[(0, &PRE), (1, &POST), (2, &POST)]);
    let stats = reactivation_stats(&recs, 5, Tolerance::Absolute(0.5)).unwrap();
    assert_eq!(stats.len(), 2);
    assert_eq!(stats[0].switch_step, 4);
    assert_eq!(stats[1].switch_step, 11);
    assert_eq!(stats[0].drop_depth, 6.0);
    assert_eq!(stats[0].recovery_steps, Some(5));
    let text = stats_to_text(&stats, 5, Tolerance::Absolute(0.5));
    assert!(text.contains("switch.0.drop_depth") && text.contains("switch.1.drop_depth"));
}

#[test]
fn trend_over_synthetic_levels() {
    let recs = trajectory(&[(0, &PRE), (1, &POST)]);
    let base = reactivation_stats(&recs, 5, Tolerance::Absolute(0.5)).unwrap().remove(0);
    let levels: Vec<(f64, _)> = (0..5)
        .map(|i| {
            let mut s = base.clone();
            s.drop_depth = 10.0 - i as f64;
            s.peak_distance_jump = 1.0 - 0.1 * i as f64;
            (i as f64 / 4.0, s)
        })
        .collect();
    let t = similarity_trend(&levels).unwrap();
    assert_eq!(t.drop_correlation, -1.0);
    assert_eq!(t.distance_jump_correlation, -1.0);
    assert!(similarity_trend(&levels[..3]).is_err());
}

#[test]
fn plot_has_one_curve_per_file_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = Vec::new();
    for w in [32, 64, 128] {
        let sub = dir.path().join(format!("width={w}"));
        fs::create_dir_all(&sub).unwrap();
        let p = sub.join("metrics.csv");
        write_metrics_csv(&log(trajectory(&[(0, &PRE), (1, &POST)])), &p).unwrap();
        paths.push(p);
    }
    let a = dir.path().join("a.svg");
    let b = dir.path().join("b.svg");
    plot_metrics(&paths, "lambda_max", &a).unwrap();
    plot_metrics(&paths, "lambda_max", &b).unwrap();
    let svg = fs::read_to_string(&a).unwrap();
    assert_eq!(svg, fs::read_to_string(&b).unwrap());
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<polyline").count(), 3);
    for w in [32, 64, 128] {
        assert!(svg.contains(&format!("width={w}")));
    }
}

#[test]
fn plot_rejects_empty_csv_and_unknown_metric() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    write_metrics_csv(&log(Vec::new()), &empty).unwrap();
    assert!(plot_metrics(&[empty], "lambda_max", &dir.path().join("x.svg")).is_err());
    assert!(!dir.path().join("x.svg").exists());

    let full = dir.path().join("full.csv");
    write_metrics_csv(&log(trajectory(&[(0, &PRE), (1, &POST)])), &full).unwrap();
    let err = plot_metrics(&[full], "lambda", &dir.path().join("y.svg")).unwrap_err();
    assert!(matches!(err, NtkError::Usage(_)));
    assert!(err.to_string().contains("lambda_max"));
}
