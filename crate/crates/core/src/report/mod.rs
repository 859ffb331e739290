//! Reactivation statistics, similarity trends and plots from metric logs.

pub mod plot;

use crate::error::{NtkError, Result};
use crate::kv;
use crate::runner::{task_boundaries, MetricRecord};

pub use plot::{plot_metrics, render_svg, Curve};

/// Default recovery tolerance as a fraction of the baseline.
pub const DEFAULT_RELATIVE_TOLERANCE: f64 = 0.05;
pub const STATS_VERSION: &str = "ntk-lab-stats v1";

/// How far below the baseline still counts as recovered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    /// Fraction of `|baseline|`.
    Relative(f64),
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative(DEFAULT_RELATIVE_TOLERANCE)
    }
}

impl Tolerance {
    /// `0.5` is absolute, `5%` is relative to the baseline.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || NtkError::Usage(format!("tolerance {s:?}: expected a number or a percentage"));
        let t = match s.trim().strip_suffix('%') {
            Some(p) => Tolerance::Relative(p.trim().parse::<f64>().map_err(|_| bad())? / 100.0),
            None => Tolerance::Absolute(s.trim().parse().map_err(|_| bad())?),
        };
        match t {
            Tolerance::Absolute(v) | Tolerance::Relative(v) if v >= 0.0 && v.is_finite() => Ok(t),
            _ => Err(bad()),
        }
    }

    fn amount(&self, baseline: f64) -> f64 {
        match *self {
            Tolerance::Absolute(v) => v,
            Tolerance::Relative(f) => f * baseline.abs(),
        }
    }
}

/// Check-mark statistics at one task switch.
///
/// The switch is the record index `b` of the last probe of the old task;
/// post-switch offsets count probe steps after it, so `b + 1` is offset 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReactivationStats {
    pub switch_step: usize,
    /// Median `lambda_max` over the last `W` records up to the switch.
    pub pre_switch_baseline: f64,
    /// Baseline minus the minimum `lambda_max` over offsets `1..=W`; negative
    /// when there is no drop.
    pub drop_depth: f64,
    /// Offset of the minimum.
    pub min_offset: usize,
    /// First offset at or after the minimum where `lambda_max` is back within
    /// the tolerance of the baseline; `None` if that never happens before the
    /// next switch or the end of the log.
    pub recovery_steps: Option<usize>,
    /// Velocity at offset 1 over the median pre-switch velocity.
    pub velocity_spike_ratio: f64,
    /// Largest velocity over offsets `1..=W`.
    pub peak_velocity: f64,
    /// Largest rise of `kernel_distance_from_init` over its switch value
    /// within offsets `1..=W`.
    pub peak_distance_jump: f64,
    /// Fewer than `W` records were available on one side.
    pub partial: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Statistics for every task switch in `records`.
pub fn reactivation_stats(records: &[MetricRecord], window: usize, tolerance: Tolerance) -> Result<Vec<ReactivationStats>> {
    if window == 0 {
        return Err(NtkError::Usage("window must be at least one probe step".into()));
    }
    if records.iter().any(MetricRecord::is_poisoned) {
        return Err(NtkError::Data("log contains a poisoned record".into()));
    }
    let boundaries = task_boundaries(records);
    if boundaries.is_empty() {
        return Err(NtkError::Data("log has no task switch".into()));
    }
    let mut out = Vec::with_capacity(boundaries.len());
    for (k, &b) in boundaries.iter().enumerate() {
        let segment_end = boundaries.get(k + 1).copied().unwrap_or(records.len() - 1);
        let pre_start = (b + 1).saturating_sub(window);
        let pre = &records[pre_start..=b];
        let post_last = (b + window).min(segment_end);
        let post = &records[b + 1..=post_last];
        let partial = pre.len() < window || post.len() < window;
        if partial {
            log::warn!("switch at step {b}: fewer than {window} records on one side; statistics are partial");
        }

        let lambdas: Vec<f64> = pre.iter().map(|r| r.lambda_max).collect();
        let baseline = median(&lambdas).expect("nonempty pre window");
        let (mut min_offset, mut min_value) = (1, post[0].lambda_max);
        for (i, r) in post.iter().enumerate() {
            if r.lambda_max < min_value {
                min_value = r.lambda_max;
                min_offset = i + 1;
            }
        }
        let threshold = baseline - tolerance.amount(baseline);
        let recovery_steps = (b + min_offset..=segment_end)
            .find(|&i| records[i].lambda_max >= threshold)
            .map(|i| i - b);

        let pre_v: Vec<f64> = pre.iter().filter_map(|r| r.velocity).collect();
        let velocity_spike_ratio = match (post[0].velocity, median(&pre_v)) {
            (Some(v), Some(m)) => ratio(v, m),
            _ => f64::NAN,
        };
        let peak_velocity = post.iter().filter_map(|r| r.velocity).fold(f64::NAN, f64::max);
        let d0 = records[b].kernel_distance_from_init;
        let peak_distance_jump = post
            .iter()
            .map(|r| r.kernel_distance_from_init - d0)
            .fold(f64::NEG_INFINITY, f64::max);

        out.push(ReactivationStats {
            switch_step: b,
            pre_switch_baseline: baseline,
            drop_depth: baseline - min_value,
            min_offset,
            recovery_steps,
            velocity_spike_ratio,
            peak_velocity,
            peak_distance_jump,
            partial,
        });
    }
    Ok(out)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson correlation of average ranks, 0 when either
/// side has no variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(NtkError::Usage("rank correlation needs two equal-length series of at least 2".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub levels: usize,
    /// Rank correlation of similarity with drop depth.
    pub drop_correlation: f64,
    /// Rank correlation of similarity with the peak distance jump.
    pub distance_jump_correlation: f64,
}

/// Rank correlations across similarity levels; needs at least 4 entries.
pub fn similarity_trend(stats: &[(f64, ReactivationStats)]) -> Result<TrendReport> {
    if stats.len() < 4 {
        return Err(NtkError::Usage(format!("similarity trend needs at least 4 levels, got {}", stats.len())));
    }
    let sim: Vec<f64> = stats.iter().map(|(s, _)| *s).collect();
    let drop: Vec<f64> = stats.iter().map(|(_, r)| r.drop_depth).collect();
    let jump: Vec<f64> = stats.iter().map(|(_, r)| r.peak_distance_jump).collect();
    Ok(TrendReport {
        levels: stats.len(),
        drop_correlation: spearman(&sim, &drop)?,
        distance_jump_correlation: spearman(&sim, &jump)?,
    })
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

/// Key-value stats text, one `switch.<k>.<field>` group per switch.
pub fn stats_to_text(stats: &[ReactivationStats], window: usize, tolerance: Tolerance) -> String {
    let tol = match tolerance {
        Tolerance::Absolute(v) => real(v),
        Tolerance::Relative(f) => format!("{}%", real(f * 100.0)),
    };
    let mut pairs = vec![
        ("version".to_string(), STATS_VERSION.to_string()),
        ("window".to_string(), window.to_string()),
        ("tolerance".to_string(), tol),
        ("switches".to_string(), stats.len().to_string()),
    ];
    for (k, s) in stats.iter().enumerate() {
        let p = |f: &str| format!("switch.{k}.{f}");
        pairs.push((p("step"), s.switch_step.to_string()));
        pairs.push((p("baseline"), real(s.pre_switch_baseline)));
        pairs.push((p("drop_depth"), real(s.drop_depth)));
        pairs.push((p("min_offset"), s.min_offset.to_string()));
        pairs.push((
            p("recovery_steps"),
            s.recovery_steps.map_or("unrecovered".to_string(), |r| r.to_string()),
        ));
        pairs.push((p("velocity_spike_ratio"), real(s.velocity_spike_ratio)));
        pairs.push((p("peak_velocity"), real(s.peak_velocity)));
        pairs.push((p("peak_distance_jump"), real(s.peak_distance_jump)));
        pairs.push((p("partial"), s.partial.to_string()));
    }
    kv::format(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(lambdas: &[f64], velocities: &[f64], switch: usize) -> Vec<MetricRecord> {
        lambdas
            .iter()
            .zip(velocities)
            .enumerate()
            .map(|(i, (&l, &v))| MetricRecord {
                global_step: i,
                task_index: usize::from(i > switch),
                iteration: 10 * i,
                lambda_max: l,
                kernel_distance_from_init: 0.0,
                kernel_distance_from_prev: (i > 0).then_some(v),
                velocity: (i > 0).then_some(v),
                alignment: 0.5,
                train_loss: None,
                task1_test_accuracy: 0.5,
            })
            .collect()
    }

    #[test]
    fn checkmark_example() {
        let l = [10.0, 10.0, 10.0, 10.0, 4.0, 5.0, 7.0, 9.0, 10.0, 10.0];
        let v = [0.0, 1.0, 1.0, 1.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let s = reactivation_stats(&records(&l, &v, 3), 3, Tolerance::Absolute(0.5)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].pre_switch_baseline, 10.0);
        assert_eq!(s[0].drop_depth, 6.0);
        assert_eq!(s[0].recovery_steps, Some(5));
        assert_eq!(s[0].velocity_spike_ratio, 5.0);
    }

    #[test]
    fn constant_trajectory_has_no_drop() {
        let s = reactivation_stats(&records(&[3.0; 8], &[0.2; 8], 3), 3, Tolerance::default()).unwrap();
        assert!(s[0].drop_depth <= 0.0);
        assert_eq!(s[0].velocity_spike_ratio, 1.0);
    }

    #[test]
    fn no_switch_is_an_error() {
        let mut r = records(&[1.0; 4], &[0.0; 4], 10);
        r.iter_mut().for_each(|r| r.task_index = 0);
        assert!(reactivation_stats(&r, 2, Tolerance::default()).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[8.0, 4.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0; 4]).unwrap(), 0.0);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn tolerance_parsing() {
        assert_eq!(Tolerance::parse("0.5").unwrap(), Tolerance::Absolute(0.5));
        assert_eq!(Tolerance::parse("5%").unwrap(), Tolerance::Relative(0.05));
        assert!(Tolerance::parse("-1").is_err());
        assert!(Tolerance::parse("x").is_err());
    }
}
