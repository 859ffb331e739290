//! Deterministic SGD over a task schedule with NTK probes at a fixed cadence.
//!
//! Every task is trained for a whole number of probe intervals, so each task
//! switch falls exactly on a probe step. The probe set is drawn from the first
//! task before any training and never changes.
//!
//! Random streams (all derived from the config seed): initialization uses the
//! model initializer directly; the probe draw, batch sampling and the
//! evaluation subset each get their own ChaCha stream.

pub mod config;
pub mod metrics;

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_loss, LossKind, Target};
use crate::continual::{BatchSampler, SamplingMode, TaskDistribution};
use crate::data::{load_cifar_binary, synthetic_dataset, Dataset, Split};
use crate::error::{NtkError, Result};
use crate::kv;
use crate::models::{effective_learning_rate, forward, initialize, ModelSpec};
use crate::ntk::{empirical_ntk, kernel_alignment, kernel_distance, max_eigenvalue, GramMatrix, LabelMatrix, ProbeSet};
use crate::tensor::{ParamVector, Tensor};

pub use config::{DataSource, ExperimentConfig};
pub use metrics::{metrics_from_str, metrics_to_string, read_metrics_csv, task_boundaries, write_metrics_csv, MetricLog, MetricRecord};

pub const RUN_META_VERSION: &str = "ntk-lab-run v1";
pub const METRICS_FILE: &str = "metrics.csv";
pub const META_FILE: &str = "run.meta";

const STREAM_PROBE: u64 = 1;
const STREAM_SAMPLING: u64 = 2;
const STREAM_EVAL: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// Loss or parameters became non-finite at this (1-based) iteration.
    Diverged { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub log: MetricLog,
    /// Probe-set hash observed at each record.
    pub probe_hashes: Vec<String>,
    pub status: RunStatus,
    pub config_hash: String,
    /// Default reactivation window.
    pub probe_steps_per_epoch: usize,
}

impl RunOutput {
    pub fn records(&self) -> &[MetricRecord] {
        &self.log.records
    }

    pub fn boundaries(&self) -> Vec<usize> {
        self.log.boundaries()
    }
}

/// Train and test splits for a config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data {
        DataSource::Synthetic { params, test_per_class } => {
            let train = synthetic_dataset(params, Split::Train)?;
            let mut tp = params.clone();
            tp.per_class = *test_per_class;
            let test = synthetic_dataset(&tp, Split::Test)?;
            Ok((train, test))
        }
        DataSource::Cifar { train_path, test_path } => {
            Ok((load_cifar_binary(train_path, Split::Train)?, load_cifar_binary(test_path, Split::Test)?))
        }
    }
}

/// Iteration counts derived from a config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub epoch_iterations: usize,
    /// Per task, rounded up to a multiple of the probe cadence.
    pub task_iterations: Vec<usize>,
}

impl Plan {
    /// Probe steps per epoch (at least 1).
    pub fn probe_steps_per_epoch(&self, probe_every: usize) -> usize {
        self.epoch_iterations.div_ceil(probe_every).max(1)
    }
}

pub fn plan(cfg: &ExperimentConfig, train: &Dataset, first: &TaskDistribution) -> Plan {
    let samples = cfg
        .epoch_samples
        .unwrap_or_else(|| train.indices_of(&first.support()).len());
    let epoch_iterations = samples.div_ceil(cfg.batch_size).max(1);
    let task_iterations = cfg
        .schedule
        .tasks
        .iter()
        .map(|t| (t.epochs * epoch_iterations).div_ceil(cfg.probe_every) * cfg.probe_every)
        .collect();
    Plan {
        epoch_iterations,
        task_iterations,
    }
}

pub fn model_spec(cfg: &ExperimentConfig, train: &Dataset) -> Result<ModelSpec> {
    let spec = ModelSpec {
        kind: cfg.model,
        width: cfg.width,
        input_shape: train.shape().to_vec(),
        num_classes: train.num_classes(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Probe set drawn from the first task's distribution, each class pool
/// consumed without replacement.
pub fn draw_probe(cfg: &ExperimentConfig, train: &Dataset, first: &TaskDistribution) -> Result<ProbeSet> {
    let mut rng = stream(cfg.seed, STREAM_PROBE);
    let mut sampler = BatchSampler::new(train, SamplingMode::WithoutReplacement);
    let idx = sampler.sample(first, cfg.probe_size, &mut rng)?;
    let (x, labels) = train.batch(&idx);
    ProbeSet::new(train.shape().to_vec(), x.into_data(), labels, cfg.scalarization)
}

struct Evaluator {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl Evaluator {
    fn new(cfg: &ExperimentConfig, test: &Dataset, first: &TaskDistribution) -> Result<Self> {
        let mut idx = test.indices_of(&first.support());
        if idx.is_empty() {
            return Err(NtkError::Data("test split has no samples of the first task".into()));
        }
        idx.shuffle(&mut stream(cfg.seed, STREAM_EVAL));
        idx.truncate(cfg.eval_size);
        idx.sort_unstable();
        let (inputs, labels) = test.batch(&idx);
        Ok(Evaluator { inputs, labels })
    }

    fn accuracy(&self, spec: &ModelSpec, params: &ParamVector) -> Result<f64> {
        let (out, _) = forward(spec, params, &self.inputs)?;
        let c = spec.num_classes;
        let correct = out
            .data()
            .chunks(c)
            .zip(&self.labels)
            .filter(|(row, &label)| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best == label
            })
            .count();
        Ok(correct as f64 / self.labels.len() as f64)
    }
}

struct Probe<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a ModelSpec,
    probe: &'a ProbeSet,
    labels: LabelMatrix,
    eval: Evaluator,
    initial: Option<GramMatrix>,
    history: VecDeque<GramMatrix>,
}

impl Probe<'_> {
    fn record(
        &mut self,
        params: &ParamVector,
        global_step: usize,
        task_index: usize,
        iteration: usize,
        train_loss: Option<f64>,
    ) -> Result<MetricRecord> {
        let centered = self.cfg.centered;
        let k = empirical_ntk(self.spec, params, self.probe)?;
        let lambda_max = max_eigenvalue(&k)?;
        let kernel_distance_from_init = match &self.initial {
            Some(k0) => kernel_distance(k0, &k, centered)?,
            None => kernel_distance(&k, &k, centered)?,
        };
        let kernel_distance_from_prev = match self.history.back() {
            Some(prev) => Some(kernel_distance(prev, &k, centered)?),
            None => None,
        };
        let dt = self.cfg.velocity_dt;
        let velocity = if self.history.len() >= dt {
            let old = &self.history[self.history.len() - dt];
            Some(kernel_distance(old, &k, centered)? / dt as f64)
        } else {
            None
        };
        let alignment = kernel_alignment(&k, &self.labels, centered)?;
        let task1_test_accuracy = self.eval.accuracy(self.spec, params)?;
        if self.initial.is_none() {
            self.initial = Some(k.clone());
        }
        self.history.push_back(k);
        if self.history.len() > dt {
            self.history.pop_front();
        }
        Ok(MetricRecord {
            global_step,
            task_index,
            iteration,
            lambda_max,
            kernel_distance_from_init,
            kernel_distance_from_prev,
            velocity,
            alignment,
            train_loss,
            task1_test_accuracy,
        })
    }
}

fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut y = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        y[i * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], y)
}

fn train_step(
    cfg: &ExperimentConfig,
    spec: &ModelSpec,
    params: &mut ParamVector,
    x: &Tensor,
    labels: Vec<usize>,
    lr: f64,
) -> Result<f64> {
    let (_, tape) = forward(spec, params, x)?;
    let target = match cfg.loss {
        LossKind::CrossEntropy => Target::Classes(labels),
        LossKind::Squared => Target::Values(one_hot(&labels, spec.num_classes)?),
    };
    let (loss, grad) = grad_loss(&tape, params, cfg.loss, &target)?;
    if !loss.is_finite() {
        return Err(NtkError::numerical("training loss", format!("loss is {loss}")));
    }
    params.axpy(-lr, &grad)?;
    if !params.data().iter().all(|v| v.is_finite()) {
        return Err(NtkError::numerical("parameters", "non-finite after update"));
    }
    Ok(loss)
}

/// Runs the full schedule. Divergence is not an error: the output carries a
/// poisoned final record and [`RunStatus::Diverged`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let (train, test) = load_data(cfg)?;
    run_with_data(cfg, &train, &test)
}

/// [`run_experiment`] on already loaded data.
pub fn run_with_data(cfg: &ExperimentConfig, train: &Dataset, test: &Dataset) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = model_spec(cfg, train)?;
    let dists: Vec<TaskDistribution> = cfg
        .schedule
        .tasks
        .iter()
        .map(|t| t.spec.distribution(train.num_classes()))
        .collect::<Result<_>>()?;
    let plan = plan(cfg, train, &dists[0]);
    let lr = effective_learning_rate(&cfg.regime, cfg.width)?;
    let mut params = initialize(&spec, &cfg.regime, cfg.seed)?;
    let probe = draw_probe(cfg, train, &dists[0])?;
    let mut prober = Probe {
        cfg,
        spec: &spec,
        probe: &probe,
        labels: LabelMatrix::one_hot(probe.labels(), spec.num_classes)?,
        eval: Evaluator::new(cfg, test, &dists[0])?,
        initial: None,
        history: VecDeque::new(),
    };
    let mut sampler = BatchSampler::new(train, cfg.sampling);
    let mut rng = stream(cfg.seed, STREAM_SAMPLING);

    let mut log = MetricLog {
        scalarization: cfg.scalarization,
        probe_every: cfg.probe_every,
        velocity_dt: cfg.velocity_dt,
        records: Vec::new(),
    };
    let mut probe_hashes = Vec::new();
    let output = |log: MetricLog, probe_hashes: Vec<String>, status: RunStatus| RunOutput {
        log,
        probe_hashes,
        status,
        config_hash: cfg.hash(),
        probe_steps_per_epoch: plan.probe_steps_per_epoch(cfg.probe_every),
    };
    log::info!(
        "{} with {} parameters, lr {lr}, {} iterations per epoch",
        cfg.model,
        params.dim(),
        plan.epoch_iterations
    );

    log.records.push(prober.record(&params, 0, 0, 0, None)?);
    probe_hashes.push(probe.hash());
    let mut iteration = 0;
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    for (ti, dist) in dists.iter().enumerate() {
        if ti > 0 {
            log::info!("task {ti} starts after iteration {iteration} (probe step {})", log.records.len() - 1);
        }
        for _ in 0..plan.task_iterations[ti] {
            let idx = sampler.sample(dist, cfg.batch_size, &mut rng)?;
            let (x, labels) = train.batch(&idx);
            let attempt = iteration + 1;
            let step = train_step(cfg, &spec, &mut params, &x, labels, lr).and_then(|loss| {
                iteration += 1;
                loss_sum += loss;
                loss_count += 1;
                if iteration % cfg.probe_every != 0 {
                    return Ok(None);
                }
                let mean = loss_sum / loss_count as f64;
                let rec = prober.record(&params, log.records.len(), ti, iteration, Some(mean))?;
                Ok(Some(rec))
            });
            match step {
                Ok(Some(rec)) => {
                    log.records.push(rec);
                    probe_hashes.push(probe.hash());
                    loss_sum = 0.0;
                    loss_count = 0;
                }
                Ok(None) => {}
                Err(NtkError::Numerical { context, detail }) => {
                    let failed = attempt;
                    log::warn!("diverged at iteration {failed}: {context}: {detail}");
                    log.records.push(MetricRecord::poisoned(log.records.len(), ti, failed));
                    probe_hashes.push(probe.hash());
                    return Ok(output(log, probe_hashes, RunStatus::Diverged { iteration: failed }));
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(output(log, probe_hashes, RunStatus::Completed))
}

/// Writes `metrics.csv`, `run.meta` and the canonical `config.txt` into `dir`.
pub fn write_run(output: &RunOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NtkError::io(dir, e))?;
    write_metrics_csv(&output.log, dir.join(METRICS_FILE))?;
    let status = match output.status {
        RunStatus::Completed => "completed".to_string(),
        RunStatus::Diverged { iteration } => format!("diverged at iteration {iteration}"),
    };
    let boundaries: Vec<String> = output.boundaries().iter().map(|b| b.to_string()).collect();
    let meta: Vec<(String, String)> = [
        ("version", RUN_META_VERSION.to_string()),
        ("artifact_version", crate::VERSION.to_string()),
        ("config_hash", output.config_hash.clone()),
        ("probe_hash", output.probe_hashes.first().cloned().unwrap_or_default()),
        ("scalarization", output.log.scalarization.to_string()),
        ("records", output.log.records.len().to_string()),
        ("probe_steps_per_epoch", output.probe_steps_per_epoch.to_string()),
        ("boundaries", boundaries.join(",")),
        ("status", status),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, kv::format(&meta)).map_err(|e| NtkError::io(&meta_path, e))?;
    let cfg_path = dir.join("config.txt");
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| NtkError::io(&cfg_path, e))
}

/// Runs `cfg` and writes its artifacts to `cfg.out`.
pub fn run_to_dir(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = run_experiment(cfg)?;
    write_run(&out, cfg, &cfg.out)?;
    Ok(out)
}

/// Splits `v1,v2,...` at commas outside parentheses.
pub fn split_values(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in list.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    out.push(cur.trim().to_string());
    out
}

fn dir_name(assignments: &[(String, String)]) -> String {
    assignments
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(",")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=.,_-".contains(c) { c } else { '_' })
        .collect()
}

/// Every config of the cartesian product of `vary`, each with its own output
/// subdirectory under `base.out`.
pub fn sweep_configs(base: &ExperimentConfig, vary: &[(String, Vec<String>)]) -> Result<Vec<ExperimentConfig>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in vary {
        if values.is_empty() || values.iter().any(String::is_empty) {
            return Err(NtkError::Config(format!("--vary {key} has an empty value")));
        }
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
        .into_iter()
        .map(|assignments| {
            let mut cfg = base.clone();
            for (k, v) in &assignments {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            cfg.out = base.out.join(dir_name(&assignments));
            Ok(cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_at_top_level_commas() {
        assert_eq!(split_values("32,64"), vec!["32", "64"]);
        assert_eq!(
            split_values("window(0,4); window(4,4),window(0,4)"),
            vec!["window(0,4); window(4,4)", "window(0,4)"]
        );
    }

    #[test]
    fn sweep_is_cartesian() {
        let base = ExperimentConfig::default();
        let cfgs = sweep_configs(
            &base,
            &[
                ("width".into(), vec!["32".into(), "64".into()]),
                ("lr".into(), vec!["0.1".into(), "0.01".into(), "0.001".into()]),
            ],
        )
        .unwrap();
        assert_eq!(cfgs.len(), 6);
        assert_eq!(cfgs[1].out, base.out.join("width=32,lr=0.01"));
        assert!(sweep_configs(&base, &[("nope".into(), vec!["1".into()])]).is_err());
    }
}
