//! Experiment configuration and its flat-file form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::autodiff::LossKind;
use crate::continual::{SamplingMode, TaskSchedule};
use crate::data::SyntheticParams;
use crate::error::{NtkError, Result};
use crate::kv;
use crate::models::{InitKind, LrScaling, ModelKind, ParamRegime};
use crate::ntk::Scalarization;

impl FromStr for LossKind {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "squared" => Ok(LossKind::Squared),
            _ => Err(NtkError::Config(format!("unknown loss {s:?}; expected cross_entropy or squared"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Squared => "squared",
        })
    }
}

/// Where images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Gaussian-blob images; `params.per_class` is the train count.
    Synthetic { params: SyntheticParams, test_per_class: usize },
    Cifar { train_path: PathBuf, test_path: PathBuf },
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub width: usize,
    pub regime: ParamRegime,
    pub loss: LossKind,
    pub seed: u64,
    pub batch_size: usize,
    pub probe_size: usize,
    pub scalarization: Scalarization,
    /// Iterations between probe steps.
    pub probe_every: usize,
    /// Velocity gap in probe steps.
    pub velocity_dt: usize,
    pub centered: bool,
    pub sampling: SamplingMode,
    pub data: DataSource,
    pub schedule: TaskSchedule,
    /// Samples per epoch; `None` means the train images of the first task.
    pub epoch_samples: Option<usize>,
    pub eval_size: usize,
    /// Output directory (not part of the config hash).
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::Cnn3,
            width: 32,
            regime: ParamRegime {
                init: InitKind::KaimingNormal,
                lr_base: 1e-3,
                lr_scaling: LrScaling::None,
                reference_width: 32,
            },
            loss: LossKind::CrossEntropy,
            seed: 0,
            batch_size: 32,
            probe_size: 32,
            scalarization: Scalarization::TrueClassLogit,
            probe_every: 10,
            velocity_dt: 1,
            centered: false,
            sampling: SamplingMode::WithoutReplacement,
            data: DataSource::Synthetic {
                params: SyntheticParams {
                    classes: 10,
                    per_class: 100,
                    shape: vec![3, 8, 8],
                    noise: 0.3,
                    seed: 0,
                },
                test_per_class: 50,
            },
            schedule: TaskSchedule::parse("window(0,5); window(5,5)", 10).expect("default schedule parses"),
            epoch_samples: None,
            eval_size: 200,
            out: PathBuf::from("out"),
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| NtkError::Config(format!("{key}: cannot parse {v:?}")))
}

fn positive(key: &str, v: &str) -> Result<usize> {
    let n: usize = num(key, v)?;
    if n == 0 {
        return Err(NtkError::Config(format!("{key} must be positive")));
    }
    Ok(n)
}

fn parse_shape(v: &str) -> Result<Vec<usize>> {
    let dims: Vec<usize> = v
        .split('x')
        .map(|d| num("data.shape", d.trim()))
        .collect::<Result<_>>()?;
    if dims.len() != 3 || dims.contains(&0) {
        return Err(NtkError::Config(format!("data.shape must look like 3x8x8, got {v:?}")));
    }
    Ok(dims)
}

/// Keys in canonical order.
pub const KEYS: &[&str] = &[
    "model",
    "width",
    "init",
    "lr",
    "lr_scaling",
    "lr_ref_width",
    "loss",
    "seed",
    "batch_size",
    "probe_size",
    "scalarization",
    "probe_every",
    "velocity_dt",
    "centered",
    "sampling",
    "dataset",
    "data.classes",
    "data.train_per_class",
    "data.test_per_class",
    "data.shape",
    "data.noise",
    "data.seed",
    "data.train_path",
    "data.test_path",
    "tasks",
    "epochs",
    "epoch_samples",
    "eval_size",
    "out",
];

impl ExperimentConfig {
    /// Defaults overridden by the pairs in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = kv::parse(text)?;
        let mut cfg = ExperimentConfig::default();
        // the schedule depends on `epochs`, which may come later in the file
        let mut tasks = None;
        let mut epochs = None;
        let mut source = None;
        let mut paths = (None, None);
        for (k, v) in &pairs {
            match k.as_str() {
                "tasks" => tasks = Some(v.clone()),
                "epochs" => epochs = Some(num::<usize>(k, v)?),
                "dataset" => source = Some(v.clone()),
                "data.train_path" => paths.0 = Some(PathBuf::from(v)),
                "data.test_path" => paths.1 = Some(PathBuf::from(v)),
                _ => cfg.set(k, v)?,
            }
        }
        match source.as_deref() {
            None | Some("synthetic") => {
                if paths.0.is_some() || paths.1.is_some() {
                    return Err(NtkError::Config("data paths given for a synthetic dataset".into()));
                }
            }
            Some("cifar") => {
                let (Some(train_path), Some(test_path)) = paths else {
                    return Err(NtkError::Config("dataset = cifar needs data.train_path and data.test_path".into()));
                };
                if let Some((k, _)) = pairs
                    .iter()
                    .find(|(k, _)| k.starts_with("data.") && k != "data.train_path" && k != "data.test_path")
                {
                    return Err(NtkError::Config(format!("{k} applies to synthetic data only")));
                }
                cfg.data = DataSource::Cifar { train_path, test_path };
            }
            Some(other) => return Err(NtkError::Config(format!("unknown dataset {other:?}"))),
        }
        match (tasks, epochs) {
            (Some(text), e) => cfg.schedule = TaskSchedule::parse(&text, e.unwrap_or(10))?,
            (None, Some(e)) => cfg.set("epochs", &e.to_string())?,
            (None, None) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "model" => self.model = v.parse()?,
            "width" => self.width = positive(key, v)?,
            "init" => self.regime.init = v.parse()?,
            "lr" => self.regime.lr_base = num(key, v)?,
            "lr_scaling" => self.regime.lr_scaling = v.parse()?,
            "lr_ref_width" => self.regime.reference_width = positive(key, v)?,
            "loss" => self.loss = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "batch_size" => self.batch_size = positive(key, v)?,
            "probe_size" => self.probe_size = positive(key, v)?,
            "scalarization" => self.scalarization = v.parse()?,
            "probe_every" => self.probe_every = positive(key, v)?,
            "velocity_dt" => self.velocity_dt = positive(key, v)?,
            "centered" => self.centered = num(key, v)?,
            "sampling" => self.sampling = v.parse()?,
            "eval_size" => self.eval_size = positive(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "epoch_samples" => {
                self.epoch_samples = match v {
                    "auto" => None,
                    _ => Some(positive(key, v)?),
                }
            }
            "tasks" => {
                let epochs = self.schedule.tasks.first().map_or(10, |t| t.epochs);
                self.schedule = TaskSchedule::parse(v, epochs)?;
            }
            "epochs" => {
                let e: usize = num(key, v)?;
                for t in &mut self.schedule.tasks {
                    t.epochs = e;
                }
            }
            "dataset" => match (v, &self.data) {
                ("synthetic", DataSource::Synthetic { .. }) | ("cifar", DataSource::Cifar { .. }) => {}
                ("synthetic", _) => self.data = ExperimentConfig::default().data,
                ("cifar", _) => {
                    self.data = DataSource::Cifar {
                        train_path: PathBuf::new(),
                        test_path: PathBuf::new(),
                    }
                }
                _ => return Err(NtkError::Config(format!("unknown dataset {v:?}"))),
            },
            "data.train_path" | "data.test_path" => match &mut self.data {
                DataSource::Cifar { train_path, test_path } => {
                    *(if key == "data.train_path" { train_path } else { test_path }) = PathBuf::from(v)
                }
                _ => return Err(NtkError::Config(format!("{key} needs dataset = cifar"))),
            },
            k if k.starts_with("data.") => match &mut self.data {
                DataSource::Synthetic { params, test_per_class } => match k {
                    "data.classes" => params.classes = num(key, v)?,
                    "data.train_per_class" => params.per_class = positive(key, v)?,
                    "data.test_per_class" => *test_per_class = positive(key, v)?,
                    "data.shape" => params.shape = parse_shape(v)?,
                    "data.noise" => params.noise = num(key, v)?,
                    "data.seed" => params.seed = num(key, v)?,
                    _ => return Err(NtkError::Config(format!("unknown config key {key:?}"))),
                },
                DataSource::Cifar { .. } => {
                    return Err(NtkError::Config(format!("{key} applies to synthetic data only")))
                }
            },
            _ => return Err(NtkError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.regime.lr_base >= 0.0 && self.regime.lr_base.is_finite()) {
            return Err(NtkError::Config(format!("lr must be a nonnegative number, got {}", self.regime.lr_base)));
        }
        if let DataSource::Cifar { train_path, test_path } = &self.data {
            if train_path.as_os_str().is_empty() || test_path.as_os_str().is_empty() {
                return Err(NtkError::Config("dataset = cifar needs data.train_path and data.test_path".into()));
            }
        }
        Ok(())
    }

    /// Every key with its value, in canonical order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut p: Vec<(&str, String)> = vec![
            ("model", self.model.to_string()),
            ("width", self.width.to_string()),
            ("init", self.regime.init.to_string()),
            ("lr", format!("{:?}", self.regime.lr_base)),
            ("lr_scaling", self.regime.lr_scaling.to_string()),
            ("lr_ref_width", self.regime.reference_width.to_string()),
            ("loss", self.loss.to_string()),
            ("seed", self.seed.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("probe_size", self.probe_size.to_string()),
            ("scalarization", self.scalarization.to_string()),
            ("probe_every", self.probe_every.to_string()),
            ("velocity_dt", self.velocity_dt.to_string()),
            ("centered", self.centered.to_string()),
            ("sampling", self.sampling.to_string()),
        ];
        match &self.data {
            DataSource::Synthetic { params, test_per_class } => {
                p.push(("dataset", "synthetic".into()));
                p.push(("data.classes", params.classes.to_string()));
                p.push(("data.train_per_class", params.per_class.to_string()));
                p.push(("data.test_per_class", test_per_class.to_string()));
                let dims: Vec<String> = params.shape.iter().map(|d| d.to_string()).collect();
                p.push(("data.shape", dims.join("x")));
                p.push(("data.noise", format!("{:?}", params.noise)));
                p.push(("data.seed", params.seed.to_string()));
            }
            DataSource::Cifar { train_path, test_path } => {
                p.push(("dataset", "cifar".into()));
                p.push(("data.train_path", train_path.display().to_string()));
                p.push(("data.test_path", test_path.display().to_string()));
            }
        }
        p.push(("tasks", self.schedule.to_text()));
        p.push((
            "epoch_samples",
            self.epoch_samples.map_or("auto".to_string(), |n| n.to_string()),
        ));
        p.push(("eval_size", self.eval_size.to_string()));
        p.push(("out", self.out.display().to_string()));
        p.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_text(&self) -> String {
        kv::format(&self.to_pairs())
    }

    /// SHA-256 of the canonical text without the output directory.
    pub fn hash(&self) -> String {
        let pairs: Vec<(String, String)> = self.to_pairs().into_iter().filter(|(k, _)| k != "out").collect();
        hex::encode(Sha256::digest(kv::format(&pairs).as_bytes()))
    }
}
