//! Task distributions, schedules and the two similarity-controlled shift
//! families.
//!
//! - Window family: uniform over `w` consecutive classes `{i, ..., i+w-1}`,
//!   compared by Jaccard overlap of supports.
//! - Mixture family: `(1 - alpha) * U{0..4} + alpha * U{5..9}`, compared by
//!   `1 - |alpha - beta|`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::Distribution;

use crate::data::Dataset;
use crate::error::{NtkError, Result};

/// Class sets interpolated by [`mixture_family`].
pub const MIXTURE_BASE_0: [usize; 5] = [0, 1, 2, 3, 4];
pub const MIXTURE_BASE_1: [usize; 5] = [5, 6, 7, 8, 9];

/// Mixture weights over class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDistribution {
    weights: BTreeMap<usize, f64>,
}

impl TaskDistribution {
    /// Validates and stores weights; zero-weight classes are kept but are not
    /// part of the support.
    pub fn new(weights: BTreeMap<usize, f64>) -> Result<Self> {
        if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(NtkError::Config("class weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.values().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(NtkError::Config(format!("class weights sum to {total}, not 1")));
        }
        if !weights.values().any(|&w| w > 0.0) {
            return Err(NtkError::Config("task distribution has empty support".into()));
        }
        Ok(TaskDistribution { weights })
    }

    /// Uniform over the given classes.
    pub fn uniform(classes: &[usize]) -> Result<Self> {
        let set: BTreeSet<usize> = classes.iter().copied().collect();
        if set.is_empty() {
            return Err(NtkError::Config("uniform distribution over no classes".into()));
        }
        let w = 1.0 / set.len() as f64;
        TaskDistribution::new(set.into_iter().map(|c| (c, w)).collect())
    }

    pub fn weights(&self) -> &BTreeMap<usize, f64> {
        &self.weights
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights.get(&class).copied().unwrap_or(0.0)
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.weights
            .iter()
            .filter(|(_, &w)| w > 0.0)
            .map(|(&c, _)| c)
            .collect()
    }

    pub fn max_class(&self) -> usize {
        *self.weights.keys().next_back().expect("nonempty by construction")
    }
}

/// Uniform over the `width` consecutive classes starting at `start`.
pub fn window_family(start: usize, width: usize, num_classes: usize) -> Result<TaskDistribution> {
    if width == 0 {
        return Err(NtkError::Config("window width must be at least 1".into()));
    }
    if start + width > num_classes {
        return Err(NtkError::Config(format!(
            "window {start}..{} exceeds the {num_classes} available classes",
            start + width - 1
        )));
    }
    TaskDistribution::uniform(&(start..start + width).collect::<Vec<_>>())
}

/// `(1 - alpha) * U{0..4} + alpha * U{5..9}`.
pub fn mixture_family(alpha: f64) -> Result<TaskDistribution> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(NtkError::Config(format!("mixture alpha {alpha} outside [0, 1]")));
    }
    let mut weights = BTreeMap::new();
    for c in MIXTURE_BASE_0 {
        weights.insert(c, (1.0 - alpha) / 5.0);
    }
    for c in MIXTURE_BASE_1 {
        weights.insert(c, alpha / 5.0);
    }
    TaskDistribution::new(weights)
}

/// `|A ∩ B| / |A ∪ B|` over the supports.
pub fn jaccard_similarity(a: &TaskDistribution, b: &TaskDistribution) -> f64 {
    let (sa, sb) = (a.support(), b.support());
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64
}

/// `1 - |alpha - beta|`.
pub fn mixture_similarity(alpha: f64, beta: f64) -> Result<f64> {
    for v in [alpha, beta] {
        if !(0.0..=1.0).contains(&v) {
            return Err(NtkError::Config(format!("mixture alpha {v} outside [0, 1]")));
        }
    }
    Ok(1.0 - (alpha - beta).abs())
}

/// Textual task description used in config files.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskSpec {
    Window { start: usize, width: usize },
    Mixture { alpha: f64 },
    Classes(Vec<usize>),
}

impl TaskSpec {
    pub fn distribution(&self, num_classes: usize) -> Result<TaskDistribution> {
        let dist = match self {
            TaskSpec::Window { start, width } => window_family(*start, *width, num_classes)?,
            TaskSpec::Mixture { alpha } => mixture_family(*alpha)?,
            TaskSpec::Classes(cs) => TaskDistribution::uniform(cs)?,
        };
        if dist.max_class() >= num_classes {
            return Err(NtkError::Config(format!(
                "task {self} uses class {} but the dataset has {num_classes}",
                dist.max_class()
            )));
        }
        Ok(dist)
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskSpec::Window { start, width } => write!(f, "window({start},{width})"),
            TaskSpec::Mixture { alpha } => write!(f, "mixture({alpha})"),
            TaskSpec::Classes(cs) => {
                let list: Vec<String> = cs.iter().map(|c| c.to_string()).collect();
                write!(f, "classes({})", list.join(","))
            }
        }
    }
}

impl FromStr for TaskSpec {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || NtkError::Config(format!("cannot parse task {s:?}; expected window(i,w), mixture(a) or classes(c,...)"));
        let s = s.trim();
        let open = s.find('(').ok_or_else(bad)?;
        if !s.ends_with(')') {
            return Err(bad());
        }
        let name = s[..open].trim();
        let args: Vec<&str> = s[open + 1..s.len() - 1].split(',').map(str::trim).collect();
        let int = |a: &str| a.parse::<usize>().map_err(|_| bad());
        match (name, args.as_slice()) {
            ("window", [i, w]) => Ok(TaskSpec::Window {
                start: int(i)?,
                width: int(w)?,
            }),
            ("mixture", [a]) => Ok(TaskSpec::Mixture {
                alpha: a.parse().map_err(|_| bad())?,
            }),
            ("classes", list) if !list.is_empty() && !list[0].is_empty() => {
                Ok(TaskSpec::Classes(list.iter().map(|a| int(a)).collect::<Result<_>>()?))
            }
            _ => Err(bad()),
        }
    }
}

/// One stage of a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledTask {
    pub spec: TaskSpec,
    pub epochs: usize,
}

/// Ordered tasks with per-task epoch counts.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSchedule {
    pub tasks: Vec<ScheduledTask>,
}

impl TaskSchedule {
    pub fn new(tasks: Vec<ScheduledTask>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(NtkError::Config("schedule has no tasks".into()));
        }
        Ok(TaskSchedule { tasks })
    }

    /// Parses `window(0,5); window(5,5)@20`, where `@n` (possibly 0) overrides the
    /// default epoch count for that task.
    pub fn parse(text: &str, default_epochs: usize) -> Result<Self> {
        let mut tasks = Vec::new();
        for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (spec, epochs) = match item.rsplit_once('@') {
                Some((spec, e)) => (
                    spec,
                    e.trim()
                        .parse()
                        .map_err(|_| NtkError::Config(format!("bad epoch count in {item:?}")))?,
                ),
                None => (item, default_epochs),
            };
            tasks.push(ScheduledTask {
                spec: spec.parse()?,
                epochs,
            });
        }
        TaskSchedule::new(tasks)
    }

    /// Inverse of [`TaskSchedule::parse`] with explicit epoch counts.
    pub fn to_text(&self) -> String {
        self.tasks
            .iter()
            .map(|t| format!("{}@{}", t.spec, t.epochs))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// How images are drawn within a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingMode {
    /// Each class pool is shuffled and consumed without replacement, then
    /// reshuffled when exhausted.
    WithoutReplacement,
    Iid,
}

impl FromStr for SamplingMode {
    type Err = NtkError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "without_replacement" => Ok(SamplingMode::WithoutReplacement),
            "iid" => Ok(SamplingMode::Iid),
            _ => Err(NtkError::Config(format!("unknown sampling mode {s:?}"))),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::WithoutReplacement => "without_replacement",
            SamplingMode::Iid => "iid",
        })
    }
}

/// Per-class sampling state. The random source is always passed in, so the
/// sampler itself holds no randomness.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    mode: SamplingMode,
    by_class: Vec<Vec<usize>>,
    pools: Vec<Vec<usize>>,
    reshuffles: usize,
}

impl BatchSampler {
    pub fn new(dataset: &Dataset, mode: SamplingMode) -> Self {
        let mut by_class = vec![Vec::new(); dataset.num_classes()];
        for (i, &l) in dataset.labels().iter().enumerate() {
            by_class[l].push(i);
        }
        BatchSampler {
            mode,
            pools: vec![Vec::new(); by_class.len()],
            by_class,
            reshuffles: 0,
        }
    }

    /// Number of times a class pool ran dry and was refilled.
    pub fn reshuffles(&self) -> usize {
        self.reshuffles
    }

    /// Draws `batch` dataset indices: the class of each sample i.i.d. from the
    /// task weights, the image within the class per the sampling mode.
    pub fn sample<R: Rng + ?Sized>(
        &mut self,
        dist: &TaskDistribution,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        let classes: Vec<usize> = dist.support().into_iter().collect();
        for &c in &classes {
            if c >= self.by_class.len() || self.by_class[c].is_empty() {
                return Err(NtkError::Data(format!("dataset has no samples of class {c}")));
            }
        }
        let weights: Vec<f64> = classes.iter().map(|&c| dist.weight(c)).collect();
        let picker = WeightedIndex::new(&weights)
            .map_err(|e| NtkError::Config(format!("class weights: {e}")))?;
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let c = classes[picker.sample(rng)];
            let idx = match self.mode {
                SamplingMode::Iid => {
                    let members = &self.by_class[c];
                    members[rng.random_range(0..members.len())]
                }
                SamplingMode::WithoutReplacement => {
                    if self.pools[c].is_empty() {
                        let mut pool = self.by_class[c].clone();
                        pool.shuffle(rng);
                        self.pools[c] = pool;
                        self.reshuffles += 1;
                        log::trace!("class {c} pool refilled");
                    }
                    self.pools[c].pop().expect("refilled above")
                }
            };
            out.push(idx);
        }
        Ok(out)
    }
}
