//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::optim::AdamConfig;
use crate::data::AugmentationConfig;
use crate::error::{Error, Result};
use crate::losses::TRIPLET_MARGIN;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Classification,
    Segmentation,
    Autoencoder,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
            Task::Autoencoder => "autoencoder",
        }
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "cls" => Ok(Task::Classification),
            "segmentation" | "seg" => Ok(Task::Segmentation),
            "autoencoder" | "ae" => Ok(Task::Autoencoder),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

/// Where samples come from: manifests on disk or generated shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Manifest {
        train: PathBuf,
        /// Without a test manifest the train manifest is split.
        test: Option<PathBuf>,
    },
    Synthetic {
        kinds: Vec<String>,
        train_per_class: usize,
        test_per_class: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub points: usize,
    pub latent: usize,
    /// Decoder expansion factors; empty picks them from `points`.
    pub expansions: Vec<usize>,
    /// Segmentation parts per category; empty uses the data's default.
    pub part_counts: Vec<usize>,
    pub dropout: f64,
    pub block_dropout: f64,
    pub data: DataSource,
    pub train_fraction: f64,
    pub augmentation: AugmentationConfig,
    pub triplet: bool,
    pub triplet_weight: f64,
    pub margin: f64,
}

/// Every accepted key, in echo order.
pub const CONFIG_KEYS: &[&str] = &[
    "task",
    "seed",
    "epochs",
    "max_steps",
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "points",
    "latent",
    "expansions",
    "part_counts",
    "dropout",
    "block_dropout",
    "train_manifest",
    "test_manifest",
    "train_fraction",
    "synthetic",
    "synthetic_train",
    "synthetic_test",
    "augment",
    "aug_noise",
    "aug_rotate_vertical",
    "aug_rotate_lateral",
    "aug_scale",
    "aug_translate",
    "triplet",
    "triplet_weight",
    "margin",
];

impl RunConfig {
    pub fn defaults(task: Task) -> Self {
        Self {
            task,
            seed: 0,
            epochs: 30,
            max_steps: 0,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            points: match task {
                Task::Classification => 1024,
                _ => 2048,
            },
            latent: 128,
            expansions: Vec::new(),
            part_counts: Vec::new(),
            dropout: 0.6,
            block_dropout: 0.0,
            data: DataSource::Synthetic {
                kinds: match task {
                    Task::Segmentation => vec!["two_segment_arm".into()],
                    _ => vec!["sphere".into(), "box".into(), "torus".into()],
                },
                train_per_class: 100,
                test_per_class: 30,
            },
            train_fraction: 0.8,
            augmentation: match task {
                Task::Classification => AugmentationConfig::classification(),
                Task::Segmentation => AugmentationConfig::segmentation(),
                Task::Autoencoder => AugmentationConfig::identity(),
            },
            triplet: false,
            triplet_weight: 1.0,
            margin: TRIPLET_MARGIN,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        // Relative data paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new(""));
        if let DataSource::Manifest { train, test } = &mut cfg.data {
            for p in std::iter::once(train).chain(test.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !CONFIG_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("line {}: unknown key {k:?}", i + 1)));
            }
            if pairs.iter().any(|p| p.1 == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", i + 1)));
            }
            pairs.push((i + 1, k, v));
        }
        let get = |k: &str| pairs.iter().find(|p| p.1 == k);
        let task: Task = get("task")
            .ok_or_else(|| Error::Config("missing required key \"task\"".into()))?
            .2
            .parse()?;
        let mut cfg = Self::defaults(task);
        let (mut train_manifest, mut test_manifest) = (None, None);
        let (mut kinds, mut per_train, mut per_test) = match &cfg.data {
            DataSource::Synthetic {
                kinds,
                train_per_class,
                test_per_class,
            } => (kinds.clone(), *train_per_class, *test_per_class),
            DataSource::Manifest { .. } => unreachable!(),
        };
        let mut preset = None;
        let mut overrides = Vec::new();
        for (line, k, v) in &pairs {
            let err = |e: String| Error::Config(format!("line {line}: {k}: {e}"));
            match k.as_str() {
                "task" => {}
                "seed" => cfg.seed = num(v).map_err(err)?,
                "epochs" => cfg.epochs = num(v).map_err(err)?,
                "max_steps" => cfg.max_steps = num(v).map_err(err)?,
                "batch_size" => cfg.batch_size = num(v).map_err(err)?,
                "lr" => cfg.optimizer.lr = num(v).map_err(err)?,
                "beta1" => cfg.optimizer.beta1 = num(v).map_err(err)?,
                "beta2" => cfg.optimizer.beta2 = num(v).map_err(err)?,
                "eps" => cfg.optimizer.eps = num(v).map_err(err)?,
                "points" => cfg.points = num(v).map_err(err)?,
                "latent" => cfg.latent = num(v).map_err(err)?,
                "expansions" => cfg.expansions = list(v).map_err(err)?,
                "part_counts" => cfg.part_counts = list(v).map_err(err)?,
                "dropout" => cfg.dropout = num(v).map_err(err)?,
                "block_dropout" => cfg.block_dropout = num(v).map_err(err)?,
                "train_manifest" => train_manifest = Some(PathBuf::from(v)),
                "test_manifest" => test_manifest = Some(PathBuf::from(v)),
                "train_fraction" => cfg.train_fraction = num(v).map_err(err)?,
                "synthetic" => {
                    kinds = v
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "synthetic_train" => per_train = num(v).map_err(err)?,
                "synthetic_test" => per_test = num(v).map_err(err)?,
                "augment" => preset = Some(v.as_str()),
                "triplet" => cfg.triplet = boolean(v).map_err(err)?,
                "triplet_weight" => cfg.triplet_weight = num(v).map_err(err)?,
                "margin" => cfg.margin = num(v).map_err(err)?,
                _ => overrides.push((*line, k.as_str(), v.as_str())),
            }
        }
        if let Some(p) = preset {
            cfg.augmentation = match p {
                "classification" => AugmentationConfig::classification(),
                "segmentation" => AugmentationConfig::segmentation(),
                "none" => AugmentationConfig::identity(),
                _ => {
                    return Err(Error::Config(format!(
                        "augment must be classification, segmentation or none, got {p:?}"
                    )))
                }
            };
        }
        for (line, k, v) in overrides {
            let err = |e: String| Error::Config(format!("line {line}: {k}: {e}"));
            let a = &mut cfg.augmentation;
            match k {
                "aug_noise" => a.noise_std = num(v).map_err(err)?,
                "aug_rotate_vertical" => a.rotate_vertical = range(v).map_err(err)?,
                "aug_rotate_lateral" => a.rotate_lateral = range(v).map_err(err)?,
                "aug_scale" => a.scale = range(v).map_err(err)?,
                "aug_translate" => a.translate = range(v).map_err(err)?,
                _ => unreachable!("key list and match arms agree"),
            }
        }
        cfg.data = match (train_manifest, test_manifest) {
            (Some(train), test) => DataSource::Manifest { train, test },
            (None, Some(_)) => return Err(Error::Config("test_manifest requires train_manifest".into())),
            (None, None) => DataSource::Synthetic {
                kinds,
                train_per_class: per_train,
                test_per_class: per_test,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.points == 0 || self.latent == 0 {
            return bad("points and latent must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.block_dropout) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if !(self.margin >= 0.0 && self.triplet_weight >= 0.0) {
            return bad("margin and triplet_weight must be non-negative");
        }
        if !self.expansions.is_empty() && self.expansions.len() != 3 {
            return bad("expansions takes three factors");
        }
        if let DataSource::Synthetic {
            kinds, train_per_class, ..
        } = &self.data
        {
            if kinds.is_empty() || *train_per_class == 0 {
                return bad("synthetic data needs at least one kind and one sample per class");
            }
        }
        self.optimizer.validate()?;
        self.augmentation.validate()
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let r = |(a, b): (f64, f64)| format!("{a},{b}");
        let l = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("task", self.task.name().into());
        put("seed", self.seed.to_string());
        put("epochs", self.epochs.to_string());
        put("max_steps", self.max_steps.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.optimizer.lr.to_string());
        put("beta1", self.optimizer.beta1.to_string());
        put("beta2", self.optimizer.beta2.to_string());
        put("eps", self.optimizer.eps.to_string());
        put("points", self.points.to_string());
        put("latent", self.latent.to_string());
        if !self.expansions.is_empty() {
            put("expansions", l(&self.expansions));
        }
        if !self.part_counts.is_empty() {
            put("part_counts", l(&self.part_counts));
        }
        put("dropout", self.dropout.to_string());
        put("block_dropout", self.block_dropout.to_string());
        match &self.data {
            DataSource::Manifest { train, test } => {
                put("train_manifest", train.display().to_string());
                if let Some(t) = test {
                    put("test_manifest", t.display().to_string());
                }
            }
            DataSource::Synthetic {
                kinds,
                train_per_class,
                test_per_class,
            } => {
                put("synthetic", kinds.join(","));
                put("synthetic_train", train_per_class.to_string());
                put("synthetic_test", test_per_class.to_string());
            }
        }
        put("train_fraction", self.train_fraction.to_string());
        let a = &self.augmentation;
        put("aug_noise", a.noise_std.to_string());
        put("aug_rotate_vertical", r(a.rotate_vertical));
        put("aug_rotate_lateral", r(a.rotate_lateral));
        put("aug_scale", r(a.scale));
        put("aug_translate", r(a.translate));
        put("triplet", self.triplet.to_string());
        put("triplet_weight", self.triplet_weight.to_string());
        put("margin", self.margin.to_string());
        s
    }
}

fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn list(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|x| num(x.trim())).collect()
}

fn range(v: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected low,high but got {v:?}")),
    }
}

fn boolean(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}
