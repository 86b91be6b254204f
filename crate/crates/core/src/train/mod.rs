//! Optimization loops, run configuration and checkpoints for the three
//! tasks.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{
    decode_records, encode_records, metrics_csv, parse_metrics_csv, Checkpoint, MetricRow, Record, CSV_HEADER, MAGIC,
    VERSION,
};
pub use config::{DataSource, RunConfig, Task, CONFIG_KEYS};
pub use optim::{Adam, AdamConfig};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::data::{augment, load_dataset, make_splits, synthetic_dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::losses::{chamfer_points, points_tensor, recon_loss, triplet_loss, LevelWeights};
use crate::metrics::{accuracy, argmax, iou_suite, retrieval_map};
use crate::models::{
    argmax_rows, default_expansions, Autoencoder, AutoencoderSpec, Classifier, ClassifierSpec, Segmenter,
    SegmenterSpec, SHAPENET_PART_COUNTS,
};
use crate::rng::SeededRng;
use crate::tensor::{Mode, ParamStore, Session, Tensor};

/// Retrieval depth used for the per-epoch mAP.
pub const RETRIEVAL_TOP_K: usize = 10;
/// Samples per forward pass during evaluation.
const EVAL_BATCH: usize = 16;

pub enum Model {
    Classifier(Classifier),
    Segmenter(Segmenter),
    Autoencoder(Autoencoder),
}

impl Model {
    pub fn store(&self) -> &ParamStore {
        match self {
            Model::Classifier(m) => m.store(),
            Model::Segmenter(m) => m.store(),
            Model::Autoencoder(m) => m.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::Classifier(m) => m.store_mut(),
            Model::Segmenter(m) => m.store_mut(),
            Model::Autoencoder(m) => m.store_mut(),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Classifier(_) => Task::Classification,
            Model::Segmenter(_) => Task::Segmentation,
            Model::Autoencoder(_) => Task::Autoencoder,
        }
    }

    /// Builds the network a configuration describes; `classes` is the
    /// number of class labels in the training data.
    pub fn build(cfg: &RunConfig, classes: usize) -> Result<Self> {
        let seed = SeededRng::derive(cfg.seed, &[0x30DE1]).uniform().to_bits();
        Ok(match cfg.task {
            Task::Classification => {
                let mut spec = ClassifierSpec::standard(classes);
                spec.dropout = cfg.dropout;
                spec.block_dropout = cfg.block_dropout;
                Model::Classifier(Classifier::new(spec, seed)?)
            }
            Task::Segmentation => {
                let mut spec = SegmenterSpec::with_parts(part_counts(cfg));
                spec.block_dropout = cfg.block_dropout;
                Model::Segmenter(Segmenter::new(spec, seed)?)
            }
            Task::Autoencoder => {
                let exp = if cfg.expansions.is_empty() {
                    default_expansions(cfg.points)?
                } else {
                    [cfg.expansions[0], cfg.expansions[1], cfg.expansions[2]]
                };
                let mut spec = AutoencoderSpec::standard(cfg.latent, exp);
                spec.block_dropout = cfg.block_dropout;
                if spec.output_points() != cfg.points {
                    return Err(Error::Config(format!(
                        "expansions {exp:?} decode {} points but points = {}",
                        spec.output_points(),
                        cfg.points
                    )));
                }
                Model::Autoencoder(Autoencoder::new(spec, seed)?)
            }
        })
    }

    /// Restores parameters and running statistics by name.
    pub fn load_state(&mut self, params: &[(String, Tensor)], buffers: &[(String, Tensor)]) -> Result<()> {
        let store = self.store_mut();
        if params.len() != store.num_params() || buffers.len() != store.buffers().len() {
            return Err(Error::Format("checkpoint does not match the configured model".into()));
        }
        for (n, t) in params {
            store.set_param(n, t.clone())?;
        }
        for (n, t) in buffers {
            store.set_buffer(n, t.clone())?;
        }
        Ok(())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(RunConfig, Self)> {
        let cfg = RunConfig::parse(&ckpt.config)?;
        let classes = match cfg.task {
            Task::Classification => ckpt
                .params
                .iter()
                .find(|p| p.0 == "head.bias")
                .map(|p| p.1.len())
                .ok_or_else(|| Error::Format("classifier checkpoint lacks head.bias".into()))?,
            _ => 2,
        };
        let mut model = Self::build(&cfg, classes)?;
        model.load_state(&ckpt.params, &ckpt.buffers)?;
        Ok((cfg, model))
    }
}

fn part_counts(cfg: &RunConfig) -> Vec<usize> {
    if !cfg.part_counts.is_empty() {
        cfg.part_counts.clone()
    } else if matches!(cfg.data, DataSource::Synthetic { .. }) {
        vec![2]
    } else {
        SHAPENET_PART_COUNTS.to_vec()
    }
}

/// Loads or generates the train and test samples a configuration names.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let (train, test) = match &cfg.data {
        DataSource::Synthetic {
            kinds,
            train_per_class,
            test_per_class,
        } => {
            let train = synthetic_dataset(kinds, *train_per_class, cfg.points, cfg.seed)?;
            let test = if *test_per_class == 0 {
                Vec::new()
            } else {
                synthetic_dataset(kinds, *test_per_class, cfg.points, cfg.seed ^ 0x7E57_7E57)?
            };
            (train, test)
        }
        DataSource::Manifest { train, test } => {
            let all = load_dataset(train, cfg.points, cfg.seed)?;
            match test {
                Some(t) => (all, load_dataset(t, cfg.points, cfg.seed ^ 0x7E57_7E57)?),
                None => make_splits(&all, cfg.train_fraction, cfg.seed)?,
            }
        }
    };
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.task == Task::Segmentation {
        let counts = part_counts(cfg);
        for s in train.iter().chain(&test) {
            if s.parts.is_none() || s.category.is_none() {
                return Err(Error::Data(format!("{} lacks part labels or a category", s.id)));
            }
            s.validate(Some(&counts))?;
        }
    }
    if cfg.task == Task::Classification || cfg.triplet {
        if let Some(s) = train.iter().chain(&test).find(|s| s.label.is_none()) {
            return Err(Error::Data(format!("{} has no class label", s.id)));
        }
    }
    Ok((train, test))
}

fn num_classes(samples: &[Sample]) -> usize {
    samples.iter().filter_map(|s| s.label).max().map_or(0, |m| m + 1)
}

fn flat_points(samples: &[&Sample]) -> Vec<Point> {
    samples.iter().flat_map(|s| s.cloud.points().iter().copied()).collect()
}

/// Mutable training state; a [`Checkpoint`] captures all of it.
pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub adam: Adam,
    pub rng: SeededRng,
    pub epoch: usize,
    pub steps: u64,
    /// Best validation score so far, larger is better.
    pub best: f64,
    pub history: Vec<MetricRow>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    by_class: BTreeMap<usize, Vec<usize>>,
}

/// Accumulates sample-weighted batch values into epoch means.
#[derive(Default)]
struct Running {
    sums: Vec<(String, f64)>,
    count: f64,
}

impl Running {
    fn add(&mut self, name: &str, value: f64, weight: f64) {
        match self.sums.iter_mut().find(|s| s.0 == name) {
            Some(s) => s.1 += value * weight,
            None => self.sums.push((name.to_string(), value * weight)),
        }
    }
    fn rows(&self, epoch: usize, split: &str) -> Vec<MetricRow> {
        self.sums
            .iter()
            .map(|(n, v)| MetricRow {
                epoch,
                split: split.into(),
                metric: n.clone(),
                value: v / self.count,
            })
            .collect()
    }
}

impl Trainer {
    /// Loads data and builds the model; every data or configuration error
    /// surfaces here, before any optimizer step.
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = load_data(&config)?;
        let model = Model::build(&config, num_classes(&train).max(2))?;
        let adam = Adam::new(config.optimizer, model.store());
        let rng = SeededRng::derive(config.seed, &[0x7A1]);
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in train.iter().enumerate() {
            if let Some(l) = s.label {
                by_class.entry(l).or_default().push(i);
            }
        }
        if config.triplet && by_class.len() < 2 {
            return Err(Error::Data("triplet mining needs at least two classes".into()));
        }
        let trainer = Self {
            config,
            model,
            adam,
            rng,
            epoch: 0,
            steps: 0,
            best: f64::NEG_INFINITY,
            history: Vec::new(),
            train,
            test,
            by_class,
        };
        trainer.check_geometry()?;
        Ok(trainer)
    }

    /// Plans one sample so undersized inputs fail early.
    fn check_geometry(&self) -> Result<()> {
        let cloud = &self.train[0].cloud;
        match &self.model {
            Model::Classifier(m) => m.plan(cloud).map(|_| ()),
            Model::Segmenter(m) => m.plan(cloud).map(|_| ()),
            Model::Autoencoder(m) => m.plan(cloud).map(|_| ()),
        }
    }

    pub fn resume(ckpt: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&ckpt.config)?;
        let mut t = Self::new(config)?;
        t.model.load_state(&ckpt.params, &ckpt.buffers)?;
        t.adam = ckpt
            .adam
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no optimizer state to resume".into()))?;
        if t.adam.m.len() != t.model.store().num_params() {
            return Err(Error::Format("optimizer state does not match the model".into()));
        }
        t.rng = SeededRng::from_state(ckpt.rng);
        t.epoch = ckpt.epoch;
        t.steps = ckpt.steps;
        t.best = ckpt.best;
        t.history = ckpt.history.clone();
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let store = self.model.store();
        Checkpoint {
            config: self.config.echo(),
            params: store
                .params()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            buffers: store
                .buffers()
                .iter()
                .map(|p| (p.name.clone(), p.tensor.clone()))
                .collect(),
            adam: Some(self.adam.clone()),
            rng: self.rng.state(),
            epoch: self.epoch,
            steps: self.steps,
            best: self.best,
            history: self.history.clone(),
        }
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs || (self.config.max_steps > 0 && self.steps >= self.config.max_steps as u64)
    }

    /// One pass over the training set followed by evaluation on the test
    /// set. Returns this epoch's metric rows and whether the validation
    /// score improved.
    pub fn run_epoch(&mut self) -> Result<(Vec<MetricRow>, bool)> {
        let epoch = self.epoch + 1;
        let mut epoch_rng = self.rng.split();
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        epoch_rng.shuffle(&mut order);
        let mut run = Running::default();
        for chunk in order.chunks(self.config.batch_size) {
            if self.config.max_steps > 0 && self.steps >= self.config.max_steps as u64 {
                break;
            }
            let mut batch_rng = epoch_rng.split();
            self.step(chunk, &mut batch_rng, &mut run)?;
            self.steps += 1;
            run.count += chunk.len() as f64;
        }
        let mut rows = run.rows(epoch, "train");
        let (test_rows, score) = self.evaluate_test(epoch)?;
        rows.extend(test_rows);
        self.epoch = epoch;
        let improved = score > self.best;
        if improved {
            self.best = score;
        }
        self.history.extend(rows.iter().cloned());
        Ok((rows, improved))
    }

    fn augmented(&self, idx: &[usize], rng: &mut SeededRng) -> Result<Vec<Sample>> {
        idx.iter()
            .map(|&i| augment(&self.train[i], &self.config.augmentation, rng))
            .collect()
    }

    fn step(&mut self, idx: &[usize], rng: &mut SeededRng, run: &mut Running) -> Result<()> {
        let batch = self.augmented(idx, rng)?;
        let w = batch.len() as f64;
        let session_rng = rng.split();
        let (grads, stats) = match &self.model {
            Model::Classifier(m) => {
                let plans = batch.iter().map(|s| m.plan(&s.cloud)).collect::<Result<Vec<_>>>()?;
                let sizes: Vec<usize> = batch.iter().map(|s| s.cloud.len()).collect();
                let labels: Vec<usize> = batch.iter().map(|s| s.label.expect("checked at load")).collect();
                let mut s = Session::new(m.store(), Mode::Train, session_rng);
                let logits = m.forward(&mut s, &plans, &sizes)?;
                let loss = s.tape.cross_entropy(logits, &labels)?;
                let pred: Vec<usize> = s.value(logits).data().chunks(m.spec.classes).map(argmax).collect();
                run.add("loss", s.value(loss).item(), w);
                run.add("accuracy", accuracy(&pred, &labels)?, w);
                (s.param_grads(loss)?, s.into_batch_stats())
            }
            Model::Segmenter(m) => {
                let plans = batch.iter().map(|s| m.plan(&s.cloud)).collect::<Result<Vec<_>>>()?;
                let cats: Vec<usize> = batch.iter().map(|s| s.category.expect("checked at load")).collect();
                let labels: Vec<usize> = batch
                    .iter()
                    .flat_map(|s| s.parts.clone().expect("checked at load"))
                    .collect();
                let mut s = Session::new(m.store(), Mode::Train, session_rng);
                let logits = m.forward(&mut s, &plans, &cats)?;
                let logits = m.mask_logits(&mut s, logits, &plans, &cats)?;
                let loss = s.tape.cross_entropy(logits, &labels)?;
                let pred = argmax_rows(s.value(logits).data(), m.spec.max_parts(), m.spec.max_parts());
                run.add("loss", s.value(loss).item(), w);
                run.add("accuracy", accuracy(&pred, &labels)?, w);
                (s.param_grads(loss)?, s.into_batch_stats())
            }
            Model::Autoencoder(m) => {
                let mut encode_set: Vec<&Sample> = batch.iter().collect();
                let extra;
                if self.config.triplet {
                    let (pos, neg) = self.mine_triplets(idx, rng);
                    let mut more = self.augmented(&pos, rng)?;
                    more.extend(self.augmented(&neg, rng)?);
                    extra = more;
                    encode_set.extend(extra.iter());
                }
                let plans = encode_set
                    .iter()
                    .map(|s| m.plan(&s.cloud))
                    .collect::<Result<Vec<_>>>()?;
                let sizes: Vec<usize> = encode_set.iter().map(|s| s.cloud.len()).collect();
                let b = batch.len();
                let mut s = Session::new(m.store(), Mode::Train, session_rng);
                let z_all = m.encode(&mut s, &plans, &sizes)?;
                let z = s.tape.slice_rows(z_all, 0, b)?;
                let pyramid = m.decode(&mut s, z)?;
                let input = s.constant(points_tensor(&flat_points(&batch.iter().collect::<Vec<_>>()))?);
                let weights = LevelWeights::from_sizes(&pyramid.sizes)?;
                let recon = recon_loss(&mut s.tape, input, self.config.points, &pyramid, &weights)?;
                run.add("recon", recon.total, w);
                for (name, v) in &recon.breakdown {
                    run.add(name, *v, w);
                }
                let loss = if self.config.triplet {
                    let zp = s.tape.slice_rows(z_all, b, 2 * b)?;
                    let zn = s.tape.slice_rows(z_all, 2 * b, 3 * b)?;
                    let t = triplet_loss(&mut s.tape, z, zp, zn, self.config.margin)?;
                    run.add("triplet", s.value(t).item(), w);
                    let t = s.tape.scale(t, self.config.triplet_weight);
                    s.tape.add(recon.value, t)?
                } else {
                    recon.value
                };
                run.add("loss", s.value(loss).item(), w);
                (s.param_grads(loss)?, s.into_batch_stats())
            }
        };
        let store = self.model.store_mut();
        self.adam.update(store, &grads)?;
        store.apply_batch_stats(&stats);
        Ok(())
    }

    /// A random same-class positive and a random other-class negative per
    /// anchor.
    fn mine_triplets(&self, idx: &[usize], rng: &mut SeededRng) -> (Vec<usize>, Vec<usize>) {
        let classes: Vec<usize> = self.by_class.keys().copied().collect();
        let mut pos = Vec::with_capacity(idx.len());
        let mut neg = Vec::with_capacity(idx.len());
        for &i in idx {
            let l = self.train[i].label.expect("checked at load");
            let same = &self.by_class[&l];
            let p = if same.len() > 1 {
                let mut j = same[rng.below(same.len() - 1)];
                if j == i {
                    j = *same.last().expect("nonempty class");
                }
                j
            } else {
                i
            };
            pos.push(p);
            let mut c = classes[rng.below(classes.len() - 1)];
            if c == l {
                c = *classes.last().expect("two classes");
            }
            let others = &self.by_class[&c];
            neg.push(others[rng.below(others.len())]);
        }
        (pos, neg)
    }

    /// Test-split metrics and the validation score (larger is better).
    fn evaluate_test(&self, epoch: usize) -> Result<(Vec<MetricRow>, f64)> {
        if self.test.is_empty() {
            return Ok((Vec::new(), -(epoch as f64)));
        }
        let row = |metric: &str, value: f64| MetricRow {
            epoch,
            split: "test".into(),
            metric: metric.into(),
            value,
        };
        Ok(match &self.model {
            Model::Classifier(m) => {
                let preds = classify_all(m, &self.test)?;
                let truth: Vec<usize> = self.test.iter().map(|s| s.label.expect("checked at load")).collect();
                let acc = accuracy(&preds, &truth)?;
                (vec![row("accuracy", acc)], acc)
            }
            Model::Segmenter(m) => {
                let preds = segment_all(m, &self.test)?;
                let shapes: Vec<(usize, Vec<usize>, Vec<usize>)> = self
                    .test
                    .iter()
                    .zip(preds)
                    .map(|(s, p)| (s.category.expect("checked"), p, s.parts.clone().expect("checked")))
                    .collect();
                let r = iou_suite(&shapes, &m.spec.part_counts)?;
                let flat_pred: Vec<usize> = shapes.iter().flat_map(|s| s.1.clone()).collect();
                let flat_truth: Vec<usize> = shapes.iter().flat_map(|s| s.2.clone()).collect();
                (
                    vec![
                        row("accuracy", accuracy(&flat_pred, &flat_truth)?),
                        row("instance_miou", r.instance_miou),
                        row("category_miou", r.category_miou),
                    ],
                    r.instance_miou,
                )
            }
            Model::Autoencoder(m) => {
                let ev = evaluate_autoencoder(m, &self.test, self.config.seed)?;
                let mut rows = vec![row("recon", ev.recon)];
                rows.extend(ev.levels.iter().map(|(n, v)| row(n, *v)));
                rows.push(row("chamfer", ev.chamfer));
                if self.train.iter().chain(&self.test).all(|s| s.label.is_some()) {
                    let gallery = encode_all(m, &self.train)?;
                    let queries = encode_all(m, &self.test)?;
                    let gl: Vec<usize> = self.train.iter().map(|s| s.label.expect("checked")).collect();
                    let ql: Vec<usize> = self.test.iter().map(|s| s.label.expect("checked")).collect();
                    rows.push(row(
                        "map",
                        retrieval_map(&queries, &ql, &gallery, &gl, RETRIEVAL_TOP_K)?,
                    ));
                }
                (rows, -ev.recon)
            }
        })
    }

    /// Trains until the configured epoch or step budget is spent. With an
    /// output directory, writes `metrics.csv`, `last.ckpt` and `best.ckpt`
    /// after every epoch.
    pub fn train(&mut self, out_dir: Option<&Path>) -> Result<()> {
        if let Some(d) = out_dir {
            std::fs::create_dir_all(d)?;
        }
        while !self.finished() {
            let (_, improved) = self.run_epoch()?;
            if let Some(d) = out_dir {
                let ckpt = self.checkpoint();
                ckpt.save(&d.join("last.ckpt"))?;
                if improved {
                    ckpt.save(&d.join("best.ckpt"))?;
                }
                std::fs::write(d.join("metrics.csv"), metrics_csv(&self.history))?;
            }
        }
        Ok(())
    }

    pub fn output_paths(out_dir: &Path) -> [PathBuf; 3] {
        ["metrics.csv", "last.ckpt", "best.ckpt"].map(|f| out_dir.join(f))
    }
}

/// Evaluation-mode class predictions, batched.
pub fn classify_all(m: &Classifier, samples: &[Sample]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let plans = chunk.iter().map(|s| m.plan(&s.cloud)).collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = chunk.iter().map(|s| s.cloud.len()).collect();
        let mut s = Session::new(m.store(), Mode::Eval, SeededRng::new(0));
        let y = m.forward(&mut s, &plans, &sizes)?;
        out.extend(s.value(y).data().chunks(m.spec.classes).map(argmax));
    }
    Ok(out)
}

/// Evaluation-mode part predictions per sample.
pub fn segment_all(m: &Segmenter, samples: &[Sample]) -> Result<Vec<Vec<usize>>> {
    samples
        .iter()
        .map(|s| {
            let cat = s
                .category
                .ok_or_else(|| Error::Data(format!("{} has no category", s.id)))?;
            m.predict(&s.cloud, cat)
        })
        .collect()
}

/// Evaluation-mode latent codes, batched.
pub fn encode_all(m: &Autoencoder, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let plans = chunk.iter().map(|s| m.plan(&s.cloud)).collect::<Result<Vec<_>>>()?;
        let sizes: Vec<usize> = chunk.iter().map(|s| s.cloud.len()).collect();
        let mut s = Session::new(m.store(), Mode::Eval, SeededRng::new(0));
        let z = m.encode(&mut s, &plans, &sizes)?;
        out.extend(s.value(z).data().chunks(m.spec.latent).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Mean reconstruction figures over a sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoencoderEval {
    /// Weighted multi-level reconstruction loss.
    pub recon: f64,
    /// Its weighted per-level terms.
    pub levels: Vec<(String, f64)>,
    /// Chamfer distance of the finest level alone.
    pub chamfer: f64,
}

/// Evaluation-mode reconstruction of every sample; decoder noise for sample
/// `i` comes from `derive(seed, [i])`.
pub fn evaluate_autoencoder(m: &Autoencoder, samples: &[Sample], seed: u64) -> Result<AutoencoderEval> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    let weights = LevelWeights::from_sizes(&m.spec.pyramid_sizes())?;
    let mut recon = 0.0;
    let mut chamfer = 0.0;
    let mut levels: Vec<(String, f64)> = Vec::new();
    for (i, sample) in samples.iter().enumerate() {
        let plan = m.plan(&sample.cloud)?;
        let mut s = Session::new(m.store(), Mode::Eval, SeededRng::derive(seed, &[i as u64]));
        let z = m.encode(&mut s, &[plan], &[sample.cloud.len()])?;
        let pyramid = m.decode(&mut s, z)?;
        let input = s.constant(points_tensor(sample.cloud.points())?);
        let r = recon_loss(&mut s.tape, input, sample.cloud.len(), &pyramid, &weights)?;
        recon += r.total;
        for (k, (n, v)) in r.breakdown.into_iter().enumerate() {
            match levels.get_mut(k) {
                Some(e) => e.1 += v,
                None => levels.push((n, v)),
            }
        }
        let finest: Vec<Point> = s
            .value(*pyramid.points.last().expect("nonempty pyramid"))
            .data()
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        chamfer += chamfer_points(sample.cloud.points(), &finest)?;
    }
    let n = samples.len() as f64;
    Ok(AutoencoderEval {
        recon: recon / n,
        levels: levels.into_iter().map(|(k, v)| (k, v / n)).collect(),
        chamfer: chamfer / n,
    })
}
