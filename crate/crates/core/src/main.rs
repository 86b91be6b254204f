use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sacnet::analysis::{complexity, latent_walk, linear_probe, retrieval_csv, svg_projection, ProbeConfig};
use sacnet::data::{load_dataset, load_xyz, write_xyz, Sample};
use sacnet::error::{Error, Result};
use sacnet::metrics::{accuracy, iou_suite, retrieval_map, voting_accuracy};
use sacnet::models::SHAPENET_PART_COUNTS;
use sacnet::train::{
    classify_all, encode_all, evaluate_autoencoder, load_data, Checkpoint, Model, RunConfig, Task, Trainer,
};

#[derive(Parser)]
#[command(
    name = "sacnet",
    version,
    about = "Self-attention point cloud networks: training and analysis"
)]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run configuration file (flat key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every artifact a command writes.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier.
    TrainCls(TrainArgs),
    /// Train a part segmenter.
    TrainSeg(TrainArgs),
    /// Train an autoencoder.
    TrainAe(TrainArgs),
    /// Score a checkpoint on its test split or a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest to evaluate instead of the configured test split.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Augmented copies averaged per classification sample.
        #[arg(long, default_value_t = 10)]
        votes: usize,
    },
    /// Exact cosine retrieval over autoencoder latent codes.
    Retrieve {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Gallery manifest; defaults to the training split.
        #[arg(long)]
        gallery: Option<PathBuf>,
        /// Query manifest; defaults to the test split.
        #[arg(long)]
        query: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Decode linear interpolations between the codes of two clouds.
    LatentWalk {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Start cloud (.xyz).
        #[arg(long)]
        from: PathBuf,
        /// End cloud (.xyz).
        #[arg(long)]
        to: PathBuf,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Parameter and FLOP counts of a configured or saved model.
    Complexity {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Task to profile with default settings when no config or checkpoint is given.
        #[arg(long)]
        task: Option<String>,
        /// Classes for a classifier built without data.
        #[arg(long, default_value_t = 40)]
        classes: usize,
        #[arg(long)]
        points: Option<usize>,
    },
    /// Linear classifier on frozen autoencoder latent codes.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        train_data: Option<PathBuf>,
        #[arg(long)]
        test_data: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainCls(a) => train(&cli, Task::Classification, a),
        Command::TrainSeg(a) => train(&cli, Task::Segmentation, a),
        Command::TrainAe(a) => train(&cli, Task::Autoencoder, a),
        Command::Eval {
            checkpoint,
            data,
            votes,
        } => eval(&cli, checkpoint, data.as_deref(), *votes),
        Command::Retrieve {
            checkpoint,
            gallery,
            query,
            top_k,
        } => retrieve(&cli, checkpoint, gallery.as_deref(), query.as_deref(), *top_k),
        Command::LatentWalk {
            checkpoint,
            from,
            to,
            steps,
        } => walk(&cli, checkpoint, from, to, *steps),
        Command::Complexity {
            checkpoint,
            task,
            classes,
            points,
        } => profile(&cli, checkpoint.as_deref(), task.as_deref(), *classes, *points),
        Command::Probe {
            checkpoint,
            train_data,
            test_data,
            steps,
        } => probe(&cli, checkpoint, train_data.as_deref(), test_data.as_deref(), *steps),
    }
}

fn train(cli: &Cli, task: Task, args: &TrainArgs) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => {
            let t = Trainer::resume(&Checkpoint::load(path)?)?;
            if t.config.task != task {
                return Err(Error::Config(format!(
                    "checkpoint is for task {}",
                    t.config.task.name()
                )));
            }
            t
        }
        None => {
            let path = cli
                .config
                .as_deref()
                .ok_or_else(|| Error::Config("training requires --config <file>".into()))?;
            let mut cfg = RunConfig::load(path)?;
            if cfg.task != task {
                return Err(Error::Config(format!(
                    "config is for task {}, not {}",
                    cfg.task.name(),
                    task.name()
                )));
            }
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            Trainer::new(cfg)?
        }
    };
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("config.txt"), trainer.config.echo())?;
    trainer.train(Some(&cli.out_dir))?;
    println!(
        "trained {} epochs ({} steps); artifacts in {}",
        trainer.epoch,
        trainer.steps,
        cli.out_dir.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(RunConfig, Model)> {
    Model::from_checkpoint(&Checkpoint::load(path)?)
}

fn samples_or(
    path: Option<&Path>,
    cfg: &RunConfig,
    seed: u64,
    fallback: impl FnOnce() -> Result<Vec<Sample>>,
) -> Result<Vec<Sample>> {
    match path {
        Some(p) => load_dataset(p, cfg.points, seed),
        None => fallback(),
    }
}

fn write_report(cli: &Cli, name: &str, rows: &[(String, f64)]) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)?;
    let mut csv = String::from("metric,value\n");
    for (k, v) in rows {
        println!("{k}: {v}");
        csv.push_str(&format!("{k},{v}\n"));
    }
    std::fs::write(cli.out_dir.join(name), csv)?;
    Ok(())
}

fn eval(cli: &Cli, checkpoint: &Path, data: Option<&Path>, votes: usize) -> Result<()> {
    let (cfg, model) = load_model(checkpoint)?;
    let seed = cli.seed.unwrap_or(0);
    let samples = samples_or(data, &cfg, cfg.seed, || Ok(load_data(&cfg)?.1))?;
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let mut rows = Vec::new();
    match &model {
        Model::Classifier(m) => {
            let truth: Vec<usize> = samples
                .iter()
                .map(|s| {
                    s.label
                        .ok_or_else(|| Error::Data(format!("{} has no class label", s.id)))
                })
                .collect::<Result<_>>()?;
            rows.push(("accuracy".into(), accuracy(&classify_all(m, &samples)?, &truth)?));
            let vote_cfg = cfg.augmentation.voting();
            rows.push((
                format!("voting_accuracy_{votes}"),
                voting_accuracy(m, &samples, votes, &vote_cfg, seed)?,
            ));
        }
        Model::Segmenter(m) => {
            let mut shapes = Vec::with_capacity(samples.len());
            for s in &samples {
                let (Some(cat), Some(parts)) = (s.category, s.parts.clone()) else {
                    return Err(Error::Data(format!("{} lacks part labels or a category", s.id)));
                };
                shapes.push((cat, m.predict(&s.cloud, cat)?, parts));
            }
            let r = iou_suite(&shapes, &m.spec.part_counts)?;
            rows.push(("instance_miou".into(), r.instance_miou));
            rows.push(("category_miou".into(), r.category_miou));
            for (c, v) in &r.per_category {
                rows.push((format!("iou_category{c}"), *v));
            }
        }
        Model::Autoencoder(m) => {
            let ev = evaluate_autoencoder(m, &samples, seed)?;
            rows.push(("recon".into(), ev.recon));
            rows.extend(ev.levels);
            rows.push(("chamfer".into(), ev.chamfer));
        }
    }
    write_report(cli, "eval.csv", &rows)
}

fn autoencoder(model: &Model) -> Result<&sacnet::models::Autoencoder> {
    match model {
        Model::Autoencoder(m) => Ok(m),
        other => Err(Error::Config(format!(
            "this command needs an autoencoder checkpoint, not {}",
            other.task().name()
        ))),
    }
}

fn labels(samples: &[Sample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            s.label
                .ok_or_else(|| Error::Data(format!("{} has no class label", s.id)))
        })
        .collect()
}

fn retrieve(cli: &Cli, checkpoint: &Path, gallery: Option<&Path>, query: Option<&Path>, top_k: usize) -> Result<()> {
    let (cfg, model) = load_model(checkpoint)?;
    let m = autoencoder(&model)?;
    let split = if gallery.is_none() || query.is_none() {
        Some(load_data(&cfg)?)
    } else {
        None
    };
    let g = samples_or(gallery, &cfg, cfg.seed, || Ok(split.clone().expect("loaded").0))?;
    let q = samples_or(query, &cfg, cfg.seed ^ 1, || Ok(split.clone().expect("loaded").1))?;
    if g.is_empty() {
        return Err(Error::Data("retrieval gallery is empty".into()));
    }
    let (gz, qz) = (encode_all(m, &g)?, encode_all(m, &q)?);
    let (gl, ql) = (labels(&g)?, labels(&q)?);
    let ids = |s: &[Sample]| s.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(
        cli.out_dir.join("retrieval.csv"),
        retrieval_csv(&ids(&q), &qz, &ql, &ids(&g), &gz, &gl, top_k),
    )?;
    write_report(
        cli,
        "retrieval_map.csv",
        &[("map".into(), retrieval_map(&qz, &ql, &gz, &gl, top_k)?)],
    )
}

fn walk(cli: &Cli, checkpoint: &Path, from: &Path, to: &Path, steps: usize) -> Result<()> {
    let (_, model) = load_model(checkpoint)?;
    let m = autoencoder(&model)?;
    let a = m.latent_code(&load_xyz(from)?)?;
    let b = m.latent_code(&load_xyz(to)?)?;
    let clouds = latent_walk(m, &a, &b, steps, cli.seed.unwrap_or(0))?;
    std::fs::create_dir_all(&cli.out_dir)?;
    for (i, c) in clouds.iter().enumerate() {
        write_xyz(&cli.out_dir.join(format!("walk_{i:03}.xyz")), c, None)?;
        std::fs::write(cli.out_dir.join(format!("walk_{i:03}.svg")), svg_projection(c))?;
    }
    println!("wrote {} steps to {}", clouds.len(), cli.out_dir.display());
    Ok(())
}

fn profile(
    cli: &Cli,
    checkpoint: Option<&Path>,
    task: Option<&str>,
    classes: usize,
    points: Option<usize>,
) -> Result<()> {
    let (cfg, model) = match (checkpoint, &cli.config, task) {
        (Some(c), _, _) => load_model(c)?,
        (None, Some(path), _) => {
            let cfg = RunConfig::load(path)?;
            let m = Model::build(&cfg, classes)?;
            (cfg, m)
        }
        (None, None, Some(t)) => {
            let mut cfg = RunConfig::defaults(t.parse()?);
            cfg.part_counts = SHAPENET_PART_COUNTS.to_vec();
            let m = Model::build(&cfg, classes)?;
            (cfg, m)
        }
        (None, None, None) => {
            return Err(Error::Config(
                "complexity needs --checkpoint, --config or --task".into(),
            ))
        }
    };
    let r = complexity(&model, points.unwrap_or(cfg.points))?;
    print!("{}", r.table());
    std::fs::create_dir_all(&cli.out_dir)?;
    std::fs::write(cli.out_dir.join("complexity.csv"), r.csv())?;
    std::fs::write(cli.out_dir.join("complexity.txt"), r.table())?;
    Ok(())
}

fn probe(cli: &Cli, checkpoint: &Path, train: Option<&Path>, test: Option<&Path>, steps: usize) -> Result<()> {
    let (cfg, model) = load_model(checkpoint)?;
    let m = autoencoder(&model)?;
    let split = if train.is_none() || test.is_none() {
        Some(load_data(&cfg)?)
    } else {
        None
    };
    let tr = samples_or(train, &cfg, cfg.seed, || Ok(split.clone().expect("loaded").0))?;
    let te = samples_or(test, &cfg, cfg.seed ^ 1, || Ok(split.clone().expect("loaded").1))?;
    let r = linear_probe(
        &encode_all(m, &tr)?,
        &labels(&tr)?,
        &encode_all(m, &te)?,
        &labels(&te)?,
        &ProbeConfig {
            steps,
            seed: cli.seed.unwrap_or(0),
            ..ProbeConfig::default()
        },
    )?;
    write_report(
        cli,
        "probe.csv",
        &[
            ("train_accuracy".into(), r.train_accuracy),
            ("test_accuracy".into(), r.test_accuracy),
        ],
    )
}
