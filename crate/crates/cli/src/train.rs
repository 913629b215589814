use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use normjet::io::{read_points, read_shape_list};
use normjet::training::checkpoint::Checkpoint;
use normjet::training::corpus::random_samples;
use normjet::training::{trace_csv, train_from};
use normjet::{Architecture, ModelParams, TrainConfig};

use crate::config::{List, Settings};
use crate::output::Outputs;
use crate::TrainArgs;

pub const DEFAULT_PATCHES_PER_SHAPE: usize = 500;

/// Resolves a listed shape to its `.xyz` file.
pub fn shape_path(data: &Path, name: &str) -> PathBuf {
    if name.ends_with(".xyz") {
        data.join(name)
    } else {
        data.join(format!("{name}.xyz"))
    }
}

pub fn list_dir(list: &Path) -> PathBuf {
    list.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn config_from(args: &TrainArgs, s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let widths = |key: &str,
                  flag: &Option<List<usize>>,
                  default: Vec<usize>|
     -> Result<Vec<usize>> { Ok(s.get(key, flag.clone(), List(default))?.0) };
    let config = TrainConfig {
        batch_size: s.get("batch-size", args.batch_size, d.batch_size)?,
        learning_rate: s.get("lr", args.lr, d.learning_rate)?,
        epochs: s.get("epochs", args.epochs, d.epochs)?,
        alpha1: s.get("alpha1", args.alpha1, d.alpha1)?,
        alpha2: s.get("alpha2", args.alpha2, d.alpha2)?,
        k: s.get("k", args.k, d.k)?,
        patch_size: s.get("patch-size", args.patch_size, d.patch_size)?,
        order: s.get("order", args.order, d.order)?,
        m: s.get("m", args.m, d.m)?,
        force_center: s.switch("force-center", args.force_center)?,
        seed: s.get("seed", args.seed, d.seed)?,
        arch: Architecture {
            qst: widths("qst-widths", &args.qst_widths, d.arch.qst)?,
            features: widths("feature-widths", &args.feature_widths, d.arch.features)?,
            head: widths("head-widths", &args.head_widths, d.arch.head)?,
            update: widths("update-widths", &args.update_widths, d.arch.update)?,
        },
        init: s.get("init", args.init, d.init)?,
        frozen: {
            let mut f = s.get("freeze", args.freeze.clone(), List(Vec::new()))?.0;
            f.sort();
            f.dedup();
            f
        },
    };
    config.validate()?;
    Ok(config)
}

pub fn run(args: &TrainArgs, s: &Settings) -> Result<()> {
    let config = config_from(args, s)?;
    let list: PathBuf = s.require("corpus", args.corpus.clone())?;
    let out_path: PathBuf = s.require("out", args.out.clone())?;
    let trace_path = s.get(
        "trace",
        args.trace.clone(),
        out_path.with_extension("trace.csv"),
    )?;
    let data = s.get("data", args.data.clone(), list_dir(&list))?;
    let per_shape = s.get(
        "patches-per-shape",
        args.patches_per_shape,
        DEFAULT_PATCHES_PER_SHAPE,
    )?;
    let threads: Option<usize> = s.opt("threads", args.threads)?;
    if per_shape == 0 {
        bail!("--patches-per-shape must be at least 1");
    }
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }

    let names = read_shape_list(&list)?;
    if names.is_empty() {
        bail!("{} lists no shapes", list.display());
    }
    let mut corpus = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let cloud = read_points(&shape_path(&data, name))?;
        let seed = config.seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64);
        let samples = random_samples(&cloud, config.patch_size, per_shape, seed)
            .with_context(|| format!("sampling patches from {name}"))?;
        corpus.extend(samples);
    }
    eprintln!(
        "training on {} patches from {} shapes",
        corpus.len(),
        names.len()
    );

    let params = ModelParams::init(&config.arch, config.seed, config.init)?;
    let run = || {
        train_from(&config, params, &corpus, |r| {
            eprintln!(
                "epoch {}/{} loss {:.6} center {:.6} skipped {}",
                r.epoch, config.epochs, r.mean_loss, r.mean_center, r.skipped
            );
        })
    };
    let outcome = match threads {
        None => run()?,
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(run)?,
    };
    let mut out = Outputs::default();
    out.add(&out_path, Checkpoint::to_text(&outcome.checkpoint));
    out.add(&trace_path, trace_csv(&outcome.trace));
    out.write()?;
    println!("wrote {} and {}", out_path.display(), trace_path.display());
    Ok(())
}
