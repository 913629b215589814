use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use normjet::io::{read_indices, read_points, triples_text};
use normjet::training::load_checkpoint;
use normjet::{Estimator, ForwardConfig, Method, NeighborIndex};

use crate::config::Settings;
use crate::output::Outputs;
use crate::EstimateArgs;

pub const DEFAULT_PATCH_SIZE: usize = 256;
pub const DEFAULT_ORDER: usize = 3;

/// Method-related flags shared by `estimate` and `fit-debug`.
pub struct MethodFlags {
    pub method: Option<Method>,
    pub checkpoint: Option<PathBuf>,
    pub patch_size: Option<usize>,
    pub order: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub force_center: bool,
}

/// Builds the estimator; a learned model takes its settings from the
/// checkpoint unless they are overridden.
pub fn build_estimator(s: &Settings, f: MethodFlags) -> Result<Estimator> {
    let method = s.get("method", f.method, Method::Jet)?;
    let checkpoint: Option<PathBuf> = s.opt("checkpoint", f.checkpoint)?;
    let k: Option<usize> = s.opt("k", f.k)?;
    let m: Option<usize> = s.opt("m", f.m)?;
    let force_center = s.switch("force-center", f.force_center)?;
    if method != Method::Learned
        && (checkpoint.is_some() || k.is_some() || m.is_some() || force_center)
    {
        bail!("--checkpoint, --k, --m and --force-center only apply to --method learned");
    }
    match method {
        Method::Pca => {
            if s.opt::<usize>("order", f.order)?.is_some() {
                bail!("--order does not apply to --method pca");
            }
            Ok(Estimator::Pca {
                patch_size: s.get("patch-size", f.patch_size, DEFAULT_PATCH_SIZE)?,
            })
        }
        Method::Jet => Ok(Estimator::Jet {
            patch_size: s.get("patch-size", f.patch_size, DEFAULT_PATCH_SIZE)?,
            order: s.get("order", f.order, DEFAULT_ORDER)?,
        }),
        Method::Learned => {
            let path = checkpoint.context("--method learned needs --checkpoint")?;
            let ck = load_checkpoint(&path)?;
            let c = &ck.config;
            Ok(Estimator::Learned {
                patch_size: s.get("patch-size", f.patch_size, c.patch_size)?,
                forward: ForwardConfig {
                    k: k.unwrap_or(c.k),
                    order: s.get("order", f.order, c.order)?,
                    m: m.unwrap_or(c.m),
                    force_center: force_center || c.force_center,
                },
                params: Box::new(ck.params),
            })
        }
    }
}

pub fn run(args: &EstimateArgs, s: &Settings) -> Result<()> {
    let input: PathBuf = s.require("input", args.input.clone())?;
    let out_path: PathBuf = s.require("out", args.out.clone())?;
    let indices: Option<PathBuf> = s.opt("indices", args.indices.clone())?;
    let threads: Option<usize> = s.opt("threads", args.threads)?;
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let estimator = build_estimator(
        s,
        MethodFlags {
            method: args.method,
            checkpoint: args.checkpoint.clone(),
            patch_size: args.patch_size,
            order: args.order,
            k: args.k,
            m: args.m,
            force_center: args.force_center,
        },
    )?;
    let cloud = read_points(&input)?;
    estimator.validate(cloud.len())?;
    let index = NeighborIndex::build(&cloud)?;
    let targets: Vec<usize> = match &indices {
        Some(p) => read_indices(p)?,
        None => (0..cloud.len()).collect(),
    };
    let normals = estimator.estimate_indices(&cloud, &index, &targets, threads)?;
    let mut out = Outputs::default();
    out.add(&out_path, triples_text(&normals));
    out.write()?;
    println!("wrote {} normals to {}", normals.len(), out_path.display());
    Ok(())
}
