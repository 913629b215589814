use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use normjet::training::grad_check_patches;
use normjet::{Architecture, TrainConfig};

use crate::config::Settings;
use crate::output::Outputs;
use crate::GradcheckArgs;

pub fn run(args: &GradcheckArgs, s: &Settings) -> Result<()> {
    let patches = s.get("patches", args.patches, 20)?;
    let tolerance = s.get("tolerance", args.tolerance, 1e-4)?;
    let seed = s.get("seed", args.seed, 0)?;
    let out_path: Option<PathBuf> = s.opt("out", args.out.clone())?;
    if patches == 0 {
        bail!("--patches must be at least 1");
    }
    if !(tolerance > 0.0) {
        bail!("--tolerance must be positive");
    }
    let config = TrainConfig {
        patch_size: s.get("patch-size", args.patch_size, 32)?,
        k: s.get("k", args.k, 16)?,
        order: s.get("order", args.order, 2)?,
        m: s.get("m", args.m, 4)?,
        alpha1: s.get("alpha1", args.alpha1, 0.5)?,
        alpha2: s.get("alpha2", args.alpha2, 0.1)?,
        arch: Architecture::tiny(),
        ..TrainConfig::default()
    };
    let reports = grad_check_patches(&config, patches, seed, tolerance)?;

    let mut csv = String::from("patch,array,checked,max_abs_diff,relative_error\n");
    for (p, r) in reports.iter().enumerate() {
        for a in &r.arrays {
            let _ = writeln!(
                csv,
                "{p},{},{},{},{}",
                a.name, a.checked, a.max_abs_diff, a.relative_error
            );
        }
    }
    if let Some(p) = out_path {
        let mut out = Outputs::default();
        out.add(p, csv);
        out.write()?;
    }
    let worst = reports
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!(
        "{} patches, worst relative error {worst:.3e} (tolerance {tolerance:.1e})",
        reports.len()
    );
    if failed > 0 {
        bail!("{failed} of {} patches exceed the tolerance", reports.len());
    }
    Ok(())
}
