use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use normjet::evaluation::{
    aggregate_categories, evaluate_cloud, heatmap_text, HeatmapFormat, DEFAULT_SUBSET,
};
use normjet::io::{read_indices, read_points, read_shape_list, read_xyz};
use normjet::{EvalReport, PointCloud, Subset, Vec3};

use crate::config::Settings;
use crate::output::Outputs;
use crate::train::{list_dir, shape_path};
use crate::EvalArgs;

/// An explicit index file, else a sibling `.pidx` or `.idx`, else a seeded
/// sample.
fn subset_for(xyz: &Path, explicit: Option<&Path>, size: usize, seed: u64) -> Result<Subset> {
    if let Some(p) = explicit {
        return Ok(Subset::Indices(read_indices(p)?));
    }
    for ext in ["pidx", "idx"] {
        let p = xyz.with_extension(ext);
        if p.exists() {
            return Ok(Subset::Indices(read_indices(&p)?));
        }
    }
    Ok(Subset::Seeded { size, seed })
}

/// Scores `pred`, which holds either one normal per cloud point or one per
/// evaluation index in subset order.
fn score(cloud: &PointCloud, pred: &[Vec3], subset: &Subset) -> Result<EvalReport> {
    let n = subset.resolve(cloud.len())?.len();
    if pred.len() != cloud.len() && pred.len() != n {
        bail!(
            "{} estimated normals for '{}', expected {} (every point) or {n} (the subset)",
            pred.len(),
            cloud.name(),
            cloud.len()
        );
    }
    let full = pred.len() == cloud.len();
    Ok(evaluate_cloud(
        cloud,
        |idx| {
            Ok(if full {
                idx.iter().map(|&i| pred[i]).collect()
            } else {
                pred.to_vec()
            })
        },
        subset,
    )?)
}

fn load_gt_cloud(path: &Path) -> Result<PointCloud> {
    let cloud = read_points(path)?;
    if cloud.gt_normals().is_none() {
        bail!("{} has no ground-truth .normals file", path.display());
    }
    Ok(cloud)
}

fn summary_line(r: &EvalReport) -> String {
    let pgp: Vec<String> = r
        .pgp
        .iter()
        .map(|(a, p)| format!("pgp{a} {p:.2}"))
        .collect();
    format!(
        "{} ({}): rmse {:.4} deg, {}",
        r.name,
        r.category,
        r.rmse,
        pgp.join(", ")
    )
}

pub fn run(args: &EvalArgs, s: &Settings) -> Result<()> {
    let out_path: PathBuf = s.require("out", args.out.clone())?;
    let size = s.get("subset-size", args.subset_size, DEFAULT_SUBSET)?;
    let seed = s.get("seed", args.seed, 0)?;
    let subset_file: Option<PathBuf> = s.opt("subset", args.subset.clone())?;
    let points_out: Option<PathBuf> = s.opt("points-out", args.points_out.clone())?;
    let heatmap: Option<PathBuf> = s.opt("heatmap", args.heatmap.clone())?;
    let heatmap_format: Option<HeatmapFormat> = s.opt("heatmap-format", args.heatmap_format)?;
    if size == 0 {
        bail!("--subset-size must be at least 1");
    }
    let mut out = Outputs::default();

    if let Some(list) = s.opt::<PathBuf>("list", args.list.clone())? {
        let input: Option<PathBuf> = s.opt("input", args.input.clone())?;
        let pred: Option<PathBuf> = s.opt("pred", args.pred.clone())?;
        if input.is_some()
            || pred.is_some()
            || subset_file.is_some()
            || points_out.is_some()
            || heatmap.is_some()
        {
            bail!("--list evaluates whole test sets; --input, --pred, --subset, --points-out and --heatmap apply to one cloud");
        }
        let pred_dir: PathBuf = s.require("pred-dir", args.pred_dir.clone())?;
        let data = s.get("data", args.data.clone(), list_dir(&list))?;
        let names = read_shape_list(&list)?;
        if names.is_empty() {
            bail!("{} lists no shapes", list.display());
        }
        let mut reports = Vec::with_capacity(names.len());
        for name in &names {
            let xyz = shape_path(&data, name);
            let cloud = load_gt_cloud(&xyz)?;
            let stem = name.trim_end_matches(".xyz");
            let pred_path = pred_dir.join(format!("{stem}.normals"));
            let pred = read_xyz(&pred_path).with_context(|| format!("estimates for {stem}"))?;
            let report = score(&cloud, &pred, &subset_for(&xyz, None, size, seed)?)?;
            println!("{}", summary_line(&report));
            reports.push(report);
        }
        let table = aggregate_categories(&reports)?;
        out.add(&out_path, table.to_csv());
        out.write()?;
        println!(
            "average rmse {:.4} deg over {} categories",
            table.average.rmse,
            table.rows.len()
        );
        return Ok(());
    }

    if s.opt::<PathBuf>("pred-dir", args.pred_dir.clone())?
        .is_some()
        || s.opt::<PathBuf>("data", args.data.clone())?.is_some()
    {
        bail!("--pred-dir and --data need --list");
    }
    let input: PathBuf = s.require("input", args.input.clone())?;
    let pred_path: PathBuf = s.require("pred", args.pred.clone())?;
    let cloud = load_gt_cloud(&input)?;
    let pred = read_xyz(&pred_path)?;
    let report = score(
        &cloud,
        &pred,
        &subset_for(&input, subset_file.as_deref(), size, seed)?,
    )?;
    out.add(&out_path, report.summary_csv());
    if let Some(p) = points_out {
        out.add(p, report.points_csv());
    }
    if let Some(p) = heatmap {
        let format = match heatmap_format {
            Some(f) => f,
            None if p.extension().is_some_and(|e| e == "ply") => HeatmapFormat::Ply,
            None => HeatmapFormat::Csv,
        };
        let pts: Vec<Vec3> = report
            .eval_indices
            .iter()
            .map(|&i| cloud.points()[i])
            .collect();
        out.add(p, heatmap_text(&pts, &report.per_point_errors, format)?);
    }
    out.write()?;
    println!("{}", summary_line(&report));
    Ok(())
}
