use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use normjet::evaluation::unoriented_angle_error;
use normjet::io::read_points;
use normjet::jet::{evaluate_jet, ls_fit, normal_from_beta, square_grid, JetModel};
use normjet::neural::forward_pipeline;
use normjet::{extract_patch, Estimator, NeighborIndex, Vec3};

use crate::config::Settings;
use crate::estimate::{build_estimator, MethodFlags};
use crate::output::Outputs;
use crate::FitDebugArgs;

const DEFAULT_GRID: usize = 21;

/// Everything is reported in the frame the jet was fitted in.
struct Fit {
    /// `(cloud index, weight, position before update)` in selection order.
    selected: Vec<(usize, f64, Vec3)>,
    updated: Vec<Vec3>,
    model: JetModel,
    normal_world: Vec3,
}

pub fn run(args: &FitDebugArgs, s: &Settings) -> Result<()> {
    let input: PathBuf = s.require("input", args.input.clone())?;
    let point: usize = s.require("point", args.point)?;
    let out_dir: PathBuf = s.require("out", args.out.clone())?;
    let grid = s.get("grid", args.grid, DEFAULT_GRID)?;
    if grid < 2 {
        bail!("--grid must be at least 2");
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
    if point >= cloud.len() {
        bail!("point {point} outside a cloud of {} points", cloud.len());
    }
    let index = NeighborIndex::build(&cloud)?;
    let patch = extract_patch(&cloud, &index, point, estimator.patch_size())?;

    let fit = match &estimator {
        Estimator::Pca { .. } => {
            bail!("fit-debug needs a fitted surface: use --method jet or learned")
        }
        Estimator::Jet { order, .. } => {
            let (model, _) = ls_fit(&patch.local_points, *order)?;
            Fit {
                selected: patch
                    .neighbor_indices
                    .iter()
                    .zip(&patch.local_points)
                    .map(|(&i, p)| (i, 1.0, *p))
                    .collect(),
                updated: patch.local_points.clone(),
                normal_world: patch.direction_to_world(&normal_from_beta(&model)),
                model,
            }
        }
        Estimator::Learned {
            params, forward, ..
        } => {
            let out = forward_pipeline(params, &patch, forward)?;
            Fit {
                selected: out
                    .selection
                    .indices
                    .iter()
                    .zip(&out.selection.weights)
                    .map(|(&j, &w)| {
                        (
                            patch.neighbor_indices[j],
                            w,
                            out.rotation * patch.local_points[j],
                        )
                    })
                    .collect(),
                updated: out.updated_points.clone(),
                model: out.model.clone(),
                normal_world: out.normal_world,
            }
        }
    };

    let mut selected = String::from("rank,index,weight,x,y,z\n");
    for (rank, (i, w, p)) in fit.selected.iter().enumerate() {
        let _ = writeln!(selected, "{rank},{i},{w},{},{},{}", p.x, p.y, p.z);
    }
    let mut updated = String::from("rank,index,x,y,z\n");
    for (rank, ((i, _, _), p)) in fit.selected.iter().zip(&fit.updated).enumerate() {
        let _ = writeln!(updated, "{rank},{i},{},{},{}", p.x, p.y, p.z);
    }
    let extent = fit
        .updated
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    let xy = square_grid(extent, grid);
    let mut surface = String::from("x,y,z\n");
    for (q, z) in xy.iter().zip(evaluate_jet(&fit.model, &xy)) {
        let _ = writeln!(surface, "{},{},{z}", q.x, q.y);
    }
    let n = fit.normal_world;
    let mut summary = format!(
        "point,{point}\nselected,{}\nnormal,{} {} {}\n",
        fit.selected.len(),
        n.x,
        n.y,
        n.z
    );
    if let Some(gt) = cloud.gt_normals() {
        let _ = writeln!(
            summary,
            "error_deg,{}",
            unoriented_angle_error(&n, &gt[point])?
        );
    }

    let mut out = Outputs::default();
    out.add(out_dir.join("selected.csv"), selected);
    out.add(out_dir.join("updated.csv"), updated);
    out.add(out_dir.join("surface.csv"), surface);
    out.add(out_dir.join("summary.csv"), summary.clone());
    out.write()?;
    print!("{summary}");
    Ok(())
}
