use anyhow::{bail, Result};
use normjet::io::{normals_path, triples_text};
use normjet::synth::{
    augment, desk_corpus, gen_shape, AugmentSpec, DensityMode, ShapeKind, ShapeSpec,
};
use normjet::PointCloud;

use crate::config::{List, Settings};
use crate::output::Outputs;
use crate::SynthArgs;

const DEFAULT_COUNT: usize = 10_000;

fn add_cloud(out: &mut Outputs, xyz: &std::path::Path, cloud: &PointCloud) {
    out.add(xyz, triples_text(cloud.points()));
    if let Some(n) = cloud.gt_normals() {
        out.add(normals_path(xyz), triples_text(n));
    }
}

pub fn run(args: &SynthArgs, s: &Settings) -> Result<()> {
    let out_path = s.require("out", args.out.clone())?;
    let count = s.get("count", args.count, DEFAULT_COUNT)?;
    let seed = s.get("seed", args.seed, 0)?;
    let mut out = Outputs::default();

    if s.switch("corpus", args.corpus)? {
        if s.opt::<String>("shape", args.shape.clone())?.is_some() {
            bail!("--shape cannot be combined with --corpus");
        }
        let (train, test) = desk_corpus(count, seed)?;
        for (list, clouds) in [("trainset.txt", &train), ("testset.txt", &test)] {
            let mut names = String::new();
            for cloud in clouds.iter() {
                add_cloud(
                    &mut out,
                    &out_path.join(format!("{}.xyz", cloud.name())),
                    cloud,
                );
                names.push_str(cloud.name());
                names.push('\n');
            }
            out.add(out_path.join(list), names);
        }
        out.write()?;
        println!(
            "wrote {} training and {} test clouds to {}",
            train.len(),
            test.len(),
            out_path.display()
        );
        return Ok(());
    }

    let shape: String = s.require("shape", args.shape.clone())?;
    let kind = match shape.as_str() {
        "quadric" | "heightfield" => ShapeKind::HeightField {
            coefficients: s
                .get(
                    "coeffs",
                    args.coeffs.clone(),
                    List(vec![0.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
                )?
                .0,
        },
        "sphere" => ShapeKind::Sphere {
            radius: s.get("radius", args.radius, 1.0)?,
        },
        "dihedral" => ShapeKind::Dihedral {
            angle_deg: s.get("angle", args.angle, 90.0)?,
        },
        other => bail!("unknown shape '{other}' (quadric, sphere, dihedral)"),
    };
    let augment_spec = AugmentSpec {
        noise_sigma_rel: s.get("sigma", args.sigma, 0.0)?,
        density_mode: s.get("density", args.density, DensityMode::None)?,
        seed: seed.wrapping_add(1),
    };
    augment_spec.validate()?;
    let cloud = augment(&gen_shape(&ShapeSpec { kind, count, seed })?, &augment_spec)?;
    add_cloud(&mut out, &out_path, &cloud);
    out.write()?;
    println!("wrote {} points to {}", cloud.len(), out_path.display());
    Ok(())
}
