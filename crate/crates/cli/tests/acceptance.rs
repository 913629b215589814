//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting, so `cargo test -- --nocapture` doubles as a report.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use normjet::evaluation::{
    aggregate_categories, pgp_alpha, rmse, unoriented_angle_error, EvalReport,
};
use normjet::io::{indices_text, read_xyz, write_cloud, write_indices};
use normjet::jet::{jet_term_count, ls_fit, normal_from_beta, wls_fit};
use normjet::neural::forward_local;
use normjet::neural::select::{top_k_select, WeightVector, WEIGHT_MAX, WEIGHT_MIN};
use normjet::synth::{add_gaussian_noise, gen_shape, ShapeKind, ShapeSpec, BENCHMARK_NOISE_LEVELS};
use normjet::training::corpus::samples_at;
use normjet::training::{grad_check_patches, train_from, Subnet};
use normjet::{
    bounding_box_diagonal, extract_patch, Architecture, Estimator, ForwardConfig, InitMode,
    ModelParams, NeighborIndex, PointCloud, TrainConfig, TrainSample, Vec3,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, pass: bool, detail: String) {
    println!(
        "criterion {criterion}: {} {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    unoriented_angle_error(a, b).unwrap()
}

fn rms(e: &[f64]) -> f64 {
    rmse(e).unwrap()
}

/// Analytic unit normal at the origin of `z = sum beta_ij x^i y^j`.
fn analytic_normal(beta: &[f64]) -> Vec3 {
    if beta.len() < 3 {
        return Vec3::z();
    }
    Vec3::new(-beta[1], -beta[2], 1.0).normalize()
}

#[test]
fn criterion_1_jet_exact_recovery() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_beta, mut worst_normal) = (0.0_f64, 0.0_f64);
    for order in 1..=4 {
        let terms = jet_term_count(order);
        for _ in 0..20 {
            let beta: Vec<f64> = (0..terms).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Plain Horner-free evaluation of the monomials, degree by degree.
            let height = |x: f64, y: f64| {
                let mut z = 0.0;
                let mut t = 0;
                for d in 0..=order {
                    for j in 0..=d {
                        z += beta[t] * x.powi((d - j) as i32) * y.powi(j as i32);
                        t += 1;
                    }
                }
                z
            };
            let points: Vec<Vec3> = (0..2 * terms)
                .map(|_| {
                    let (x, y) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
                    Vec3::new(x, y, height(x, y))
                })
                .collect();
            let (model, _) = wls_fit(&points, &vec![1.0; points.len()], order).unwrap();
            for (a, b) in model.beta().iter().zip(&beta) {
                worst_beta = worst_beta.max((a - b).abs());
            }
            worst_normal =
                worst_normal.max(angle(&normal_from_beta(&model), &analytic_normal(&beta)));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        worst_beta < 1e-8 && worst_normal < 1e-6 && secs < 5.0,
        format!(
            "max |beta err| {worst_beta:.2e}, max normal err {worst_normal:.2e} deg, {secs:.2}s"
        ),
    );
}

#[test]
fn criterion_2_smooth_baselines() {
    let start = Instant::now();
    let cloud = gen_shape(&ShapeSpec {
        kind: ShapeKind::Sphere { radius: 1.0 },
        count: 10_000,
        seed: 2,
    })
    .unwrap();
    // On the unit sphere the true normal is the position itself.
    let errors = |est: &Estimator| -> f64 {
        let normals = est.estimate_cloud(&cloud, None).unwrap();
        let e: Vec<f64> = normals
            .iter()
            .zip(cloud.points())
            .map(|(n, p)| angle(n, p))
            .collect();
        rms(&e)
    };
    let jet = errors(&Estimator::Jet {
        patch_size: 256,
        order: 2,
    });
    let pca = errors(&Estimator::Pca { patch_size: 256 });
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        jet < 1.0 && pca < 2.0 && secs < 30.0,
        format!("sphere rmse jet {jet:.4} deg, pca {pca:.4} deg, {secs:.1}s"),
    );
}

#[test]
fn criterion_3_two_plane_oracle() {
    let base = gen_shape(&ShapeSpec {
        kind: ShapeKind::Dihedral { angle_deg: 90.0 },
        count: 40_000,
        seed: 3,
    })
    .unwrap();
    let mut points = base.points().to_vec();
    let mut normals = base.gt_normals().unwrap().to_vec();
    let center = points.len();
    points.push(Vec3::new(0.05, 0.0, 0.0));
    normals.push(Vec3::z());
    let cloud = PointCloud::with_normals("dihedral", points, normals).unwrap();
    let index = NeighborIndex::build(&cloud).unwrap();
    let patch = extract_patch(&cloud, &index, center, 256).unwrap();
    let gt = Vec3::z();

    let (plain, _) = ls_fit(&patch.local_points, 3).unwrap();
    let plain_err = angle(&patch.direction_to_world(&normal_from_beta(&plain)), &gt);

    // The first face is exactly z = 0; the second face (x = 0) only touches it
    // along the crease.
    let on_plane: Vec<bool> = patch
        .neighbor_indices
        .iter()
        .map(|&i| cloud.points()[i].z == 0.0)
        .collect();
    let weights = WeightVector {
        values: on_plane
            .iter()
            .map(|&p| if p { WEIGHT_MAX } else { WEIGHT_MIN })
            .collect(),
        patch_id: 0,
    };
    let k = on_plane.iter().filter(|&&p| p).count();
    let sel = top_k_select(&weights, k, false).unwrap();
    let chosen: Vec<Vec3> = sel.indices.iter().map(|&j| patch.local_points[j]).collect();
    let all_on_plane = sel.indices.iter().all(|&j| on_plane[j]);
    let (oracle, _) = wls_fit(&chosen, &vec![1.0; k], 3).unwrap();
    let oracle_err = angle(&patch.direction_to_world(&normal_from_beta(&oracle)), &gt);
    report(
        3,
        plain_err > 5.0 && oracle_err < 0.1 && all_on_plane && k < 256,
        format!("unweighted jet {plain_err:.3} deg, oracle top-{k} fit {oracle_err:.2e} deg"),
    );
}

#[test]
fn criterion_4_gradient_check() {
    let config = TrainConfig {
        patch_size: 32,
        k: 16,
        order: 2,
        m: 4,
        alpha1: 0.5,
        alpha2: 0.1,
        arch: Architecture::tiny(),
        ..TrainConfig::default()
    };
    let reports = grad_check_patches(&config, 20, 4, 1e-4).unwrap();
    let worst = reports
        .iter()
        .map(|r| r.max_relative_error)
        .fold(0.0, f64::max);
    let arrays = reports.first().map_or(0, |r| r.arrays.len());
    report(
        4,
        reports.len() == 20 && reports.iter().all(|r| r.passed) && worst <= 1e-4,
        format!(
            "{} patches x {arrays} arrays, worst relative error {worst:.2e}",
            reports.len()
        ),
    );
}

#[test]
fn criterion_5_pipeline_degeneration() {
    let arch = Architecture::default();
    let params = ModelParams::init(&arch, 5, InitMode::Baseline).unwrap();
    let base = gen_shape(&ShapeSpec {
        kind: ShapeKind::HeightField {
            coefficients: vec![0.0, 0.0, 0.0, 0.8, -0.3, -0.6],
        },
        count: 5000,
        seed: 5,
    })
    .unwrap();
    let cloud = add_gaussian_noise(&base, 0.006, 6).unwrap();
    let mut picks: Vec<usize> = (0..cloud.len()).collect();
    picks.shuffle(&mut ChaCha8Rng::seed_from_u64(7));
    picks.truncate(100);

    let jet = Estimator::Jet {
        patch_size: 256,
        order: 3,
    };
    let learned = Estimator::Learned {
        patch_size: 256,
        forward: ForwardConfig {
            k: 256,
            order: 3,
            m: 8,
            force_center: false,
        },
        params: Box::new(params),
    };
    let index = NeighborIndex::build(&cloud).unwrap();
    let a = jet.estimate_indices(&cloud, &index, &picks, None).unwrap();
    let b = learned
        .estimate_indices(&cloud, &index, &picks, None)
        .unwrap();
    let lib_worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| angle(x, y))
        .fold(0.0, f64::max);

    // Same check through the binary: an untrained zero-initialised checkpoint.
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cloud(&d.join("q.xyz"), &cloud).unwrap();
    fs::write(d.join("list.txt"), "q\n").unwrap();
    write_indices(&d.join("picks.idx"), &picks).unwrap();
    run(&[
        "train",
        "--corpus",
        p(d, "list.txt"),
        "--out",
        p(d, "zero.ckpt"),
        "--init",
        "zero",
        "--epochs",
        "0",
        "--k",
        "256",
        "--patch-size",
        "256",
        "--patches-per-shape",
        "1",
    ]);
    run(&[
        "estimate",
        "--input",
        p(d, "q.xyz"),
        "--indices",
        p(d, "picks.idx"),
        "--out",
        p(d, "jet.normals"),
    ]);
    run(&[
        "estimate",
        "--input",
        p(d, "q.xyz"),
        "--indices",
        p(d, "picks.idx"),
        "--method",
        "learned",
        "--checkpoint",
        p(d, "zero.ckpt"),
        "--out",
        p(d, "learned.normals"),
    ]);
    let cj = read_xyz(&d.join("jet.normals")).unwrap();
    let cl = read_xyz(&d.join("learned.normals")).unwrap();
    let cli_worst = cj
        .iter()
        .zip(&cl)
        .map(|(x, y)| angle(x, y))
        .fold(0.0, f64::max);
    report(
        5,
        lib_worst < 1e-6 && cli_worst < 1e-6 && cj.len() == 100 && cl.len() == 100,
        format!("max deviation from jet over 100 patches: library {lib_worst:.2e} deg, cli {cli_worst:.2e} deg"),
    );
}

/// Patches centred on the first face strictly between `0.02` and `near` from
/// the crease of a dihedral with a random angle.
fn dihedral_samples(
    rng: &mut ChaCha8Rng,
    seed: u64,
    count: usize,
    sigma: f64,
    r: usize,
    near: f64,
) -> Vec<TrainSample> {
    let angle_deg: f64 = rng.random_range(60.0..150.0);
    let clean = gen_shape(&ShapeSpec {
        kind: ShapeKind::Dihedral { angle_deg },
        count: 4000,
        seed,
    })
    .unwrap();
    let cloud = add_gaussian_noise(&clean, sigma, seed + 1).unwrap();
    let index = NeighborIndex::build(&cloud).unwrap();
    let t = angle_deg.to_radians();
    let mut centers: Vec<usize> = (0..clean.len())
        .filter(|&i| {
            let p = clean.points()[i];
            let u = if p.z.abs() < 1e-12 {
                p.x
            } else {
                p.x * t.cos() + p.z * t.sin()
            };
            u > 0.02 && u < near && p.y.abs() < 0.6
        })
        .collect();
    centers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 7));
    centers.truncate(count);
    samples_at(&cloud, &index, r, &centers).unwrap()
}

fn quadric_samples(
    rng: &mut ChaCha8Rng,
    seed: u64,
    count: usize,
    sigma: f64,
    r: usize,
) -> Vec<TrainSample> {
    let coefficients: Vec<f64> = (0..6)
        .map(|i| {
            if i < 3 {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let clean = gen_shape(&ShapeSpec {
        kind: ShapeKind::HeightField { coefficients },
        count: 4000,
        seed,
    })
    .unwrap();
    let cloud = add_gaussian_noise(&clean, sigma, seed + 1).unwrap();
    let index = NeighborIndex::build(&cloud).unwrap();
    let centers: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let p = cloud.points()[i];
            p.x.abs() < 0.7 && p.y.abs() < 0.7
        })
        .take(count)
        .collect();
    samples_at(&cloud, &index, r, &centers).unwrap()
}

#[test]
fn criterion_6_desk_scale_training() {
    let start = Instant::now();
    let r = 128;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut train = Vec::new();
    for s in 0..20u64 {
        let sigma = if s % 2 == 0 { 0.0 } else { 0.01 };
        if s < 10 {
            train.extend(quadric_samples(&mut rng, 100 + s, 100, sigma, r));
        } else {
            train.extend(dihedral_samples(&mut rng, 100 + s, 100, sigma, r, 0.3));
        }
    }
    let mut test = Vec::new();
    for s in 0..10u64 {
        test.extend(dihedral_samples(&mut rng, 1000 + s, 50, 0.0, r, 0.12));
    }
    assert_eq!((train.len(), test.len()), (2000, 500));

    let jet: Vec<f64> = test
        .iter()
        .map(|s| {
            angle(
                &normal_from_beta(&ls_fit(&s.local_points, 3).unwrap().0),
                &s.gt_normal,
            )
        })
        .collect();
    let jet_rmse = rms(&jet);

    let config = TrainConfig {
        patch_size: r,
        k: 32,
        order: 3,
        m: 0,
        alpha1: 3e-4,
        learning_rate: 1e-3,
        epochs: 30,
        batch_size: 48,
        arch: Architecture {
            qst: vec![16, 32],
            features: vec![16, 16, 32, 64],
            head: vec![32, 16],
            update: vec![8, 8],
        },
        frozen: vec![Subnet::Qst, Subnet::Update],
        init: InitMode::Standard,
        seed: 0,
        ..TrainConfig::default()
    };
    let params = ModelParams::init(&config.arch, config.seed, config.init).unwrap();
    let outcome = train_from(&config, params, &train, |_| {}).unwrap();
    let trained = &outcome.checkpoint.params;
    // A fit that cannot be solved counts as the worst possible error.
    let learned: Vec<f64> = test
        .iter()
        .map(
            |s| match forward_local(trained, &s.local_points, &config.forward()) {
                Ok(o) => angle(&o.normal_local, &s.gt_normal),
                Err(_) => 90.0,
            },
        )
        .collect();
    let learned_rmse = rms(&learned);
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        learned_rmse <= 0.8 * jet_rmse && secs < 900.0,
        format!(
            "held-out rmse trained {learned_rmse:.3} deg vs unweighted jet {jet_rmse:.3} deg (ratio {:.3}), {secs:.0}s",
            learned_rmse / jet_rmse
        ),
    );
}

#[test]
fn criterion_7_metrics() {
    let r = rmse(&[3.0, 4.0]).unwrap();
    let p5 = pgp_alpha(&[3.0, 7.0, 12.0], 5.0).unwrap();
    let p10 = pgp_alpha(&[3.0, 7.0, 12.0], 10.0).unwrap();
    let n = Vec3::new(0.3, -0.5, 0.8).normalize();
    let flip = unoriented_angle_error(&n, &-n).unwrap();

    let printed = [
        ("no_noise", 6.51),
        ("noise_low", 9.21),
        ("noise_med", 16.72),
        ("noise_high", 23.12),
        ("density_gradient", 7.31),
        ("density_stripes", 7.92),
    ];
    let reports: Vec<EvalReport> = printed
        .iter()
        .map(|(cat, v)| {
            let mut rep =
                EvalReport::from_errors(&format!("shape_{cat}"), vec![0], vec![*v]).unwrap();
            rep.category = cat.to_string();
            rep
        })
        .collect();
    let table = aggregate_categories(&reports).unwrap();
    let avg = table.average.rmse;
    report(
        7,
        (r - 3.5355).abs() <= 1e-3
            && (p5 - 33.33).abs() <= 0.01
            && (p10 - 66.67).abs() <= 0.01
            && flip == 0.0
            && format!("{avg:.2}") == "11.80",
        format!(
            "rmse {r:.4}, pgp5 {p5:.2}, pgp10 {p10:.2}, flipped {flip}, category average {avg:.4}"
        ),
    );
}

#[test]
fn criterion_8_noise_levels() {
    let base = gen_shape(&ShapeSpec {
        kind: ShapeKind::Sphere { radius: 1.0 },
        count: 100_000,
        seed: 8,
    })
    .unwrap();
    let diag = bounding_box_diagonal(base.points());
    let mut worst = 0.0_f64;
    for (i, &sigma) in BENCHMARK_NOISE_LEVELS.iter().enumerate() {
        let noisy = add_gaussian_noise(&base, sigma, 80 + i as u64).unwrap();
        let target = sigma * diag;
        for axis in 0..3 {
            let d: Vec<f64> = noisy
                .points()
                .iter()
                .zip(base.points())
                .map(|(a, b)| a[axis] - b[axis])
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            worst = worst.max((var.sqrt() / target - 1.0).abs());
        }
    }
    report(
        8,
        worst < 0.1,
        format!(
            "worst per-axis std deviation from sigma*diag: {:.2}%",
            worst * 100.0
        ),
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_normjet"))
}

fn run(args: &[&str]) {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "normjet {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(dir: &Path, name: &str) -> &'static str {
    Box::leak(
        dir.join(name)
            .into_os_string()
            .into_string()
            .unwrap()
            .into_boxed_str(),
    )
}

/// Runs the whole command chain into `dir` and returns every file written.
fn pipeline(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    run(&[
        "synth",
        "--shape",
        "dihedral",
        "--angle",
        "110",
        "--count",
        "3000",
        "--sigma",
        "0.006",
        "--density",
        "gradient",
        "--seed",
        "9",
        "--out",
        p(dir, "d.xyz"),
    ]);
    run(&[
        "synth",
        "--shape",
        "quadric",
        "--count",
        "3000",
        "--seed",
        "10",
        "--out",
        p(dir, "q.xyz"),
    ]);
    fs::write(dir.join("train.txt"), "d\nq\n").unwrap();
    run(&[
        "train",
        "--corpus",
        p(dir, "train.txt"),
        "--out",
        p(dir, "m.ckpt"),
        "--patch-size",
        "64",
        "--k",
        "24",
        "--order",
        "2",
        "--m",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "16",
        "--patches-per-shape",
        "24",
        "--qst-widths",
        "8,8",
        "--feature-widths",
        "8,8,16",
        "--head-widths",
        "8",
        "--update-widths",
        "4",
        "--seed",
        "11",
        "--threads",
        "1",
    ]);
    run(&[
        "estimate",
        "--input",
        p(dir, "d.xyz"),
        "--method",
        "learned",
        "--checkpoint",
        p(dir, "m.ckpt"),
        "--threads",
        "1",
        "--out",
        p(dir, "d.pred"),
    ]);
    run(&[
        "eval",
        "--input",
        p(dir, "d.xyz"),
        "--pred",
        p(dir, "d.pred"),
        "--subset-size",
        "500",
        "--seed",
        "12",
        "--points-out",
        p(dir, "points.csv"),
        "--out",
        p(dir, "eval.csv"),
    ]);
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let bytes = fs::read(&path).unwrap();
            (PathBuf::from(path.file_name().unwrap()), bytes)
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_9_determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path());
    let second = pipeline(b.path());
    let names: Vec<String> = first.iter().map(|(n, _)| n.display().to_string()).collect();
    let identical = first == second;

    let d = a.path();
    let mut agree = true;
    for threads in ["2", "4"] {
        let out = format!("d.pred{threads}");
        run(&[
            "estimate",
            "--input",
            p(d, "d.xyz"),
            "--method",
            "learned",
            "--checkpoint",
            p(d, "m.ckpt"),
            "--threads",
            threads,
            "--out",
            p(d, &out),
        ]);
        agree &= fs::read(d.join(&out)).unwrap() == fs::read(d.join("d.pred")).unwrap();
    }
    report(
        9,
        identical && agree && names.len() >= 9,
        format!("{} files byte-identical across runs: {identical}; estimate at 1/2/4 threads identical: {agree}", names.len()),
    );
}

/// Writes PCPNet-layout files: `<shape>.xyz`, `<shape>.normals`, `<shape>.pidx`
/// and a `testset.txt` naming every shape.
fn pcpnet_layout(dir: &Path) -> Vec<String> {
    let base = gen_shape(&ShapeSpec {
        kind: ShapeKind::Dihedral { angle_deg: 100.0 },
        count: 4000,
        seed: 13,
    })
    .unwrap();
    let mut names = Vec::new();
    for (suffix, sigma) in [("", 0.0), ("_noise_white_1.00e-2", 0.01)] {
        let name = format!("crease100k{suffix}");
        let cloud = add_gaussian_noise(&base, sigma, 14).unwrap();
        write_cloud(&dir.join(format!("{name}.xyz")), &cloud).unwrap();
        fs::write(
            dir.join(format!("{name}.pidx")),
            indices_text(&(0..4000).step_by(8).collect::<Vec<_>>()),
        )
        .unwrap();
        names.push(name);
    }
    fs::write(dir.join("testset.txt"), names.join("\n") + "\n").unwrap();
    names
}

#[test]
fn criterion_10_pcpnet_pass_through() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, names) = match std::env::var_os("NORMJET_PCPNET_DIR") {
        Some(d) => {
            let d = PathBuf::from(d);
            let names = fs::read_to_string(d.join("testset.txt"))
                .unwrap()
                .lines()
                .map(str::to_owned)
                .collect();
            (d, names)
        }
        None => {
            let names = pcpnet_layout(tmp.path());
            (tmp.path().to_path_buf(), names)
        }
    };
    let preds = tmp.path().join("pred");
    fs::create_dir_all(&preds).unwrap();
    for name in &names {
        let xyz = data.join(format!("{name}.xyz"));
        let pred = preds.join(format!("{name}.normals"));
        run(&[
            "estimate",
            "--input",
            xyz.to_str().unwrap(),
            "--out",
            pred.to_str().unwrap(),
        ]);
    }
    let table = tmp.path().join("table.csv");
    run(&[
        "eval",
        "--list",
        data.join("testset.txt").to_str().unwrap(),
        "--pred-dir",
        preds.to_str().unwrap(),
        "--out",
        table.to_str().unwrap(),
    ]);
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let shaped = lines.len() >= 3
        && lines[0].starts_with("category,")
        && lines.last().unwrap().starts_with("average,")
        && lines
            .iter()
            .all(|l| l.split(',').count() == lines[0].split(',').count());
    report(
        10,
        shaped,
        format!(
            "{} shapes -> {} table rows, header '{}'",
            names.len(),
            lines.len(),
            lines.first().unwrap_or(&"")
        ),
    );
}
