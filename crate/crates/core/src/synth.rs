//! Synthetic shapes with analytic normals, plus noise and density
//! augmentations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{bounding_box_diagonal, PointCloud, Vec3};
use crate::jet::{jet_term_count, normal_at, JetModel};

/// Noise levels of the standard benchmark, relative to the bounding-box diagonal.
pub const BENCHMARK_NOISE_LEVELS: [f64; 3] = [0.00125, 0.006, 0.012];
pub const MAX_NOISE_SIGMA: f64 = 0.05;
pub const DENSITY_BANDS: usize = 10;
pub const DENSITY_LOW_KEEP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeKind {
    /// Height field `z = f(x, y)` over `[-1, 1]^2`, coefficients in jet order.
    HeightField {
        coefficients: Vec<f64>,
    },
    Sphere {
        radius: f64,
    },
    /// Two unit-by-two half-planes meeting along the y axis at an interior
    /// angle given in degrees. The first lies in `z = 0, x >= 0`.
    Dihedral {
        angle_deg: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DensityMode {
    None,
    Gradient,
    Stripes,
}

impl DensityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityMode::None => "none",
            DensityMode::Gradient => "gradient",
            DensityMode::Stripes => "stripes",
        }
    }
}

impl std::str::FromStr for DensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DensityMode::None),
            "gradient" => Ok(DensityMode::Gradient),
            "stripes" => Ok(DensityMode::Stripes),
            other => Err(Error::invalid(format!("unknown density mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub noise_sigma_rel: f64,
    pub density_mode: DensityMode,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_NOISE_SIGMA).contains(&self.noise_sigma_rel) {
            return Err(Error::invalid(format!(
                "noise sigma {} outside [0, {MAX_NOISE_SIGMA}]",
                self.noise_sigma_rel
            )));
        }
        Ok(())
    }
}

impl ShapeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count < 16 {
            return Err(Error::invalid(format!(
                "shape needs at least 16 points, got {}",
                self.count
            )));
        }
        match &self.kind {
            ShapeKind::HeightField { coefficients } => {
                let len = coefficients.len();
                if !(0..=8).any(|n| jet_term_count(n) == len) {
                    return Err(Error::invalid(format!(
                        "{len} height-field coefficients is not a jet term count"
                    )));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("height-field coefficients must be finite"));
                }
            }
            ShapeKind::Sphere { radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::invalid(format!(
                        "sphere radius {radius} must be positive"
                    )));
                }
            }
            ShapeKind::Dihedral { angle_deg } => {
                if !(*angle_deg > 0.0 && *angle_deg < 180.0) {
                    return Err(Error::invalid(format!(
                        "dihedral angle {angle_deg} must lie in (0, 180) degrees"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ShapeKind::HeightField { .. } => format!("heightfield_s{}", self.seed),
            ShapeKind::Sphere { radius } => format!("sphere_r{radius}_s{}", self.seed),
            ShapeKind::Dihedral { angle_deg } => format!("dihedral_a{angle_deg}_s{}", self.seed),
        }
    }
}

/// Normals of the two faces of a dihedral, each pointing into the wedge.
pub fn dihedral_face_normals(angle_deg: f64) -> (Vec3, Vec3) {
    let t = angle_deg.to_radians();
    (Vec3::z(), Vec3::new(t.sin(), 0.0, -t.cos()))
}

pub fn gen_shape(spec: &ShapeSpec) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut points = Vec::with_capacity(spec.count);
    let mut normals = Vec::with_capacity(spec.count);
    match &spec.kind {
        ShapeKind::HeightField { coefficients } => {
            let order = (0..=8)
                .find(|&n| jet_term_count(n) == coefficients.len())
                .unwrap();
            let surface = JetModel::new(order, coefficients.clone())?;
            for _ in 0..spec.count {
                let x: f64 = rng.random_range(-1.0..=1.0);
                let y: f64 = rng.random_range(-1.0..=1.0);
                points.push(Vec3::new(x, y, surface.evaluate(x, y)));
                normals.push(if order == 0 {
                    Vec3::z()
                } else {
                    normal_at(&surface, x, y)
                });
            }
        }
        ShapeKind::Sphere { radius } => {
            while points.len() < spec.count {
                let v = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                let norm = v.norm();
                if norm < 1e-12 {
                    continue;
                }
                let n = v / norm;
                points.push(n * *radius);
                normals.push(n);
            }
        }
        ShapeKind::Dihedral { angle_deg } => {
            let (n1, n2) = dihedral_face_normals(*angle_deg);
            let t = angle_deg.to_radians();
            let dir = Vec3::new(t.cos(), 0.0, t.sin());
            let crease = (n1 + n2).normalize();
            for _ in 0..spec.count {
                let u: f64 = rng.random_range(0.0..=1.0);
                let y: f64 = rng.random_range(-1.0..=1.0);
                let first_face = rng.random_bool(0.5);
                if u == 0.0 {
                    points.push(Vec3::new(0.0, y, 0.0));
                    normals.push(crease);
                } else if first_face {
                    points.push(Vec3::new(u, y, 0.0));
                    normals.push(n1);
                } else {
                    points.push(dir * u + Vec3::new(0.0, y, 0.0));
                    normals.push(n2);
                }
            }
        }
    }
    PointCloud::with_normals(spec.name(), points, normals)
}

/// Perturbs every coordinate by i.i.d. `N(0, (sigma_rel * diag)^2)`.
pub fn add_gaussian_noise(cloud: &PointCloud, sigma_rel: f64, seed: u64) -> Result<PointCloud> {
    if !(sigma_rel >= 0.0 && sigma_rel.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma {sigma_rel} must be nonnegative"
        )));
    }
    if sigma_rel == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = sigma_rel * bounding_box_diagonal(cloud.points());
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            p + Vec3::new(
                normal.sample(&mut rng),
                normal.sample(&mut rng),
                normal.sample(&mut rng),
            )
        })
        .collect();
    Ok(cloud.with_points(points))
}

/// Keep probability of a point at relative position `t` in `[0, 1]` along x.
pub fn keep_probability(mode: DensityMode, t: f64) -> f64 {
    match mode {
        DensityMode::None => 1.0,
        DensityMode::Gradient => 1.0 - (1.0 - DENSITY_LOW_KEEP) * t,
        DensityMode::Stripes => {
            let band = ((t * DENSITY_BANDS as f64) as usize).min(DENSITY_BANDS - 1);
            if band.is_multiple_of(2) {
                1.0
            } else {
                DENSITY_LOW_KEEP
            }
        }
    }
}

/// Subsamples a cloud with an x-dependent keep probability.
pub fn apply_density(cloud: &PointCloud, mode: DensityMode, seed: u64) -> Result<PointCloud> {
    if mode == DensityMode::None {
        return Ok(cloud.clone());
    }
    let (lo, hi) = cloud
        .points()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.x), hi.max(p.x))
        });
    let extent = hi - lo;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: Vec<bool> = cloud
        .points()
        .iter()
        .map(|p| {
            let t = if extent > 0.0 {
                (p.x - lo) / extent
            } else {
                0.0
            };
            rng.random::<f64>() < keep_probability(mode, t)
        })
        .collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::invalid("density subsampling removed every point"));
    }
    cloud.retain(&keep)
}

pub fn augment(cloud: &PointCloud, spec: &AugmentSpec) -> Result<PointCloud> {
    spec.validate()?;
    let noisy = add_gaussian_noise(cloud, spec.noise_sigma_rel, spec.seed)?;
    apply_density(
        &noisy,
        spec.density_mode,
        spec.seed.wrapping_add(0x9e37_79b9),
    )
}

/// Shape counts of the desk-scale corpus.
pub const CORPUS_TRAIN_SHAPES: usize = 8;
pub const CORPUS_TEST_SHAPES: usize = 4;

/// Base shapes of the desk-scale corpus, `(train, test)`: random height
/// fields, a sphere and dihedrals of several angles in each split.
pub fn corpus_shapes(count: usize, seed: u64) -> (Vec<ShapeSpec>, Vec<ShapeSpec>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_seed = || rng.random::<u32>() as u64;
    let mut coeff_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut quadric = |s: u64| ShapeSpec {
        // Curvature terms only; the constant and slope would just move the frame.
        kind: ShapeKind::HeightField {
            coefficients: (0..10)
                .map(|i| {
                    if i < 3 {
                        0.0
                    } else {
                        coeff_rng.random_range(-0.8..0.8)
                    }
                })
                .collect(),
        },
        count,
        seed: s,
    };
    let sphere = |radius: f64, s: u64| ShapeSpec {
        kind: ShapeKind::Sphere { radius },
        count,
        seed: s,
    };
    let dihedral = |angle_deg: f64, s: u64| ShapeSpec {
        kind: ShapeKind::Dihedral { angle_deg },
        count,
        seed: s,
    };
    let train = vec![
        quadric(next_seed()),
        quadric(next_seed()),
        quadric(next_seed()),
        sphere(1.0, next_seed()),
        dihedral(60.0, next_seed()),
        dihedral(90.0, next_seed()),
        dihedral(120.0, next_seed()),
        dihedral(150.0, next_seed()),
    ];
    let test = vec![
        quadric(next_seed()),
        sphere(0.5, next_seed()),
        dihedral(75.0, next_seed()),
        dihedral(105.0, next_seed()),
    ];
    (train, test)
}

/// Augmented copies of `base` named with the benchmark suffixes: the clean
/// cloud, each benchmark noise level, and with `densities` the two density
/// modes.
pub fn corpus_variants(base: &PointCloud, seed: u64, densities: bool) -> Result<Vec<PointCloud>> {
    let mut specs: Vec<(f64, DensityMode)> = std::iter::once(0.0)
        .chain(BENCHMARK_NOISE_LEVELS)
        .map(|s| (s, DensityMode::None))
        .collect();
    if densities {
        specs.push((0.0, DensityMode::Gradient));
        specs.push((0.0, DensityMode::Stripes));
    }
    specs
        .into_iter()
        .enumerate()
        .map(|(i, (sigma, mode))| {
            let spec = AugmentSpec {
                noise_sigma_rel: sigma,
                density_mode: mode,
                seed: seed.wrapping_add(i as u64),
            };
            let mut out = augment(base, &spec)?;
            out.set_name(format!(
                "{}{}",
                base.name(),
                crate::evaluation::category_suffix(sigma, mode)
            ));
            Ok(out)
        })
        .collect()
}

/// The full desk-scale corpus, `(train, test)`. Training clouds carry the
/// noise variants, test clouds the noise and density variants.
pub fn desk_corpus(count: usize, seed: u64) -> Result<(Vec<PointCloud>, Vec<PointCloud>)> {
    let (train, test) = corpus_shapes(count, seed);
    let build = |specs: Vec<ShapeSpec>, densities: bool| -> Result<Vec<PointCloud>> {
        let mut out = Vec::new();
        for spec in specs {
            let base = gen_shape(&spec)?;
            out.extend(corpus_variants(&base, spec.seed, densities)?);
        }
        Ok(out)
    };
    Ok((build(train, false)?, build(test, true)?))
}
