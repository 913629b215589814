//! Central finite-difference verification of the reverse pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sample_gradient, sample_loss, TrainConfig, TrainSample};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::neural::{forward_local, InitMode, ModelParams};

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_diff: f64,
    /// `max_abs_diff / max(max |analytic|, max |numeric|, 1e-8)`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub arrays: Vec<ArrayCheck>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the reverse pass of the total loss against central differences.
///
/// `max_entries`, when set, checks an evenly strided subset of each array.
pub fn grad_check(
    config: &TrainConfig,
    params: &ModelParams,
    sample: &TrainSample,
    tolerance: f64,
    max_entries: Option<usize>,
) -> Result<GradCheckReport> {
    let forward = config.forward();
    grad_check_with(config, params, sample, tolerance, max_entries, |p| {
        sample_gradient(p, sample, &forward, config.alpha1, config.alpha2).map(|(_, g)| g)
    })
}

/// As [`grad_check`] with a caller-supplied analytic gradient.
pub fn grad_check_with(
    config: &TrainConfig,
    params: &ModelParams,
    sample: &TrainSample,
    tolerance: f64,
    max_entries: Option<usize>,
    analytic: impl Fn(&ModelParams) -> Result<ModelParams>,
) -> Result<GradCheckReport> {
    let h = DEFAULT_STEP;
    let selection = forward_local(params, &sample.local_points, &config.forward())?.selection;
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let out = forward_local(p, &sample.local_points, &config.forward())?;
        if out.selection.indices != selection.indices {
            return Err(Error::invalid(
                "finite-difference step changed the top-k selection; choose another sample",
            ));
        }
        Ok(sample_loss(p, sample, config)?.total(config.alpha1, config.alpha2))
    };
    let loss = loss_at(params)?;
    let grad = analytic(params)?;
    let base = params.to_flat();
    let grad_flat = grad.to_flat();
    let mut probe = params.clone();
    let mut arrays = Vec::new();
    let mut offset = 0;
    for array in params.arrays() {
        let len = array.values.len();
        let stride = max_entries.map_or(1, |n| len.div_ceil(n.max(1)).max(1));
        let mut max_abs_diff: f64 = 0.0;
        let mut scale: f64 = 1e-8;
        let mut checked = 0;
        for i in (0..len).step_by(stride) {
            let at = offset + i;
            let mut flat = base.clone();
            flat[at] = base[at] + h;
            probe.set_flat(&flat);
            let plus = loss_at(&probe)?;
            flat[at] = base[at] - h;
            probe.set_flat(&flat);
            let minus = loss_at(&probe)?;
            let numeric = (plus - minus) / (2.0 * h);
            max_abs_diff = max_abs_diff.max((numeric - grad_flat[at]).abs());
            scale = scale.max(numeric.abs()).max(grad_flat[at].abs());
            checked += 1;
        }
        arrays.push(ArrayCheck {
            name: array.name,
            checked,
            max_abs_diff,
            relative_error: max_abs_diff / scale,
        });
        offset += len;
    }
    let max_relative_error = arrays.iter().map(|a| a.relative_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        arrays,
        max_relative_error,
        tolerance,
        passed: max_relative_error <= tolerance,
    })
}

/// Gives the zero-initialized output layers small random values so that
/// every path of the pipeline carries gradient.
pub fn randomize_output_layers(params: &mut ModelParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in params
        .qst_out
        .weight
        .iter_mut()
        .chain(params.qst_out.bias.iter_mut())
        .chain(params.update_edge.weight.iter_mut())
        .chain(params.update_edge.bias.iter_mut())
    {
        *v = rng.random_range(-scale..scale);
    }
}

/// A random curved patch of `r` points with a crease-like kink, centered
/// at the origin, and a tilted target normal.
pub fn random_patch(seed: u64, r: usize) -> TrainSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
    let mut pts = vec![Vec3::zeros()];
    for _ in 1..r {
        let x: f64 = rng.random_range(-0.7..0.7);
        let y: f64 = rng.random_range(-0.7..0.7);
        let z = c[0] * x * x
            + c[1] * x * y
            + c[2] * y * y
            + c[3] * x.abs()
            + 0.01 * rng.random_range(-1.0..1.0);
        pts.push(Vec3::new(x, y, z));
    }
    let tilt = Vec3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        1.0,
    );
    TrainSample {
        local_points: pts,
        gt_normal: tilt.normalize(),
    }
}

/// Checks `count` random patches, each with its own random model whose
/// output layers are nonzero. A draw whose finite-difference steps flip
/// the selection is replaced by the next seed; at most `count` extra draws
/// are made.
pub fn grad_check_patches(
    config: &TrainConfig,
    count: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<GradCheckReport>> {
    config.validate()?;
    let mut reports = Vec::with_capacity(count);
    let mut draw = seed;
    let mut spare = count;
    while reports.len() < count {
        let mut params = ModelParams::init(&config.arch, draw, InitMode::Standard)?;
        randomize_output_layers(&mut params, draw, 0.3);
        let sample = random_patch(draw.wrapping_add(0x51ed), config.patch_size);
        draw = draw.wrapping_add(1);
        match grad_check(config, &params, &sample, tolerance, None) {
            Ok(r) => reports.push(r),
            Err(Error::InvalidInput(_)) if spare > 0 => spare -= 1,
            Err(e) => return Err(e),
        }
    }
    Ok(reports)
}
