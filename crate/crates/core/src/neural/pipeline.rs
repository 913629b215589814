//! The full learned estimator for one patch, and its reverse pass.

use nalgebra::{DMatrix, DVector};

use super::layers::{max_pool, max_pool_backward, sigmoid, MlpCache};
use super::params::ModelParams;
use super::qst::{matrix_to_points, points_to_matrix, qst_backward, qst_forward, QstTape};
use super::select::{top_k_select, Selection, WeightVector};
use super::update::{update_backward, update_forward, UpdateTape};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Patch, Vec3};
use crate::jet::{derivative_rows, jet_term_count, normalize_backward, JetModel, WlsFit};

/// Per-run settings of the learned pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardConfig {
    pub k: usize,
    pub order: usize,
    /// In-patch neighbors of the displacement step; 0 disables it.
    pub m: usize,
    pub force_center: bool,
}

impl ForwardConfig {
    pub fn validate(&self, r: usize) -> Result<()> {
        if self.order == 0 || self.order > 4 {
            return Err(Error::invalid(format!(
                "jet order {} must be in 1..=4",
                self.order
            )));
        }
        if self.k == 0 || self.k > r {
            return Err(Error::invalid(format!("k = {} must be in 1..={r}", self.k)));
        }
        if self.m > 0 && self.m >= self.k {
            return Err(Error::invalid(format!(
                "update neighbors m = {} must be smaller than k = {}",
                self.m, self.k
            )));
        }
        Ok(())
    }
}

/// Point-wise features `F` (one row per point) and their max-pooled global
/// feature `G`.
pub fn point_features(params: &ModelParams, points: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let cache = params.features.forward(points);
    let (g, _) = max_pool(cache.output());
    (cache.output().clone(), g)
}

/// Sigmoid of the head applied to every `[F_j | G]`.
pub fn weight_head(
    params: &ModelParams,
    features: &DMatrix<f64>,
    global: &DVector<f64>,
) -> Vec<f64> {
    let cache = params.head.forward_with_broadcast(features, Some(global));
    cache
        .output()
        .column(0)
        .iter()
        .map(|&h| sigmoid(h))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Tape {
    input: DMatrix<f64>,
    qst: QstTape,
    rotated: DMatrix<f64>,
    features: MlpCache,
    pool_argmax: Vec<usize>,
    head: MlpCache,
    update: Option<UpdateTape>,
    fit: WlsFit,
    normal_raw: Vec3,
    neighbor_raw: Vec<Vec3>,
}

/// Everything one forward pass produces. Directions are in the patch's
/// PCA-aligned frame unless named `world`.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub normal_world: Vec3,
    pub normal_local: Vec3,
    pub neighbor_normals: Vec<Vec3>,
    pub weights: WeightVector,
    pub selection: Selection,
    /// Selected points after the displacement step, in the pose frame.
    pub updated_points: Vec<Vec3>,
    pub model: JetModel,
    pub rotation: Mat3,
    pub qst_fallback: bool,
    pub tape: Tape,
}

pub fn forward_pipeline(
    params: &ModelParams,
    patch: &Patch,
    config: &ForwardConfig,
) -> Result<PipelineOutput> {
    forward_local(params, &patch.local_points, config).map(|mut out| {
        out.normal_world = patch.direction_to_world(&out.normal_local);
        out
    })
}

/// Forward pass on already aligned patch points (point 0 is the center).
pub fn forward_local(
    params: &ModelParams,
    local: &[Vec3],
    config: &ForwardConfig,
) -> Result<PipelineOutput> {
    let r = local.len();
    config.validate(r)?;
    if config.k < jet_term_count(config.order) {
        return Err(Error::Underdetermined {
            positive: config.k,
            terms: jet_term_count(config.order),
        });
    }
    let input = points_to_matrix(local);
    let qst = qst_forward(params, &input);
    let rotation = qst.tape.rotation;
    let features = params.features.forward(&qst.rotated);
    let (global, pool_argmax) = max_pool(features.output());
    let head = params
        .head
        .forward_with_broadcast(features.output(), Some(&global));
    let weights = WeightVector {
        values: head
            .output()
            .column(0)
            .iter()
            .map(|&h| sigmoid(h))
            .collect(),
        patch_id: 0,
    };
    let selection = top_k_select(&weights, config.k, config.force_center)?;

    let gathered = DMatrix::from_fn(config.k, 3, |i, c| qst.rotated[(selection.indices[i], c)]);
    let (moved, update) = if config.m > 0 {
        let (moved, tape) = update_forward(params, &gathered, config.m)?;
        (moved, Some(tape))
    } else {
        (gathered, None)
    };
    let updated_points = matrix_to_points(&moved);
    let fit = WlsFit::solve(&updated_points, &selection.weights, config.order)?;
    let model = fit.model.clone();

    let normal_raw = {
        let b = model.beta();
        Vec3::new(-b[1], -b[2], 1.0)
    };
    let neighbor_raw: Vec<Vec3> = updated_points
        .iter()
        .map(|p| {
            let g = model.gradient(p.x, p.y);
            Vec3::new(-g.x, -g.y, 1.0)
        })
        .collect();
    let at = rotation.transpose();
    let normal_local = at * normal_raw.normalize();
    let neighbor_normals = neighbor_raw.iter().map(|v| at * v.normalize()).collect();

    Ok(PipelineOutput {
        normal_world: normal_local,
        normal_local,
        neighbor_normals,
        weights,
        selection,
        updated_points,
        model,
        rotation,
        qst_fallback: qst.tape.fallback,
        tape: Tape {
            input,
            qst: qst.tape,
            rotated: qst.rotated,
            features,
            pool_argmax,
            head,
            update,
            fit,
            normal_raw,
            neighbor_raw,
        },
    })
}

/// Gradient of a scalar loss with respect to the pipeline outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub normal_local: Vec3,
    pub neighbor_normals: Vec<Vec3>,
    pub selected_weights: Vec<f64>,
    pub rotation: Mat3,
}

impl OutputGrads {
    pub fn zeros(k: usize) -> Self {
        OutputGrads {
            normal_local: Vec3::zeros(),
            neighbor_normals: vec![Vec3::zeros(); k],
            selected_weights: vec![0.0; k],
            rotation: Mat3::zeros(),
        }
    }
}

/// Reverse pass: gradients for every parameter array.
pub fn backward(params: &ModelParams, output: &PipelineOutput, seed: &OutputGrads) -> ModelParams {
    let mut grad = params.zeros_like();
    backward_into(params, output, seed, &mut grad);
    grad
}

/// As [`backward`], accumulating into `grad`.
pub fn backward_into(
    params: &ModelParams,
    output: &PipelineOutput,
    seed: &OutputGrads,
    grad: &mut ModelParams,
) {
    let tape = &output.tape;
    let a = output.rotation;
    let k = output.selection.k;
    assert_eq!(seed.neighbor_normals.len(), k);
    assert_eq!(seed.selected_weights.len(), k);

    let mut d_rotation = seed.rotation;
    let model = &output.model;
    let terms = model.beta().len();
    let mut d_beta = vec![0.0; terms];

    // Directions leave the pose frame through A^T.
    let n_hat = tape.normal_raw.normalize();
    d_rotation += n_hat * seed.normal_local.transpose();
    let dv = normalize_backward(&tape.normal_raw, &(a * seed.normal_local));
    d_beta[1] -= dv.x;
    d_beta[2] -= dv.y;

    let mut d_moved = DMatrix::zeros(k, 3);
    for j in 0..k {
        let d_out = seed.neighbor_normals[j];
        if d_out == Vec3::zeros() {
            continue;
        }
        let raw = tape.neighbor_raw[j];
        d_rotation += raw.normalize() * d_out.transpose();
        let dv = normalize_backward(&raw, &(a * d_out));
        let p = output.updated_points[j];
        let (dx_row, dy_row) = derivative_rows(p.x, p.y, model.order());
        for c in 0..terms {
            d_beta[c] -= dv.x * dx_row[c] + dv.y * dy_row[c];
        }
        let (fxx, fxy, fyy) = model.hessian(p.x, p.y);
        d_moved[(j, 0)] -= dv.x * fxx + dv.y * fxy;
        d_moved[(j, 1)] -= dv.x * fxy + dv.y * fyy;
    }

    let wls = tape.fit.backward(&d_beta);
    for j in 0..k {
        for c in 0..3 {
            d_moved[(j, c)] += wls.points[j][c];
        }
    }
    let d_gathered = match &tape.update {
        Some(u) => update_backward(params, u, &d_moved, grad),
        None => d_moved,
    };

    let r = tape.rotated.nrows();
    let mut d_rotated = DMatrix::zeros(r, 3);
    let mut d_head = DMatrix::zeros(r, 1);
    for (slot, &idx) in output.selection.indices.iter().enumerate() {
        for c in 0..3 {
            d_rotated[(idx, c)] += d_gathered[(slot, c)];
        }
        let w = output.weights.values[idx];
        let dw = wls.weights[slot] + seed.selected_weights[slot];
        d_head[(idx, 0)] = dw * w * (1.0 - w);
    }

    let (mut d_features, d_global) = params.head.backward(&tape.head, &d_head, &mut grad.head);
    let d_global = d_global.expect("head consumes the global feature");
    d_features += max_pool_backward(r, &tape.pool_argmax, &d_global);
    let (d_from_features, _) =
        params
            .features
            .backward(&tape.features, &d_features, &mut grad.features);
    d_rotated += d_from_features;

    // rotated = P A^T
    let dr = d_rotated.tr_mul(&tape.input);
    d_rotation += Mat3::from_fn(|i, j| dr[(i, j)]);
    qst_backward(params, &tape.qst, &d_rotation, grad);
}
