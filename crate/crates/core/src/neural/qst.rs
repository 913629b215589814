//! Quaternion spatial transformer: predicts a rotation that brings a patch
//! into a canonical pose.

use nalgebra::{DMatrix, DVector, Vector4};

use super::layers::{max_pool, max_pool_backward, MlpCache};
use super::params::ModelParams;
use crate::geometry::{Mat3, Vec3};

pub type Quat = Vector4<f64>;

/// Pre-normalization norms below this fall back to the identity rotation.
pub const MIN_QUATERNION_NORM: f64 = 1e-12;

pub fn identity_quaternion() -> Quat {
    Quat::new(1.0, 0.0, 0.0, 0.0)
}

/// Rotation matrix of a unit quaternion stored as `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: &Quat) -> Mat3 {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dA` back to the quaternion entries (no normalization).
pub fn quaternion_to_matrix_backward(q: &Quat, d: &Mat3) -> Quat {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = 2.0
        * (-z * d[(0, 1)] + y * d[(0, 2)] + z * d[(1, 0)] - x * d[(1, 2)] - y * d[(2, 0)]
            + x * d[(2, 1)]);
    let dx = 2.0
        * (y * d[(0, 1)] + z * d[(0, 2)] + y * d[(1, 0)] - 2.0 * x * d[(1, 1)] - w * d[(1, 2)]
            + z * d[(2, 0)]
            + w * d[(2, 1)]
            - 2.0 * x * d[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * d[(0, 0)] + x * d[(0, 1)] + w * d[(0, 2)] + x * d[(1, 0)] + z * d[(1, 2)]
            - w * d[(2, 0)]
            + z * d[(2, 1)]
            - 2.0 * y * d[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * d[(0, 0)] - w * d[(0, 1)] + x * d[(0, 2)] + w * d[(1, 0)]
            - 2.0 * z * d[(1, 1)]
            + y * d[(1, 2)]
            + x * d[(2, 0)]
            + y * d[(2, 1)]);
    Quat::new(dw, dx, dy, dz)
}

/// `v / ||v||` in four dimensions, and its backward pass.
fn normalize4_backward(v: &Quat, d_out: &Quat) -> Quat {
    let norm = v.norm();
    let n = v / norm;
    (d_out - n * n.dot(d_out)) / norm
}

/// Rows of `points` rotated by `rotation`: row `j` becomes `(R p_j)^T`.
pub fn rotate_rows(points: &DMatrix<f64>, rotation: &Mat3) -> DMatrix<f64> {
    let rt = DMatrix::from_column_slice(3, 3, rotation.transpose().as_slice());
    points * rt
}

pub fn points_to_matrix(points: &[Vec3]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |r, c| points[r][c])
}

pub fn matrix_to_points(m: &DMatrix<f64>) -> Vec<Vec3> {
    (0..m.nrows())
        .map(|r| Vec3::new(m[(r, 0)], m[(r, 1)], m[(r, 2)]))
        .collect()
}

#[derive(Debug, Clone)]
pub struct QstTape {
    point_cache: MlpCache,
    argmax: Vec<usize>,
    pooled: DVector<f64>,
    raw: Quat,
    pub quaternion: Quat,
    pub rotation: Mat3,
    /// The predicted quaternion had (near) zero norm and was replaced.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct QstOutput {
    pub rotated: DMatrix<f64>,
    pub tape: QstTape,
}

/// Predicts the canonical-pose rotation of `points` (one point per row) and
/// applies it.
pub fn qst_forward(params: &ModelParams, points: &DMatrix<f64>) -> QstOutput {
    let point_cache = params.qst_points.forward(points);
    let (pooled, argmax) = max_pool(point_cache.output());
    let out = params.qst_out.weight.tr_mul(&pooled) + &params.qst_out.bias;
    let raw = Quat::new(out[0], out[1], out[2], out[3]) + identity_quaternion();
    let norm = raw.norm();
    let fallback = !(norm >= MIN_QUATERNION_NORM && norm.is_finite());
    let quaternion = if fallback {
        identity_quaternion()
    } else {
        raw / norm
    };
    let rotation = quaternion_to_matrix(&quaternion);
    QstOutput {
        rotated: rotate_rows(points, &rotation),
        tape: QstTape {
            point_cache,
            argmax,
            pooled,
            raw,
            quaternion,
            rotation,
            fallback,
        },
    }
}

/// Accumulates QST parameter gradients given `dL/dA`.
pub fn qst_backward(
    params: &ModelParams,
    tape: &QstTape,
    d_rotation: &Mat3,
    grad: &mut ModelParams,
) {
    if tape.fallback {
        return;
    }
    let d_q = quaternion_to_matrix_backward(&tape.quaternion, d_rotation);
    let d_raw = normalize4_backward(&tape.raw, &d_q);
    let d_out = DVector::from_column_slice(d_raw.as_slice());
    grad.qst_out.weight += &tape.pooled * d_out.transpose();
    grad.qst_out.bias += &d_out;
    let d_pooled = &params.qst_out.weight * &d_out;
    let rows = tape.point_cache.output().nrows();
    let d_points = max_pool_backward(rows, &tape.argmax, &d_pooled);
    params
        .qst_points
        .backward(&tape.point_cache, &d_points, &mut grad.qst_points);
}
