//! Training objectives, each returned with its gradient.

use crate::geometry::{Mat3, Vec3};
use crate::jet::normalize_backward;
use crate::neural::clamp_weight;
use crate::neural::select::{WEIGHT_MAX, WEIGHT_MIN};

/// `||a x b||` for unit `a`, plus its gradient with respect to raw `b`
/// (which is normalized first).
fn sin_between(gt: &Vec3, v: &Vec3) -> (f64, Vec3) {
    let n = v.normalize();
    let c = gt.cross(&n);
    let s = c.norm();
    if s == 0.0 {
        return (0.0, Vec3::zeros());
    }
    let d_n = (c / s).cross(gt);
    (s, normalize_backward(v, &d_n))
}

/// Sine of the angle between estimate and truth.
pub fn loss_center(estimate: &Vec3, gt: &Vec3) -> (f64, Vec3) {
    sin_between(&gt.normalize(), estimate)
}

/// Mean over the selected points of `-ln w + w ||gt x n_j||`, with weights
/// clamped first.
pub fn loss_neighbors(weights: &[f64], gt: &Vec3, normals: &[Vec3]) -> (f64, Vec<f64>, Vec<Vec3>) {
    assert_eq!(weights.len(), normals.len());
    let k = weights.len() as f64;
    let gt = gt.normalize();
    let mut total = 0.0;
    let mut d_w = Vec::with_capacity(weights.len());
    let mut d_n = Vec::with_capacity(weights.len());
    for (&w, n) in weights.iter().zip(normals) {
        let wc = clamp_weight(w);
        let (s, ds) = sin_between(&gt, n);
        total += -wc.ln() + wc * s;
        let inside = w > WEIGHT_MIN && w < WEIGHT_MAX;
        d_w.push(if inside { (-1.0 / wc + s) / k } else { 0.0 });
        d_n.push(ds * (wc / k));
    }
    (total / k, d_w, d_n)
}

/// Frobenius norm of `I - A A^T`.
pub fn loss_reg(a: &Mat3) -> (f64, Mat3) {
    let e = Mat3::identity() - a * a.transpose();
    let norm = e.norm();
    if norm < 1e-10 {
        return (norm, Mat3::zeros());
    }
    (norm, -2.0 * (e / norm) * a)
}

/// The individual objectives of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub center: f64,
    pub neighbors: f64,
    pub reg: f64,
}

impl LossParts {
    pub fn total(&self, alpha1: f64, alpha2: f64) -> f64 {
        loss_total(self, alpha1, alpha2)
    }
}

pub fn loss_total(parts: &LossParts, alpha1: f64, alpha2: f64) -> f64 {
    parts.center + alpha1 * parts.neighbors + alpha2 * parts.reg
}
