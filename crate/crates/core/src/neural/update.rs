//! Learned point displacement from weighted in-patch edge vectors.
//!
//! For point `j` with in-patch neighbors `s`:
//! `p_j' = p_j + (1/m) sum_s e_js (p_s - p_j)` where
//! `e_js = a . (u_s - u_j) + b` and `u` are the displacement network's
//! point features.

use nalgebra::DMatrix;

use super::layers::MlpCache;
use super::params::ModelParams;
use super::qst::{matrix_to_points, points_to_matrix};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::knn::dist2;

#[derive(Debug, Clone)]
pub struct UpdateTape {
    input: DMatrix<f64>,
    features: MlpCache,
    pub neighbors: Vec<Vec<usize>>,
    pub edge_weights: Vec<Vec<f64>>,
}

/// The `m` nearest other rows of `points` for every row, ties by index.
pub fn in_patch_neighbors(points: &[Vec3], m: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|j| {
            let mut others: Vec<(f64, usize)> = (0..points.len())
                .filter(|&s| s != j)
                .map(|s| (dist2(&points[j], &points[s]), s))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.truncate(m);
            others.into_iter().map(|(_, s)| s).collect()
        })
        .collect()
}

pub fn update_forward(
    params: &ModelParams,
    points: &DMatrix<f64>,
    m: usize,
) -> Result<(DMatrix<f64>, UpdateTape)> {
    let n = points.nrows();
    if m >= n {
        return Err(Error::invalid(format!(
            "update neighborhood {m} must be smaller than the {n} updated points"
        )));
    }
    let features = params.update_features.forward(points);
    let u = features.output();
    let neighbors = in_patch_neighbors(&matrix_to_points(points), m);
    let a = params.update_edge.weight.column(0);
    let b = params.update_edge.bias[0];
    // Projecting features first: a . (u_s - u_j) = proj_s - proj_j.
    let proj = u * a;
    let mut updated = points.clone();
    let mut edge_weights = Vec::with_capacity(n);
    for j in 0..n {
        let mut ew = Vec::with_capacity(m);
        for &s in &neighbors[j] {
            let e = proj[s] - proj[j] + b;
            for c in 0..3 {
                updated[(j, c)] += e * (points[(s, c)] - points[(j, c)]) / m as f64;
            }
            ew.push(e);
        }
        edge_weights.push(ew);
    }
    Ok((
        updated,
        UpdateTape {
            input: points.clone(),
            features,
            neighbors,
            edge_weights,
        },
    ))
}

/// Accumulates displacement-network gradients; returns `dL/dpoints`.
pub fn update_backward(
    params: &ModelParams,
    tape: &UpdateTape,
    d_updated: &DMatrix<f64>,
    grad: &mut ModelParams,
) -> DMatrix<f64> {
    let points = &tape.input;
    let n = points.nrows();
    let mut d_points = d_updated.clone();
    let mut d_proj = vec![0.0; n];
    let mut d_bias = 0.0;
    for j in 0..n {
        let m = tape.neighbors[j].len();
        if m == 0 {
            continue;
        }
        let inv_m = 1.0 / m as f64;
        for (&s, &e) in tape.neighbors[j].iter().zip(&tape.edge_weights[j]) {
            let mut d_e = 0.0;
            for c in 0..3 {
                let dj = d_updated[(j, c)];
                d_e += dj * (points[(s, c)] - points[(j, c)]) * inv_m;
                d_points[(s, c)] += e * inv_m * dj;
                d_points[(j, c)] -= e * inv_m * dj;
            }
            d_proj[s] += d_e;
            d_proj[j] -= d_e;
            d_bias += d_e;
        }
    }
    let u = tape.features.output();
    let d_proj = nalgebra::DVector::from_vec(d_proj);
    let mut d_a = grad.update_edge.weight.column_mut(0);
    d_a += u.tr_mul(&d_proj);
    grad.update_edge.bias[0] += d_bias;
    let a = params.update_edge.weight.column(0);
    let d_u = &d_proj * a.transpose();
    let (d_in, _) =
        params
            .update_features
            .backward(&tape.features, &d_u, &mut grad.update_features);
    d_points + d_in
}

/// Displaces each point by its learned edge-weighted neighborhood average.
pub fn point_update(params: &ModelParams, points: &[Vec3], m: usize) -> Result<Vec<Vec3>> {
    if m == 0 {
        return Ok(points.to_vec());
    }
    let (updated, _) = update_forward(params, &points_to_matrix(points), m)?;
    Ok(matrix_to_points(&updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{Architecture, InitMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params_with_edge(weight_scale: f64, bias: f64) -> ModelParams {
        let mut p = ModelParams::init(&Architecture::tiny(), 5, InitMode::Standard).unwrap();
        p.update_edge.weight.fill(weight_scale);
        p.update_edge.bias[0] = bias;
        p
    }

    #[test]
    fn zero_edge_output_keeps_points() {
        let p = params_with_edge(0.0, 0.0);
        let pts = vec![
            Vec3::zeros(),
            Vec3::x(),
            Vec3::y(),
            Vec3::new(1.0, 1.0, 0.5),
        ];
        assert_eq!(point_update(&p, &pts, 2).unwrap(), pts);
    }

    #[test]
    fn symmetric_edges_cancel() {
        let p = params_with_edge(0.0, 1.0);
        let e = Vec3::new(0.3, -0.1, 0.2);
        let pts = vec![Vec3::zeros(), e, -e, Vec3::new(5.0, 5.0, 5.0)];
        let out = point_update(&p, &pts, 2).unwrap();
        assert!(out[0].norm() < 1e-15);
    }

    #[test]
    fn mean_of_edges() {
        let p = params_with_edge(0.0, 1.0);
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        let out = point_update(&p, &pts, 2).unwrap();
        assert!((out[0] - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn neighborhood_must_fit() {
        let p = params_with_edge(0.0, 1.0);
        let pts = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(point_update(&p, &pts, 3).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(&Architecture::tiny(), 2, InitMode::Standard).unwrap();
        p.update_edge
            .weight
            .apply(|v| *v = rng.random_range(-0.5..0.5));
        p.update_edge.bias[0] = 0.3;
        let pts = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let seed = DMatrix::from_fn(10, 3, |_, _| rng.random_range(-1.0..1.0));
        let m = 3;
        let loss = |p: &ModelParams, x: &DMatrix<f64>| {
            update_forward(p, x, m)
                .unwrap()
                .0
                .component_mul(&seed)
                .sum()
        };
        let (_, tape) = update_forward(&p, &pts, m).unwrap();
        let mut grad = p.zeros_like();
        let d_pts = update_backward(&p, &tape, &seed, &mut grad);
        let h = 1e-6;
        for i in 0..pts.len() {
            let mut a = pts.clone();
            a[i] += h;
            let mut b = pts.clone();
            b[i] -= h;
            let fd = (loss(&p, &a) - loss(&p, &b)) / (2.0 * h);
            assert!(
                (fd - d_pts[i]).abs() < 1e-7,
                "point {i}: {fd} vs {}",
                d_pts[i]
            );
        }
        for i in 0..p.update_edge.weight.len() {
            let mut a = p.clone();
            a.update_edge.weight[i] += h;
            let mut b = p.clone();
            b.update_edge.weight[i] -= h;
            let fd = (loss(&a, &pts) - loss(&b, &pts)) / (2.0 * h);
            assert!((fd - grad.update_edge.weight[i]).abs() < 1e-7);
        }
        let l0 = &p.update_features.layers[0];
        for i in 0..l0.weight.len() {
            let mut a = p.clone();
            a.update_features.layers[0].weight[i] += h;
            let mut b = p.clone();
            b.update_features.layers[0].weight[i] -= h;
            let fd = (loss(&a, &pts) - loss(&b, &pts)) / (2.0 * h);
            assert!((fd - grad.update_features.layers[0].weight[i]).abs() < 1e-7);
        }
    }
}
