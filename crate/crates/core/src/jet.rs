//! Truncated Taylor height-function ("n-jet") fitting.
//!
//! A jet of order `n` is `f(x, y) = sum_{s<=n} sum_{t<=s} beta[s-t, t] x^(s-t) y^t`
//! with coefficients stored degree-major, then by descending power of `x`:
//! `1, x, y, x^2, xy, y^2, x^3, ...`.
//!
//! Weighted fits are solved by QR factorisation of the row-scaled system
//! `W^(1/2) M`, never through the normal equations. The same factor
//! provides the adjoint solve used to differentiate the fit with respect to
//! the sample weights and positions.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub type Vec2 = Vector2<f64>;

/// Weights below this count as zero when checking that a fit is determined.
pub const WEIGHT_FLOOR: f64 = 1e-7;
/// Above this diagonal ratio of the triangular factor a ridge term is added.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Ridge added to `M^T W M` for rank-deficient systems.
pub const RIDGE: f64 = 1e-8;

/// Number of coefficients of an order-`n` jet.
pub const fn jet_term_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

/// `(x power, y power)` of each coefficient, in storage order.
pub fn monomial_exponents(order: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=order).flat_map(|s| (0..=s).map(move |t| (s - t, t)))
}

fn powers(v: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(order + 1);
    let mut acc = 1.0;
    for _ in 0..=order {
        out.push(acc);
        acc *= v;
    }
    out
}

fn monomial_row(x: f64, y: f64, order: usize, out: &mut [f64]) {
    let px = powers(x, order);
    let py = powers(y, order);
    for (slot, (a, b)) in out.iter_mut().zip(monomial_exponents(order)) {
        *slot = px[a] * py[b];
    }
}

/// Row `j` holds the monomials of `xy[j]`.
pub fn build_vandermonde(xy: &[Vec2], order: usize) -> DMatrix<f64> {
    let terms = jet_term_count(order);
    let mut m = DMatrix::zeros(xy.len(), terms);
    let mut row = vec![0.0; terms];
    for (j, p) in xy.iter().enumerate() {
        monomial_row(p.x, p.y, order, &mut row);
        for (c, v) in row.iter().enumerate() {
            m[(j, c)] = *v;
        }
    }
    m
}

/// Polynomial height function with its coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct JetModel {
    order: usize,
    beta: Vec<f64>,
}

impl JetModel {
    pub fn new(order: usize, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != jet_term_count(order) {
            return Err(Error::invalid(format!(
                "order {order} jet needs {} coefficients, got {}",
                jet_term_count(order),
                beta.len()
            )));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("jet coefficients must be finite"));
        }
        Ok(JetModel { order, beta })
    }

    pub fn zeros(order: usize) -> Self {
        JetModel {
            order,
            beta: vec![0.0; jet_term_count(order)],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn evaluate(&self, x: f64, y: f64) -> f64 {
        let px = powers(x, self.order);
        let py = powers(y, self.order);
        monomial_exponents(self.order)
            .zip(&self.beta)
            .map(|((a, b), c)| c * px[a] * py[b])
            .sum()
    }

    /// `(df/dx, df/dy)`.
    pub fn gradient(&self, x: f64, y: f64) -> Vec2 {
        let (dx, dy) = derivative_rows(x, y, self.order);
        Vec2::new(dot(&dx, &self.beta), dot(&dy, &self.beta))
    }

    /// `(f_xx, f_xy, f_yy)`.
    pub fn hessian(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let px = powers(x, self.order);
        let py = powers(y, self.order);
        let mut h = (0.0, 0.0, 0.0);
        for ((a, b), c) in monomial_exponents(self.order).zip(&self.beta) {
            if a >= 2 {
                h.0 += c * (a * (a - 1)) as f64 * px[a - 2] * py[b];
            }
            if a >= 1 && b >= 1 {
                h.1 += c * (a * b) as f64 * px[a - 1] * py[b - 1];
            }
            if b >= 2 {
                h.2 += c * (b * (b - 1)) as f64 * px[a] * py[b - 2];
            }
        }
        h
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Partial derivatives of each monomial with respect to `x` and `y`.
pub(crate) fn derivative_rows(x: f64, y: f64, order: usize) -> (Vec<f64>, Vec<f64>) {
    let px = powers(x, order);
    let py = powers(y, order);
    monomial_exponents(order)
        .map(|(a, b)| {
            let dx = if a > 0 {
                a as f64 * px[a - 1] * py[b]
            } else {
                0.0
            };
            let dy = if b > 0 {
                b as f64 * px[a] * py[b - 1]
            } else {
                0.0
            };
            (dx, dy)
        })
        .unzip()
}

/// Heights of the jet at each query location.
pub fn evaluate_jet(model: &JetModel, xy: &[Vec2]) -> Vec<f64> {
    xy.iter().map(|p| model.evaluate(p.x, p.y)).collect()
}

/// Regular `resolution x resolution` grid over `[-extent, extent]^2`.
pub fn square_grid(extent: f64, resolution: usize) -> Vec<Vec2> {
    let steps = resolution.max(2) - 1;
    let coord = |i: usize| -extent + 2.0 * extent * i as f64 / steps as f64;
    (0..=steps)
        .flat_map(|i| (0..=steps).map(move |j| Vec2::new(coord(i), coord(j))))
        .collect()
}

/// Unit normal of the height field at `(x, y)`: `(-f_x, -f_y, 1)` normalized.
pub fn normal_at(model: &JetModel, x: f64, y: f64) -> Vec3 {
    let g = model.gradient(x, y);
    Vec3::new(-g.x, -g.y, 1.0).normalize()
}

/// Normal at the patch origin.
pub fn normal_from_beta(model: &JetModel) -> Vec3 {
    let (b1, b2) = match model.beta.as_slice() {
        [_, b1, b2, ..] => (*b1, *b2),
        _ => (0.0, 0.0),
    };
    Vec3::new(-b1, -b2, 1.0).normalize()
}

/// Normals of the fitted surface above each neighbor location.
pub fn neighbor_normals(model: &JetModel, xy: &[Vec2]) -> Vec<Vec3> {
    xy.iter().map(|p| normal_at(model, p.x, p.y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    /// `||W^(1/2) (M beta - B)||`.
    pub residual_norm: f64,
    /// Ratio of largest to smallest diagonal magnitude of the triangular factor.
    pub condition_hint: f64,
    pub ridge_applied: bool,
}

/// A weighted fit together with what is needed to differentiate it.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub model: JetModel,
    pub diagnostics: FitDiagnostics,
    vandermonde: DMatrix<f64>,
    heights: Vec<f64>,
    weights: Vec<f64>,
    /// Upper-triangular factor with `R^T R = M^T W M (+ ridge I)`.
    r_factor: DMatrix<f64>,
}

/// Gradients of a fit's inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsGrad {
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
}

pub fn ls_fit(points: &[Vec3], order: usize) -> Result<(JetModel, FitDiagnostics)> {
    let weights = vec![1.0; points.len()];
    wls_fit(points, &weights, order)
}

pub fn wls_fit(
    points: &[Vec3],
    weights: &[f64],
    order: usize,
) -> Result<(JetModel, FitDiagnostics)> {
    let fit = WlsFit::solve(points, weights, order)?;
    Ok((fit.model, fit.diagnostics))
}

fn back_substitute(r: &DMatrix<f64>, rhs: &mut [f64]) {
    let n = rhs.len();
    for i in (0..n).rev() {
        let mut acc = rhs[i];
        for j in i + 1..n {
            acc -= r[(i, j)] * rhs[j];
        }
        rhs[i] = acc / r[(i, i)];
    }
}

fn forward_substitute_transposed(r: &DMatrix<f64>, rhs: &mut [f64]) {
    let n = rhs.len();
    for i in 0..n {
        let mut acc = rhs[i];
        for j in 0..i {
            acc -= r[(j, i)] * rhs[j];
        }
        rhs[i] = acc / r[(i, i)];
    }
}

fn factor(scaled: DMatrix<f64>, rhs: DVector<f64>, terms: usize) -> (DMatrix<f64>, Vec<f64>) {
    let qr = scaled.qr();
    let mut qtb = rhs;
    qr.q_tr_mul(&mut qtb);
    let r = qr.r().rows(0, terms).into_owned();
    (r, qtb.as_slice()[..terms].to_vec())
}

fn diagonal_ratio(r: &DMatrix<f64>) -> f64 {
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

impl WlsFit {
    pub fn solve(points: &[Vec3], weights: &[f64], order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("jet order must be at least 1"));
        }
        if weights.len() != points.len() {
            return Err(Error::invalid(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::invalid(format!(
                "weight {w} is not a nonnegative real"
            )));
        }
        let terms = jet_term_count(order);
        let positive = weights.iter().filter(|&&w| w >= WEIGHT_FLOOR).count();
        if points.len() < terms || positive < terms {
            return Err(Error::Underdetermined {
                positive: positive.min(points.len()),
                terms,
            });
        }

        let xy: Vec<Vec2> = points.iter().map(|p| p.xy()).collect();
        let heights: Vec<f64> = points.iter().map(|p| p.z).collect();
        let m = build_vandermonde(&xy, order);
        let k = points.len();
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut scaled = m.clone();
        for j in 0..k {
            scaled.row_mut(j).scale_mut(sqrt_w[j]);
        }
        let rhs = DVector::from_iterator(k, (0..k).map(|j| sqrt_w[j] * heights[j]));

        let (mut r, mut beta) = factor(scaled.clone(), rhs.clone(), terms);
        let mut condition_hint = diagonal_ratio(&r);
        let mut ridge_applied = false;
        if !(condition_hint <= CONDITION_LIMIT) {
            // Stacking sqrt(ridge) I under the system adds ridge I to M^T W M.
            let mut augmented = DMatrix::zeros(k + terms, terms);
            augmented.rows_mut(0, k).copy_from(&scaled);
            for c in 0..terms {
                augmented[(k + c, c)] = RIDGE.sqrt();
            }
            let mut aug_rhs = DVector::zeros(k + terms);
            aug_rhs.rows_mut(0, k).copy_from(&rhs);
            let (r2, b2) = factor(augmented, aug_rhs, terms);
            r = r2;
            beta = b2;
            condition_hint = diagonal_ratio(&r);
            ridge_applied = true;
        }
        back_substitute(&r, &mut beta);

        let residual_norm = (0..k)
            .map(|j| {
                let fit: f64 = (0..terms).map(|c| m[(j, c)] * beta[c]).sum();
                weights[j] * (fit - heights[j]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::DegeneratePatch(
                "jet fit produced non-finite coefficients".into(),
            ));
        }
        Ok(WlsFit {
            model: JetModel { order, beta },
            diagnostics: FitDiagnostics {
                residual_norm,
                condition_hint,
                ridge_applied,
            },
            vandermonde: m,
            heights,
            weights: weights.to_vec(),
            r_factor: r,
        })
    }

    /// Pulls a gradient on the coefficients back to the sample positions and
    /// weights through the stationarity condition `(M^T W M) beta = M^T W B`.
    pub fn backward(&self, d_beta: &[f64]) -> WlsGrad {
        let order = self.model.order;
        let beta = &self.model.beta;
        let terms = beta.len();
        assert_eq!(d_beta.len(), terms);
        let mut lambda = d_beta.to_vec();
        forward_substitute_transposed(&self.r_factor, &mut lambda);
        back_substitute(&self.r_factor, &mut lambda);

        let k = self.heights.len();
        let mut d_points = Vec::with_capacity(k);
        let mut d_weights = Vec::with_capacity(k);
        for j in 0..k {
            let row = self.vandermonde.row(j);
            let m_lambda: f64 = (0..terms).map(|c| row[c] * lambda[c]).sum();
            let m_beta: f64 = (0..terms).map(|c| row[c] * beta[c]).sum();
            let residual = self.heights[j] - m_beta;
            let w = self.weights[j];
            d_weights.push(m_lambda * residual);
            // dL/dM_j = w (r_j lambda - (M_j lambda) beta)
            let x = row[1];
            let y = row[2];
            let (dx_row, dy_row) = derivative_rows(x, y, order);
            let mut dx = 0.0;
            let mut dy = 0.0;
            for c in 0..terms {
                let g = w * (residual * lambda[c] - m_lambda * beta[c]);
                dx += g * dx_row[c];
                dy += g * dy_row[c];
            }
            d_points.push(Vec3::new(dx, dy, w * m_lambda));
        }
        WlsGrad {
            points: d_points,
            weights: d_weights,
        }
    }
}

/// Backpropagates through `v / ||v||`.
pub(crate) fn normalize_backward(v: &Vec3, d_out: &Vec3) -> Vec3 {
    let norm = v.norm();
    let n = v / norm;
    (d_out - n * n.dot(d_out)) / norm
}
