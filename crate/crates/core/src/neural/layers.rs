//! Dense layers applied row-wise to a batch of points, with cached
//! activations for the backward pass.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Affine map `x -> x W + b` on row vectors. `weight` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: DMatrix::zeros(input, output),
            bias: DVector::zeros(output),
        }
    }

    /// Uniform fan-in scaled initialisation, zero bias.
    pub fn he_uniform(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Linear {
            weight: DMatrix::from_fn(input, output, |_, _| rng.random_range(-bound..bound)),
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * &self.weight;
        add_row(&mut z, &self.bias);
        z
    }

    pub fn zeros_like(&self) -> Self {
        Linear::zeros(self.input_dim(), self.output_dim())
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &DMatrix<f64>, dz: &DMatrix<f64>, grad: &mut Linear) -> DMatrix<f64> {
        grad.weight += x.tr_mul(dz);
        grad.bias += column_sums(dz);
        dz * self.weight.transpose()
    }
}

pub(crate) fn add_row(z: &mut DMatrix<f64>, row: &DVector<f64>) {
    for (c, b) in row.iter().enumerate() {
        z.column_mut(c).add_scalar_mut(*b);
    }
}

pub(crate) fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

/// Stack of linear layers with SiLU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    /// Apply the activation after the final layer as well.
    pub activate_last: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    input: DMatrix<f64>,
    broadcast: Option<DVector<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<DMatrix<f64>>,
    /// Outputs of every layer after activation.
    post: Vec<DMatrix<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().expect("mlp has at least one layer")
    }
}

impl Mlp {
    pub fn new(widths: &[usize], activate_last: bool, rng: &mut impl Rng) -> Self {
        assert!(widths.len() >= 2, "mlp needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| Linear::he_uniform(w[0], w[1], rng))
            .collect();
        Mlp {
            layers,
            activate_last,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Linear::zeros_like).collect(),
            activate_last: self.activate_last,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_last
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> MlpCache {
        self.forward_with_broadcast(x, None)
    }

    /// Forward pass where every row of `x` is implicitly concatenated with
    /// the same `broadcast` vector before the first layer.
    pub fn forward_with_broadcast(
        &self,
        x: &DMatrix<f64>,
        broadcast: Option<&DVector<f64>>,
    ) -> MlpCache {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<DMatrix<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = if i == 0 {
                match broadcast {
                    None => layer.forward(x),
                    Some(g) => {
                        let split = x.ncols();
                        let mut z = x * layer.weight.rows(0, split);
                        let shared = layer.weight.rows(split, g.len()).tr_mul(g) + &layer.bias;
                        add_row(&mut z, &shared);
                        z
                    }
                }
            } else {
                layer.forward(post.last().expect("previous layer"))
            };
            let a = if self.activated(i) {
                z.map(silu)
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(a);
        }
        MlpCache {
            input: x.clone(),
            broadcast: broadcast.cloned(),
            pre,
            post,
        }
    }

    /// Returns `dL/dx`, and `dL/dbroadcast` when the forward pass used one.
    pub fn backward(
        &self,
        cache: &MlpCache,
        d_out: &DMatrix<f64>,
        grad: &mut Mlp,
    ) -> (DMatrix<f64>, Option<DVector<f64>>) {
        let mut d = d_out.clone();
        let mut d_broadcast = None;
        for i in (0..self.layers.len()).rev() {
            if self.activated(i) {
                d.zip_apply(&cache.pre[i], |g, z| *g *= silu_grad(z));
            }
            let layer = &self.layers[i];
            if i > 0 {
                d = layer.backward(&cache.post[i - 1], &d, &mut grad.layers[i]);
                continue;
            }
            match &cache.broadcast {
                None => {
                    d = layer.backward(&cache.input, &d, &mut grad.layers[0]);
                }
                Some(g) => {
                    let split = cache.input.ncols();
                    let dz_sum = column_sums(&d);
                    let top = layer.weight.rows(0, split);
                    let bottom = layer.weight.rows(split, g.len());
                    let gl = &mut grad.layers[0];
                    let mut w_top = gl.weight.rows_mut(0, split);
                    w_top += cache.input.tr_mul(&d);
                    let mut w_bottom = gl.weight.rows_mut(split, g.len());
                    w_bottom += g * dz_sum.transpose();
                    gl.bias += &dz_sum;
                    d_broadcast = Some(bottom * &dz_sum);
                    d = &d * top.transpose();
                }
            }
        }
        (d, d_broadcast)
    }
}

/// Column-wise maximum over rows, with the winning row of each column.
pub fn max_pool(x: &DMatrix<f64>) -> (DVector<f64>, Vec<usize>) {
    let mut values = DVector::zeros(x.ncols());
    let mut argmax = Vec::with_capacity(x.ncols());
    for (c, col) in x.column_iter().enumerate() {
        let (mut best, mut at) = (f64::NEG_INFINITY, 0);
        for (r, &v) in col.iter().enumerate() {
            if v > best {
                best = v;
                at = r;
            }
        }
        values[c] = best;
        argmax.push(at);
    }
    (values, argmax)
}

/// Routes a pooled gradient back to the winning rows.
pub fn max_pool_backward(rows: usize, argmax: &[usize], d_pool: &DVector<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(rows, argmax.len());
    for (c, &r) in argmax.iter().enumerate() {
        d[(r, c)] = d_pool[c];
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_loss(out: &DMatrix<f64>, seed: &DMatrix<f64>) -> f64 {
        out.component_mul(seed).sum()
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[5, 4, 3], false, &mut rng);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let seed = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let cache = mlp.forward_with_broadcast(&x, Some(&g));
        let mut grad = mlp.zeros_like();
        let (dx, dg) = mlp.backward(&cache, &seed, &mut grad);
        let dg = dg.unwrap();
        let h = 1e-6;
        let eval = |m: &Mlp, x: &DMatrix<f64>, g: &DVector<f64>| {
            scalar_loss(m.forward_with_broadcast(x, Some(g)).output(), &seed)
        };
        for l in 0..2 {
            for i in 0..mlp.layers[l].weight.len() {
                let mut p = mlp.clone();
                p.layers[l].weight[i] += h;
                let mut m = mlp.clone();
                m.layers[l].weight[i] -= h;
                let fd = (eval(&p, &x, &g) - eval(&m, &x, &g)) / (2.0 * h);
                assert!((fd - grad.layers[l].weight[i]).abs() < 1e-7);
            }
            for i in 0..mlp.layers[l].bias.len() {
                let mut p = mlp.clone();
                p.layers[l].bias[i] += h;
                let mut m = mlp.clone();
                m.layers[l].bias[i] -= h;
                let fd = (eval(&p, &x, &g) - eval(&m, &x, &g)) / (2.0 * h);
                assert!((fd - grad.layers[l].bias[i]).abs() < 1e-7);
            }
        }
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (eval(&mlp, &p, &g) - eval(&mlp, &m, &g)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        for i in 0..g.len() {
            let mut p = g.clone();
            p[i] += h;
            let mut m = g.clone();
            m[i] -= h;
            let fd = (eval(&mlp, &x, &p) - eval(&mlp, &x, &m)) / (2.0 * h);
            assert!((fd - dg[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn broadcast_equals_explicit_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[5, 4, 1], true, &mut rng);
        let x = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-1.0..1.0));
        let g = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let concat = DMatrix::from_fn(7, 5, |r, c| if c < 3 { x[(r, c)] } else { g[c - 3] });
        let a = mlp.forward_with_broadcast(&x, Some(&g));
        let b = mlp.forward(&concat);
        assert!((a.output() - b.output()).abs().max() < 1e-12);
    }

    #[test]
    fn pooling_picks_column_maxima() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 4.0, -1.0, 2.0, 6.0]);
        let (v, at) = max_pool(&x);
        assert_eq!(v.as_slice(), &[4.0, 6.0]);
        assert_eq!(at, vec![1, 2]);
        let d = max_pool_backward(3, &at, &DVector::from_vec(vec![1.0, 2.0]));
        assert_eq!(d[(1, 0)], 1.0);
        assert_eq!(d[(2, 1)], 2.0);
        assert_eq!(d.sum(), 3.0);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((1.0 - sigmoid(20.0)) < 1e-8);
    }
}
