//! Trainable parameters of the weighting network.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Linear, Mlp};
use crate::error::{Error, Result};

/// Hidden widths of every subnetwork.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Point-wise layers of the pose transformer, before pooling.
    pub qst: Vec<usize>,
    /// Point-wise feature layers; the last width is the global feature size.
    pub features: Vec<usize>,
    /// Hidden layers of the weight head; a final scalar layer is appended.
    pub head: Vec<usize>,
    /// Point-wise layers of the displacement network's own features.
    pub update: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            qst: vec![64, 128],
            features: vec![64, 64, 128, 256],
            head: vec![128, 64],
            update: vec![32, 32],
        }
    }
}

impl Architecture {
    /// Narrow variant for gradient checks and quick experiments.
    pub fn tiny() -> Self {
        Architecture {
            qst: vec![8, 8],
            features: vec![8, 8, 12, 16],
            head: vec![12, 8],
            update: vec![6, 6],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, widths) in [
            ("qst", &self.qst),
            ("features", &self.features),
            ("head", &self.head),
            ("update", &self.update),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::invalid(format!(
                    "{name} widths must be a non-empty list of positive sizes"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Random layers, with the pose and displacement outputs zeroed so the
    /// pipeline starts from the identity pose and no displacement.
    Standard,
    /// As `Standard`, but the weight head output is zeroed as well, giving
    /// uniform weights: the pipeline reduces to a plain jet fit.
    Baseline,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "random" => Ok(InitMode::Standard),
            "baseline" | "zero" => Ok(InitMode::Baseline),
            other => Err(Error::invalid(format!("unknown init mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub qst_points: Mlp,
    pub qst_out: Linear,
    pub features: Mlp,
    pub head: Mlp,
    pub update_features: Mlp,
    pub update_edge: Linear,
}

fn mlp_layers<'a>(prefix: &str, mlp: &'a Mlp) -> Vec<(String, &'a Linear)> {
    mlp.layers
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("{prefix}.{i}"), l))
        .collect()
}

fn chain(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<usize> {
    let mut w = vec![input];
    w.extend_from_slice(hidden);
    w.extend(output);
    w
}

impl ModelParams {
    pub fn init(arch: &Architecture, seed: u64, mode: InitMode) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let qst_points = Mlp::new(&chain(3, &arch.qst, None), true, &mut rng);
        let qst_out = Linear::zeros(*arch.qst.last().unwrap(), 4);
        let features = Mlp::new(&chain(3, &arch.features, None), true, &mut rng);
        let global = *arch.features.last().unwrap();
        let mut head = Mlp::new(&chain(2 * global, &arch.head, Some(1)), false, &mut rng);
        if mode == InitMode::Baseline {
            let last = head.layers.last_mut().unwrap();
            *last = last.zeros_like();
        }
        let update_features = Mlp::new(&chain(3, &arch.update, None), true, &mut rng);
        let update_edge = Linear::zeros(*arch.update.last().unwrap(), 1);
        Ok(ModelParams {
            arch: arch.clone(),
            qst_points,
            qst_out,
            features,
            head,
            update_features,
            update_edge,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            arch: self.arch.clone(),
            qst_points: self.qst_points.zeros_like(),
            qst_out: self.qst_out.zeros_like(),
            features: self.features.zeros_like(),
            head: self.head.zeros_like(),
            update_features: self.update_features.zeros_like(),
            update_edge: self.update_edge.zeros_like(),
        }
    }

    fn linears(&self) -> Vec<(String, &Linear)> {
        let mut out = mlp_layers("qst.points", &self.qst_points);
        out.push(("qst.out".into(), &self.qst_out));
        out.extend(mlp_layers("features", &self.features));
        out.extend(mlp_layers("head", &self.head));
        out.extend(mlp_layers("update.features", &self.update_features));
        out.push(("update.edge".into(), &self.update_edge));
        out
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out: Vec<&mut Linear> = Vec::new();
        out.extend(self.qst_points.layers.iter_mut());
        out.push(&mut self.qst_out);
        out.extend(self.features.layers.iter_mut());
        out.extend(self.head.layers.iter_mut());
        out.extend(self.update_features.layers.iter_mut());
        out.push(&mut self.update_edge);
        out
    }

    /// Every parameter array as `(name, shape, column-major values)`.
    pub fn arrays(&self) -> Vec<NamedArray<'_>> {
        self.linears()
            .into_iter()
            .flat_map(|(prefix, l)| {
                [
                    NamedArray {
                        name: format!("{prefix}.weight"),
                        shape: (l.weight.nrows(), l.weight.ncols()),
                        values: l.weight.as_slice(),
                    },
                    NamedArray {
                        name: format!("{prefix}.bias"),
                        shape: (l.bias.len(), 1),
                        values: l.bias.as_slice(),
                    },
                ]
            })
            .collect()
    }

    /// Mutable views in the same order as [`ModelParams::arrays`].
    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.linears_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.arrays()
            .iter()
            .flat_map(|a| a.values.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len());
        let mut offset = 0;
        for a in self.arrays_mut() {
            a.copy_from_slice(&flat[offset..offset + a.len()]);
            offset += a.len();
        }
    }

    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        let src = other.to_flat();
        let mut offset = 0;
        for a in self.arrays_mut() {
            for v in a.iter_mut() {
                *v += scale * src[offset];
                offset += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays()
            .iter()
            .all(|a| a.values.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray<'a> {
    pub name: String,
    pub shape: (usize, usize),
    pub values: &'a [f64],
}
