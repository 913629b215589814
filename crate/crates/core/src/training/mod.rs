//! Objectives, the mini-batch optimizer, gradient verification and
//! checkpoints.

pub mod checkpoint;
pub mod corpus;
pub mod gradcheck;
pub mod losses;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Patch, Vec3};
use crate::jet::jet_term_count;
use crate::neural::{
    backward, forward_local, Architecture, ForwardConfig, InitMode, ModelParams, OutputGrads,
};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_patches, grad_check_with, ArrayCheck, GradCheckReport};
pub use losses::{loss_center, loss_neighbors, loss_reg, loss_total, LossParts};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub k: usize,
    pub patch_size: usize,
    pub order: usize,
    pub m: usize,
    pub force_center: bool,
    pub seed: u64,
    pub arch: Architecture,
    pub init: InitMode,
    /// Subnetworks kept at their initial values during training.
    pub frozen: Vec<Subnet>,
}

/// The separately trainable parts of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Subnet {
    Qst,
    Features,
    Head,
    Update,
}

impl Subnet {
    pub const ALL: [Subnet; 4] = [Subnet::Qst, Subnet::Features, Subnet::Head, Subnet::Update];

    pub fn name(self) -> &'static str {
        match self {
            Subnet::Qst => "qst",
            Subnet::Features => "features",
            Subnet::Head => "head",
            Subnet::Update => "update",
        }
    }

    fn owns(self, array_name: &str) -> bool {
        array_name.split('.').next() == Some(self.name())
    }
}

impl std::str::FromStr for Subnet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subnet::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown subnetwork '{s}' (qst, features, head, update)"
                ))
            })
    }
}

/// Parses a comma-separated subnetwork list; `none` or an empty string
/// means nothing is frozen.
pub fn parse_subnets(list: &str) -> Result<Vec<Subnet>> {
    let list = list.trim();
    if list.is_empty() || list == "none" {
        return Ok(Vec::new());
    }
    let mut out = list
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<Vec<Subnet>>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

pub fn format_subnets(list: &[Subnet]) -> String {
    if list.is_empty() {
        return "none".into();
    }
    list.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
}

/// One flag per flat parameter: true when training may change it.
fn trainable_mask(params: &ModelParams, frozen: &[Subnet]) -> Vec<bool> {
    params
        .arrays()
        .into_iter()
        .flat_map(|a| {
            let free = !frozen.iter().any(|s| s.owns(&a.name));
            std::iter::repeat_n(free, a.values.len())
        })
        .collect()
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 48,
            learning_rate: 1e-3,
            epochs: 10,
            alpha1: 3e-4,
            alpha2: 0.1,
            k: 50,
            patch_size: 256,
            order: 3,
            m: 8,
            force_center: false,
            seed: 0,
            arch: Architecture::default(),
            init: InitMode::Standard,
            frozen: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn forward(&self) -> ForwardConfig {
        ForwardConfig {
            k: self.k,
            order: self.order,
            m: self.m,
            force_center: self.force_center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be a positive real"));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if self.patch_size < 3 {
            return Err(Error::invalid("patch size must be at least 3"));
        }
        self.forward().validate(self.patch_size)?;
        let terms = jet_term_count(self.order);
        if self.k < terms {
            return Err(Error::invalid(format!(
                "k = {} is below the {terms} coefficients of an order-{} jet",
                self.k, self.order
            )));
        }
        self.arch.validate()
    }
}

/// One aligned patch and its ground-truth normal in the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub local_points: Vec<Vec3>,
    pub gt_normal: Vec3,
}

impl TrainSample {
    pub fn from_patch(patch: &Patch, gt_world: &Vec3) -> Self {
        TrainSample {
            local_points: patch.local_points.clone(),
            gt_normal: patch.direction_to_local(gt_world),
        }
    }
}

/// Loss parts of one sample and the gradient of their weighted total.
pub fn sample_gradient(
    params: &ModelParams,
    sample: &TrainSample,
    forward: &ForwardConfig,
    alpha1: f64,
    alpha2: f64,
) -> Result<(LossParts, ModelParams)> {
    let out = forward_local(params, &sample.local_points, forward)?;
    let (center, d_normal) = loss_center(&out.normal_local, &sample.gt_normal);
    let (neighbors, d_w, d_n) = loss_neighbors(
        &out.selection.weights,
        &sample.gt_normal,
        &out.neighbor_normals,
    );
    let (reg, d_a) = loss_reg(&out.rotation);
    let seed = OutputGrads {
        normal_local: d_normal,
        neighbor_normals: d_n.into_iter().map(|v| v * alpha1).collect(),
        selected_weights: d_w.into_iter().map(|v| v * alpha1).collect(),
        rotation: d_a * alpha2,
    };
    Ok((
        LossParts {
            center,
            neighbors,
            reg,
        },
        backward(params, &out, &seed),
    ))
}

pub fn sample_loss(
    params: &ModelParams,
    sample: &TrainSample,
    config: &TrainConfig,
) -> Result<LossParts> {
    let out = forward_local(params, &sample.local_points, &config.forward())?;
    Ok(LossParts {
        center: loss_center(&out.normal_local, &sample.gt_normal).0,
        neighbors: loss_neighbors(
            &out.selection.weights,
            &sample.gt_normal,
            &out.neighbor_normals,
        )
        .0,
        reg: loss_reg(&out.rotation).0,
    })
}

/// Adaptive-moment optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_center: f64,
    /// Samples whose forward pass failed (for example an underdetermined fit).
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochRecord>,
}

pub fn train(config: &TrainConfig, corpus: &[TrainSample]) -> Result<TrainOutcome> {
    config.validate()?;
    let params = ModelParams::init(&config.arch, config.seed, config.init)?;
    train_from(config, params, corpus, |_| {})
}

/// Trains from given parameters, calling `on_epoch` after every epoch.
pub fn train_from(
    config: &TrainConfig,
    mut params: ModelParams,
    corpus: &[TrainSample],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    if let Some(s) = corpus
        .iter()
        .find(|s| s.local_points.len() != config.patch_size)
    {
        return Err(Error::invalid(format!(
            "sample has {} points, expected patch size {}",
            s.local_points.len(),
            config.patch_size
        )));
    }
    let forward = config.forward();
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let trainable = trainable_mask(&params, &config.frozen);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut center_sum = 0.0;
        let mut counted = 0usize;
        let mut skipped = 0usize;
        for (batch, ids) in order.chunks(config.batch_size).enumerate() {
            let results: Vec<Result<(LossParts, ModelParams)>> = ids
                .par_iter()
                .map(|&i| {
                    sample_gradient(&params, &corpus[i], &forward, config.alpha1, config.alpha2)
                })
                .collect();
            let mut grad = vec![0.0; params.len()];
            let mut used = 0usize;
            for result in results {
                let (parts, g) = match result {
                    Ok(v) => v,
                    Err(Error::Underdetermined { .. }) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => {
                        return Err(Error::Diverged {
                            epoch,
                            batch,
                            message: e.to_string(),
                        })
                    }
                };
                let total = parts.total(config.alpha1, config.alpha2);
                if !total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch,
                        message: format!("loss became {total}"),
                    });
                }
                loss_sum += total;
                center_sum += parts.center;
                counted += 1;
                used += 1;
                for (acc, v) in grad.iter_mut().zip(g.to_flat()) {
                    *acc += v;
                }
            }
            if used == 0 {
                continue;
            }
            let scale = 1.0 / used as f64;
            for (v, &free) in grad.iter_mut().zip(&trainable) {
                *v = if free { *v * scale } else { 0.0 };
            }
            if grad.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    batch,
                    message: "non-finite gradient".into(),
                });
            }
            let mut flat = params.to_flat();
            adam.update(&mut flat, &grad);
            params.set_flat(&flat);
        }
        if counted == 0 {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                message: "no sample produced a valid forward pass".into(),
            });
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / counted as f64,
            mean_center: center_sum / counted as f64,
            skipped,
        };
        on_epoch(&record);
        trace.push(record);
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            params,
            config: config.clone(),
            epoch: config.epochs,
        },
        trace,
    })
}

/// The loss trace as `epoch,mean_loss` CSV.
pub fn trace_csv(trace: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for r in trace {
        out.push_str(&format!("{},{}\n", r.epoch, r.mean_loss));
    }
    out
}
