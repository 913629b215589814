//! Per-point normal estimators over a whole cloud.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{extract_patch, Patch, PointCloud, Vec3};
use crate::jet::{ls_fit, normal_from_beta};
use crate::knn::NeighborIndex;
use crate::neural::{forward_pipeline, ForwardConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Smallest-variance axis of the neighborhood.
    Pca,
    /// Unweighted n-jet fit to every patch point.
    Jet,
    /// The learned weighting pipeline.
    Learned,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(Method::Pca),
            "jet" => Ok(Method::Jet),
            "learned" => Ok(Method::Learned),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (pca, jet, learned)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Estimator {
    Pca {
        patch_size: usize,
    },
    Jet {
        patch_size: usize,
        order: usize,
    },
    Learned {
        patch_size: usize,
        params: Box<ModelParams>,
        forward: ForwardConfig,
    },
}

impl Estimator {
    pub fn patch_size(&self) -> usize {
        match self {
            Estimator::Pca { patch_size }
            | Estimator::Jet { patch_size, .. }
            | Estimator::Learned { patch_size, .. } => *patch_size,
        }
    }

    pub fn validate(&self, cloud_len: usize) -> Result<()> {
        let r = self.patch_size();
        if r < 3 || r > cloud_len {
            return Err(Error::invalid(format!(
                "patch size {r} must be in 3..={cloud_len} for this cloud"
            )));
        }
        match self {
            Estimator::Pca { .. } => Ok(()),
            Estimator::Jet { order, .. } => {
                if !(1..=4).contains(order) {
                    return Err(Error::invalid(format!(
                        "jet order {order} must be in 1..=4"
                    )));
                }
                Ok(())
            }
            Estimator::Learned { forward, .. } => forward.validate(r),
        }
    }

    /// World-frame normal of one aligned patch.
    pub fn estimate_patch(&self, patch: &Patch) -> Result<Vec3> {
        match self {
            Estimator::Pca { .. } => Ok(patch.direction_to_world(&Vec3::z())),
            Estimator::Jet { order, .. } => {
                let (model, _) = ls_fit(&patch.local_points, *order)?;
                Ok(patch.direction_to_world(&normal_from_beta(&model)))
            }
            Estimator::Learned {
                params, forward, ..
            } => Ok(forward_pipeline(params, patch, forward)?.normal_world),
        }
    }

    /// Normals at `indices`, in the same order, using up to `threads`
    /// workers (`None` keeps the current pool).
    pub fn estimate_indices(
        &self,
        cloud: &PointCloud,
        index: &NeighborIndex,
        indices: &[usize],
        threads: Option<usize>,
    ) -> Result<Vec<Vec3>> {
        self.validate(cloud.len())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= cloud.len()) {
            return Err(Error::invalid(format!(
                "point index {bad} outside a cloud of {} points",
                cloud.len()
            )));
        }
        let run = || {
            indices
                .par_iter()
                .map(|&i| {
                    let patch = extract_patch(cloud, index, i, self.patch_size())?;
                    self.estimate_patch(&patch).map_err(|e| match e {
                        Error::DegeneratePatch(m) => {
                            Error::DegeneratePatch(format!("point {i}: {m}"))
                        }
                        other => other,
                    })
                })
                .collect()
        };
        match threads {
            None => run(),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {n} threads: {e}")))?
                .install(run),
        }
    }

    pub fn estimate_cloud(&self, cloud: &PointCloud, threads: Option<usize>) -> Result<Vec<Vec3>> {
        let index = NeighborIndex::build(cloud)?;
        let all: Vec<usize> = (0..cloud.len()).collect();
        self.estimate_indices(cloud, &index, &all, threads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Architecture, InitMode};
    use crate::synth::{gen_shape, ShapeKind, ShapeSpec};

    fn plane() -> PointCloud {
        gen_shape(&ShapeSpec {
            kind: ShapeKind::HeightField {
                coefficients: vec![0.0; 6],
            },
            count: 400,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn plane_normals_are_vertical() {
        let cloud = plane();
        for est in [
            Estimator::Pca { patch_size: 32 },
            Estimator::Jet {
                patch_size: 32,
                order: 2,
            },
        ] {
            let normals = est.estimate_cloud(&cloud, Some(1)).unwrap();
            assert!(normals.iter().all(|n| n.z.abs() > 1.0 - 1e-9));
        }
    }

    #[test]
    fn thread_count_keeps_order_and_values() {
        let cloud = gen_shape(&ShapeSpec {
            kind: ShapeKind::Sphere { radius: 1.0 },
            count: 300,
            seed: 2,
        })
        .unwrap();
        let est = Estimator::Jet {
            patch_size: 24,
            order: 2,
        };
        let a = est.estimate_cloud(&cloud, Some(1)).unwrap();
        let b = est.estimate_cloud(&cloud, Some(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn learned_baseline_matches_jet() {
        let cloud = gen_shape(&ShapeSpec {
            kind: ShapeKind::Sphere { radius: 1.0 },
            count: 200,
            seed: 3,
        })
        .unwrap();
        let params = ModelParams::init(&Architecture::tiny(), 0, InitMode::Baseline).unwrap();
        let learned = Estimator::Learned {
            patch_size: 30,
            params: Box::new(params),
            forward: ForwardConfig {
                k: 30,
                order: 3,
                m: 0,
                force_center: false,
            },
        };
        let jet = Estimator::Jet {
            patch_size: 30,
            order: 3,
        };
        let a = learned.estimate_cloud(&cloud, Some(1)).unwrap();
        let b = jet.estimate_cloud(&cloud, Some(1)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-10);
        }
    }

    #[test]
    fn invalid_settings() {
        let cloud = plane();
        assert!(Estimator::Pca { patch_size: 401 }
            .estimate_cloud(&cloud, None)
            .is_err());
        assert!(Estimator::Jet {
            patch_size: 32,
            order: 5
        }
        .estimate_cloud(&cloud, None)
        .is_err());
        assert!("hough".parse::<Method>().is_err());
        assert_eq!("jet".parse::<Method>().unwrap(), Method::Jet);
    }
}
