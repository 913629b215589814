//! Surface normal estimation for point clouds by weighted n-jet fitting.
//!
//! A small point network scores every point of a local patch, the `k`
//! highest-scoring points are kept, nudged by a learned displacement field,
//! and a weighted least-squares height function is fitted to them. The
//! fitted surface's normal at the patch origin is the estimate. Classic PCA
//! and unweighted jet estimators share the same patch machinery.

pub mod error;
pub mod estimate;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod jet;
pub mod knn;
pub mod neural;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use estimate::{Estimator, Method};
pub use evaluation::{EvalReport, Subset};
pub use geometry::{
    bounding_box_diagonal, extract_patch, pca_align, Mat3, Patch, PointCloud, Vec3,
};
pub use jet::{
    build_vandermonde, jet_term_count, ls_fit, normal_from_beta, wls_fit, FitDiagnostics, JetModel,
};
pub use knn::NeighborIndex;
pub use neural::{Architecture, ForwardConfig, InitMode, ModelParams};
pub use training::{Checkpoint, TrainConfig, TrainSample};
