//! The learned weighting network and its hand-written reverse pass.

pub mod layers;
pub mod params;
pub mod pipeline;
pub mod qst;
pub mod select;
pub mod update;

pub use params::{Architecture, InitMode, ModelParams, NamedArray};
pub use pipeline::{
    backward, backward_into, forward_local, forward_pipeline, point_features, weight_head,
    ForwardConfig, OutputGrads, PipelineOutput, Tape,
};
pub use qst::{qst_forward, quaternion_to_matrix};
pub use select::{clamp_weight, top_k_select, Selection, WeightVector};
pub use update::point_update;
