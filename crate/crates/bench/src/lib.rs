//! Fixtures shared by the benchmarks.

use normjet::synth::{add_gaussian_noise, gen_shape, ShapeKind, ShapeSpec};
use normjet::PointCloud;

/// A lightly noisy saddle with `count` points.
pub fn saddle(count: usize) -> PointCloud {
    let spec = ShapeSpec {
        kind: ShapeKind::HeightField {
            coefficients: vec![0.0, 0.0, 0.0, 0.5, 0.0, -0.5],
        },
        count,
        seed: 1,
    };
    add_gaussian_noise(&gen_shape(&spec).expect("valid shape"), 0.005, 2).expect("valid sigma")
}
