//! Turning labelled clouds into training patches.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainSample;
use crate::error::{Error, Result};
use crate::geometry::{extract_patch, PointCloud};
use crate::knn::NeighborIndex;

/// Patches of size `r` around each of `centers`.
pub fn samples_at(
    cloud: &PointCloud,
    index: &NeighborIndex,
    r: usize,
    centers: &[usize],
) -> Result<Vec<TrainSample>> {
    let gt = cloud.gt_normals().ok_or_else(|| {
        Error::invalid(format!(
            "cloud '{}' has no ground-truth normals",
            cloud.name()
        ))
    })?;
    centers
        .iter()
        .map(|&c| {
            let patch = extract_patch(cloud, index, c, r)?;
            Ok(TrainSample::from_patch(&patch, &gt[c]))
        })
        .collect()
}

/// `count` patches around distinct centers drawn from a seeded stream.
/// Centers whose patch is degenerate are skipped.
pub fn random_samples(
    cloud: &PointCloud,
    r: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    let index = NeighborIndex::build(cloud)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cloud.len();
    let centers = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
    let mut out = Vec::with_capacity(centers.len());
    for c in centers {
        match samples_at(cloud, &index, r, &[c]) {
            Ok(mut s) => out.append(&mut s),
            Err(Error::DegeneratePatch(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
