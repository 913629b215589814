//! Point clouds, local patches and PCA alignment.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::knn::NeighborIndex;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const UNIT_TOLERANCE: f64 = 1e-6;

/// A set of 3D positions with optional ground-truth unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    gt_normals: Option<Vec<Vec3>>,
    name: String,
}

impl PointCloud {
    pub fn new(name: impl Into<String>, points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid(
                "point cloud must contain at least one point",
            ));
        }
        if let Some((i, _)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::invalid(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(PointCloud {
            points,
            gt_normals: None,
            name: name.into(),
        })
    }

    pub fn with_normals(
        name: impl Into<String>,
        points: Vec<Vec3>,
        normals: Vec<Vec3>,
    ) -> Result<Self> {
        let mut cloud = Self::new(name, points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<()> {
        if normals.len() != self.points.len() {
            return Err(Error::invalid(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        if let Some((i, n)) = normals
            .iter()
            .enumerate()
            .find(|(_, n)| (n.norm() - 1.0).abs() > UNIT_TOLERANCE)
        {
            return Err(Error::invalid(format!(
                "normal {i} has norm {} (expected unit length)",
                n.norm()
            )));
        }
        self.gt_normals = Some(normals);
        Ok(())
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn gt_normals(&self) -> Option<&[Vec3]> {
        self.gt_normals.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points whose mask entry is true, with their normals.
    pub(crate) fn retain(&self, keep: &[bool]) -> Result<Self> {
        let points: Vec<Vec3> = self
            .points
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(p, _)| *p)
            .collect();
        let mut out = PointCloud::new(self.name.clone(), points)?;
        if let Some(normals) = &self.gt_normals {
            out.gt_normals = Some(
                normals
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(n, _)| *n)
                    .collect(),
            );
        }
        Ok(out)
    }

    pub(crate) fn with_points(&self, points: Vec<Vec3>) -> Self {
        assert_eq!(points.len(), self.points.len());
        PointCloud {
            points,
            gt_normals: self.gt_normals.clone(),
            name: self.name.clone(),
        }
    }
}

/// Length of the diagonal of the axis-aligned bounding box.
pub fn bounding_box_diagonal(points: &[Vec3]) -> f64 {
    let Some(first) = points.first() else {
        return 0.0;
    };
    let (lo, hi) = points
        .iter()
        .fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    (hi - lo).norm()
}

/// Neighborhood of one query point, normalized into a PCA-aligned frame.
///
/// `world = translation + scale * to_world_rotation * local`.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center_index: usize,
    pub neighbor_indices: Vec<usize>,
    pub local_points: Vec<Vec3>,
    pub to_world_rotation: Mat3,
    pub scale: f64,
    pub translation: Vec3,
}

impl Patch {
    pub fn len(&self) -> usize {
        self.local_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_points.is_empty()
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.translation + self.scale * (self.to_world_rotation * local)
    }

    /// Rotates a direction from the local frame into the world frame.
    pub fn direction_to_world(&self, local: &Vec3) -> Vec3 {
        self.to_world_rotation * local
    }

    pub fn direction_to_local(&self, world: &Vec3) -> Vec3 {
        self.to_world_rotation.transpose() * world
    }
}

/// Gathers the `r` nearest neighbors of `center`, centers them on the query
/// point, scales the farthest to unit distance and PCA-aligns the result.
pub fn extract_patch(
    cloud: &PointCloud,
    index: &NeighborIndex,
    center: usize,
    r: usize,
) -> Result<Patch> {
    if r > cloud.len() {
        return Err(Error::invalid(format!(
            "patch size {r} exceeds cloud size {}",
            cloud.len()
        )));
    }
    let neighbor_indices = index.query(center, r)?;
    patch_from_indices(cloud.points(), center, neighbor_indices)
}

/// Builds a patch from an explicit neighbor list whose first entry is the center.
pub fn patch_from_indices(
    points: &[Vec3],
    center: usize,
    neighbor_indices: Vec<usize>,
) -> Result<Patch> {
    if neighbor_indices.len() < 3 {
        return Err(Error::invalid(format!(
            "patch needs at least 3 points, got {}",
            neighbor_indices.len()
        )));
    }
    if neighbor_indices[0] != center {
        return Err(Error::invalid("first neighbor must be the patch center"));
    }
    let translation = points[center];
    let centered: Vec<Vec3> = neighbor_indices
        .iter()
        .map(|&i| points[i] - translation)
        .collect();
    let scale = centered.iter().map(|p| p.norm()).fold(0.0, f64::max);
    if scale <= 0.0 || !scale.is_finite() {
        return Err(Error::DegeneratePatch(format!(
            "all {} neighbors of point {center} coincide",
            neighbor_indices.len()
        )));
    }
    let scaled: Vec<Vec3> = centered.iter().map(|p| p / scale).collect();
    let (mut local_points, to_world_rotation) = pca_align(&scaled)?;
    local_points[0] = Vec3::zeros();
    Ok(Patch {
        center_index: center,
        neighbor_indices,
        local_points,
        to_world_rotation,
        scale,
        translation,
    })
}

/// Sign-fixes a direction so its first non-zero component along the given
/// axis priority is positive.
fn orient(v: Vec3, priority: [usize; 3]) -> Vec3 {
    for axis in priority {
        if v[axis] > 0.0 {
            return v;
        }
        if v[axis] < 0.0 {
            return -v;
        }
    }
    v
}

/// Principal axes of a point set, ordered by descending variance.
///
/// Returns the points expressed in that frame (`R^T p`) and the rotation
/// `R` whose columns are the axes. The third axis is oriented towards +z,
/// the first towards +x, and the second completes a right-handed frame.
pub fn pca_align(points: &[Vec3]) -> Result<(Vec<Vec3>, Mat3)> {
    if points.len() < 3 {
        return Err(Error::DegeneratePatch(format!(
            "PCA needs at least 3 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let largest = eigen.eigenvalues[order[0]];
    let middle = eigen.eigenvalues[order[1]];
    if largest <= 0.0 || middle <= 1e-12 * largest {
        return Err(Error::DegeneratePatch(
            "covariance has rank below 2 (coincident or collinear points)".into(),
        ));
    }
    let first = orient(eigen.eigenvectors.column(order[0]).normalize(), [0, 1, 2]);
    let third = orient(eigen.eigenvectors.column(order[2]).normalize(), [2, 1, 0]);
    // Re-orthogonalize the first axis against the third before completing.
    let first = (first - third * third.dot(&first)).normalize();
    let second = third.cross(&first);
    let rotation = Mat3::from_columns(&[first, second, third]);
    let rt = rotation.transpose();
    let aligned = points.iter().map(|p| rt * p).collect();
    Ok((aligned, rotation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Mat3 {
        let axis = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let angle = rng.random_range(-3.0..3.0);
        Rotation3::new(axis.normalize() * angle).into_inner()
    }

    fn planar_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.5..0.5),
                    0.0,
                )
            })
            .collect()
    }

    fn assert_rotation(r: &Mat3) {
        let err = (r.transpose() * r - Mat3::identity()).abs().max();
        assert!(err < 1e-9, "R^T R deviates by {err}");
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bbox_diagonal() {
        let mut cube = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    cube.push(Vec3::new(x, y, z));
                }
            }
        }
        assert!((bounding_box_diagonal(&cube) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(bounding_box_diagonal(&[Vec3::new(4.0, 5.0, 6.0)]), 0.0);
        let pair = [Vec3::zeros(), Vec3::new(3.0, 4.0, 0.0)];
        assert_eq!(bounding_box_diagonal(&pair), 5.0);
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new("e", vec![]).is_err());
        let pts = vec![Vec3::zeros(), Vec3::x()];
        assert!(PointCloud::with_normals("a", pts.clone(), vec![Vec3::z()]).is_err());
        assert!(
            PointCloud::with_normals("b", pts.clone(), vec![Vec3::z(), Vec3::z() * 2.0]).is_err()
        );
        assert!(PointCloud::with_normals("c", pts, vec![Vec3::z(), Vec3::x()]).is_ok());
    }

    #[test]
    fn pca_on_xy_plane_is_identity_frame() {
        // Symmetric grid, wider in x: the covariance is diagonal.
        let pts: Vec<Vec3> = (-3..=3)
            .flat_map(|i| (-2..=2).map(move |j| Vec3::new(i as f64 * 0.3, j as f64 * 0.1, 0.0)))
            .collect();
        let (aligned, r) = pca_align(&pts).unwrap();
        assert!((r - Mat3::identity()).abs().max() < 1e-12);
        assert!(aligned.iter().all(|p| p.z == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = planar_points(&mut rng, 40);
        let (aligned, r) = pca_align(&pts).unwrap();
        assert_rotation(&r);
        assert!((r.column(2) - Vec3::z()).norm() < 1e-12);
        assert!(aligned.iter().all(|p| p.z.abs() < 1e-12));
    }

    #[test]
    fn pca_flattens_rotated_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q = random_rotation(&mut rng);
            let pts: Vec<Vec3> = planar_points(&mut rng, 30).iter().map(|p| q * p).collect();
            let (aligned, r) = pca_align(&pts).unwrap();
            assert_rotation(&r);
            assert!(aligned.iter().all(|p| p.z.abs() < 1e-9));
        }
    }

    #[test]
    fn pca_rejects_collinear() {
        let pts: Vec<Vec3> = (0..10)
            .map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        assert!(matches!(pca_align(&pts), Err(Error::DegeneratePatch(_))));
    }

    #[test]
    fn pca_on_sphere_cap_matches_radial_normal() {
        // Cap around a random axis; analytic normal is the axis itself.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for cap_deg in [5.0f64, 10.0, 15.0] {
            let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
            let q = nalgebra::Rotation3::rotation_between(&Vec3::z(), &axis).unwrap();
            let cos_max = cap_deg.to_radians().cos();
            let pts: Vec<Vec3> = (0..400)
                .map(|_| {
                    let z: f64 = rng.random_range(cos_max..1.0);
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let s = (1.0 - z * z).sqrt();
                    q * Vec3::new(s * phi.cos(), s * phi.sin(), z) - axis
                })
                .collect();
            let (_, r) = pca_align(&pts).unwrap();
            let angle = r.column(2).dot(&axis).abs().min(1.0).acos().to_degrees();
            assert!(angle < 5.0, "cap {cap_deg}: {angle}");
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_rotation(&mut rng);
        let pts: Vec<Vec3> = (0..50)
            .map(|_| {
                q * Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let (_, r1) = pca_align(&pts).unwrap();
        let negated: Vec<Vec3> = pts.iter().map(|p| -p).collect();
        let (_, r2) = pca_align(&negated).unwrap();
        // Covariance is unchanged by negation, so the frames must agree.
        assert!((r1 - r2).abs().max() < 1e-9);
        assert!(r1.column(2).z >= 0.0);
        assert!(r1.column(0).x >= 0.0);
    }

    fn grid_cloud(z: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..15 {
            for j in 0..15 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.13, z));
            }
        }
        PointCloud::new("grid", pts).unwrap()
    }

    #[test]
    fn planar_patch_has_zero_heights() {
        let cloud = grid_cloud(5.0);
        let index = NeighborIndex::build(&cloud).unwrap();
        let patch = extract_patch(&cloud, &index, 100, 30).unwrap();
        assert!(patch.local_points.iter().all(|p| p.z.abs() < 1e-9));
        assert_eq!(patch.local_points[0], Vec3::zeros());
        let max = patch
            .local_points
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        assert!((max - 1.0).abs() < 1e-9);
        assert_rotation(&patch.to_world_rotation);
    }

    #[test]
    fn coincident_patch_is_degenerate() {
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 8];
        let cloud = PointCloud::new("dup", pts).unwrap();
        let index = NeighborIndex::build(&cloud).unwrap();
        assert!(matches!(
            extract_patch(&cloud, &index, 0, 5),
            Err(Error::DegeneratePatch(_))
        ));
    }

    #[test]
    fn patch_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..300)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect();
        let cloud = PointCloud::new("rand", pts).unwrap();
        let index = NeighborIndex::build(&cloud).unwrap();
        for center in (0..300).step_by(13) {
            let patch = extract_patch(&cloud, &index, center, 24).unwrap();
            for (local, &i) in patch.local_points.iter().zip(&patch.neighbor_indices) {
                let back = patch.to_world(local);
                assert!((back - cloud.points()[i]).norm() < 1e-9);
            }
            let max = patch
                .local_points
                .iter()
                .map(|p| p.norm())
                .fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-9);
            assert_rotation(&patch.to_world_rotation);
        }
    }

    #[test]
    fn patch_size_larger_than_cloud() {
        let cloud = grid_cloud(0.0);
        let index = NeighborIndex::build(&cloud).unwrap();
        assert!(extract_patch(&cloud, &index, 0, 1000).is_err());
    }
}
