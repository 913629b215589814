//! Exact k-nearest-neighbor search over a static point set.
//!
//! Results are ordered by `(squared distance, index)`, so equal distances
//! resolve to the smaller point index. The tree prunes with the single
//! splitting-plane bound, which is exact under floating-point rounding: a
//! point on the far side of a split can never report a squared distance
//! smaller than the squared offset to the plane.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree answering exact kNN queries.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub(crate) fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

impl NeighborIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points().to_vec())
    }

    pub fn from_points(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot index an empty point set"));
        }
        let mut index = NeighborIndex {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        let n = index.points.len();
        index.build_node(0, n);
        Ok(index)
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        (hi - lo).imax()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// The `r` nearest points to point `query_index`, the query itself first.
    pub fn query(&self, query_index: usize, r: usize) -> Result<Vec<usize>> {
        if query_index >= self.points.len() {
            return Err(Error::invalid(format!(
                "query index {query_index} out of range for {} points",
                self.points.len()
            )));
        }
        let found = self.query_point(&self.points[query_index], r)?;
        Ok(query_first(found, query_index))
    }

    /// The `r` nearest points to an arbitrary position.
    pub fn query_point(&self, query: &Vec3, r: usize) -> Result<Vec<usize>> {
        if r == 0 || r > self.points.len() {
            return Err(Error::invalid(format!(
                "neighbor count {r} must be in 1..={}",
                self.points.len()
            )));
        }
        let mut heap = BinaryHeap::with_capacity(r + 1);
        self.search(0, query, r, &mut heap);
        let mut out = heap.into_sorted_vec();
        out.truncate(r);
        Ok(out.into_iter().map(|c| c.index).collect())
    }

    fn search(&self, node: usize, query: &Vec3, r: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &index in &self.order[start..end] {
                    let cand = Candidate {
                        dist2: dist2(query, &self.points[index]),
                        index,
                    };
                    if heap.len() < r {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let offset = query[axis] - value;
                let (near, far) = if offset < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, r, heap);
                let bound = offset * offset;
                // Points equal to the split value may sit on either side.
                if heap.len() < r || bound <= heap.peek().expect("heap is full").dist2 {
                    self.search(far, query, r, heap);
                }
            }
        }
    }
}

/// Reference kNN by exhaustive scan, with the same ordering rule as the tree.
pub fn brute_force_knn(points: &[Vec3], query_index: usize, r: usize) -> Vec<usize> {
    let q = points[query_index];
    let mut all: Vec<Candidate> = points
        .iter()
        .enumerate()
        .map(|(index, p)| Candidate {
            dist2: dist2(&q, p),
            index,
        })
        .collect();
    all.sort();
    all.truncate(r);
    query_first(all.into_iter().map(|c| c.index).collect(), query_index)
}

/// Duplicates of the query point can precede it; move the query to the front.
fn query_first(mut found: Vec<usize>, query_index: usize) -> Vec<usize> {
    match found.iter().position(|&i| i == query_index) {
        Some(0) => {}
        Some(pos) => found[..=pos].rotate_right(1),
        None => {
            found.pop();
            found.insert(0, query_index);
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn singleton() {
        let index = NeighborIndex::from_points(vec![Vec3::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(index.len(), 1);
        assert_eq!(index.query(0, 1).unwrap(), vec![0]);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(
            NeighborIndex::from_points(vec![]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn collinear_ordering() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let index = NeighborIndex::from_points(pts).unwrap();
        assert_eq!(index.query(0, 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn square_corner_skips_diagonal() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
        ];
        let index = NeighborIndex::from_points(pts).unwrap();
        assert_eq!(index.query(0, 3).unwrap(), vec![0, 1, 3]);
    }

    #[test]
    fn r_one_is_query() {
        let pts = random_points(50, 3);
        let index = NeighborIndex::from_points(pts).unwrap();
        for i in 0..50 {
            assert_eq!(index.query(i, 1).unwrap(), vec![i]);
        }
    }

    #[test]
    fn r_too_large() {
        let index = NeighborIndex::from_points(random_points(5, 1)).unwrap();
        assert!(index.query(0, 6).is_err());
        assert!(index.query(0, 0).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        // Lattice points have many equal distances.
        let mut pts = Vec::new();
        for x in 0..6 {
            for y in 0..6 {
                for z in 0..3 {
                    pts.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let index = NeighborIndex::from_points(pts.clone()).unwrap();
        for q in 0..pts.len() {
            for r in [1, 5, 7, 19, 40] {
                assert_eq!(index.query(q, r).unwrap(), brute_force_knn(&pts, q, r));
            }
        }
    }

    #[test]
    fn matches_brute_force_500() {
        let pts = random_points(500, 11);
        let index = NeighborIndex::from_points(pts.clone()).unwrap();
        for q in 0..pts.len() {
            assert_eq!(index.query(q, 16).unwrap(), brute_force_knn(&pts, q, 16));
        }
        for q in (0..pts.len()).step_by(7) {
            assert_eq!(index.query(q, 64).unwrap(), brute_force_knn(&pts, q, 64));
        }
    }

    #[test]
    fn matches_brute_force_many_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = rng.random_range(1..=1000);
            let pts = random_points(n, 1000 + trial);
            let index = NeighborIndex::from_points(pts.clone()).unwrap();
            for _ in 0..5 {
                let q = rng.random_range(0..n);
                let r = rng.random_range(1..=n.min(80));
                assert_eq!(index.query(q, r).unwrap(), brute_force_knn(&pts, q, r));
            }
        }
    }
}
