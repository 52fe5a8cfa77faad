//! Static kd-tree over a point cloud.
//!
//! Queries are exact: the returned index sets are identical to a brute-force
//! scan using the same squared-distance comparisons. Radius results come back
//! in ascending index order; k-nearest results in ascending `(distance, index)`
//! order, so equal distances are broken by the lower index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Point3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
}

/// Immutable acceleration structure for radius and k-nearest queries.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    d2: f64,
    index: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then(self.index.cmp(&other.index))
    }
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        Self::from_points(cloud.points())
    }

    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let points: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        let root = if points.is_empty() {
            nodes.push(Node::Leaf { start: 0, end: 0 });
            0
        } else {
            build_node(&points, &mut order, 0, &mut nodes)
        };
        Self {
            points,
            order,
            nodes,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Point3<f64> {
        let p = self.points[i];
        Point3::new(p[0], p[1], p[2])
    }

    /// Indices of all points with `|p - center| <= r`, ascending.
    pub fn radius_neighbors(&self, center: &Point3<f64>, r: f64) -> Vec<usize> {
        let q = [center.x, center.y, center.z];
        let r2 = r * r;
        let mut out = Vec::new();
        if !self.is_empty() {
            self.radius_rec(self.root, &q, r2, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, node: u32, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    if dist2(&self.points[i as usize], q) <= r2 {
                        out.push(i as usize);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let plane2 = diff * diff;
                if diff <= 0.0 || plane2 <= r2 {
                    self.radius_rec(left, q, r2, out);
                }
                if diff >= 0.0 || plane2 <= r2 {
                    self.radius_rec(right, q, r2, out);
                }
            }
        }
    }

    /// The `k` nearest points, nearest first, ties broken by ascending index.
    pub fn knn(&self, point: &Point3<f64>, k: usize) -> Result<Vec<usize>> {
        Ok(self
            .knn_with_distances(point, k)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }

    /// Like [`knn`](Self::knn) but also returns squared distances.
    pub fn knn_with_distances(&self, point: &Point3<f64>, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 || k > self.len() {
            return Err(Error::Argument(format!(
                "k = {k} must lie in 1..={} (cloud size)",
                self.len()
            )));
        }
        let q = [point.x, point.y, point.z];
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(self.root, &q, k, &mut heap);
        let mut v = heap.into_sorted_vec();
        v.truncate(k);
        Ok(v.into_iter().map(|c| (c.index as usize, c.d2)).collect())
    }

    /// Nearest point and its squared distance.
    pub fn nearest(&self, point: &Point3<f64>) -> (usize, f64) {
        // k = 1 is always valid on a non-empty index.
        self.knn_with_distances(point, 1).expect("non-empty index")[0]
    }

    fn knn_rec(&self, node: u32, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let c = Candidate {
                        d2: dist2(&self.points[i as usize], q),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("full heap") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, q, k, heap);
                let plane2 = diff * diff;
                if heap.len() < k || plane2 <= heap.peek().expect("full heap").d2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }
}

fn build_node(points: &[[f64; 3]], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let n = order.len();
    if n <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + n) as u32,
        });
        return (nodes.len() - 1) as u32;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order.iter() {
        let p = &points[i as usize];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis])
    });
    let value = points[order[mid] as usize][axis];
    let me = nodes.len();
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = order.split_at_mut(mid);
    let left = build_node(points, l, offset, nodes);
    let right = build_node(points, r, offset + mid, nodes);
    nodes[me] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    me as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> PointCloud {
        PointCloud::from_slices(&(0..n).map(|i| [i as f64, 0.0, 0.0]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn chain_radius() {
        let c = chain(50);
        let idx = SpatialIndex::build(&c);
        assert_eq!(idx.radius_neighbors(c.point(20), 1.5), vec![19, 20, 21]);
        assert_eq!(idx.radius_neighbors(c.point(20), 0.5), vec![20]);
        assert_eq!(idx.radius_neighbors(c.point(0), 1.0), vec![0, 1]);
    }

    #[test]
    fn knn_bounds_and_ties() {
        let c = chain(40);
        let idx = SpatialIndex::build(&c);
        assert!(idx.knn(c.point(0), 0).is_err());
        assert!(idx.knn(c.point(0), 41).is_err());
        assert_eq!(idx.knn(c.point(0), 40).unwrap().len(), 40);
        assert_eq!(idx.knn(c.point(7), 1).unwrap(), vec![7]);
        // 6 and 8 are equidistant from 7; the lower index comes first.
        assert_eq!(idx.knn(c.point(7), 3).unwrap(), vec![7, 6, 8]);
        assert_eq!(idx.knn(c.point(7), 2).unwrap(), vec![7, 6]);
    }

    #[test]
    fn duplicates_are_all_found() {
        let pts = vec![[0.5, 0.5, 0.5]; 100];
        let c = PointCloud::from_slices(&pts).unwrap();
        let idx = SpatialIndex::build(&c);
        assert_eq!(idx.radius_neighbors(c.point(3), 0.0).len(), 100);
        assert_eq!(idx.knn(c.point(3), 5).unwrap(), vec![0, 1, 2, 3, 4]);
    }
}
