use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

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

/// Exact kd-tree over a point cloud.
///
/// Results are identical to a brute-force scan ordered by
/// `(squared distance, index)`, so ties always resolve to the smallest index.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    dist2: f64,
    index: usize,
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
        self.dist2.total_cmp(&other.dist2).then(self.index.cmp(&other.index))
    }
}

impl NeighborIndex {
    pub fn new(cloud: &PointCloud) -> Result<Self> {
        Self::from_points(cloud.points.clone())
    }

    pub fn from_points(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut index = Self {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        index.build(0, index.points.len());
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end]
            .select_nth_unstable_by(mid - start, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[id] {
            *l = left;
            *r = right;
        }
        id
    }

    /// Index of the closest point; ties go to the smallest index.
    pub fn nearest(&self, query: &Point3) -> usize {
        let mut best = Candidate {
            dist2: f64::INFINITY,
            index: usize::MAX,
        };
        self.nearest_rec(0, query, &mut best);
        best.index
    }

    fn nearest_rec(&self, node: usize, q: &Point3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by distance, then index.
    pub fn k_nearest(&self, query: &Point3, k: usize) -> Result<Vec<usize>> {
        if k > self.points.len() {
            return Err(Error::KExceedsCloudSize {
                k,
                n: self.points.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        Ok(heap.into_sorted_vec().into_iter().map(|c| c.index).collect())
    }

    fn knn_rec(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
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
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().expect("heap is full").dist2
                };
                if diff * diff <= bound {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }

    /// All points within `radius` (inclusive), sorted by index.
    pub fn within_radius(&self, query: &Point3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.visit_within(query, radius, |i, _| out.push(i));
        out.sort_unstable();
        out
    }

    /// Calls `visit(index, squared distance)` for every point within `radius`
    /// (inclusive) in a fixed traversal order, without allocating.
    pub fn visit_within(&self, query: &Point3, radius: f64, mut visit: impl FnMut(usize, f64)) {
        self.radius_rec(0, query, radius * radius, &mut visit);
    }

    fn radius_rec(&self, node: usize, q: &Point3, r2: f64, visit: &mut impl FnMut(usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 <= r2 {
                        visit(i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.radius_rec(near, q, r2, visit);
                if diff * diff <= r2 {
                    self.radius_rec(far, q, r2, visit);
                }
            }
        }
    }
}
