//! Static 3D kd-tree for exact nearest-neighbour and k-NN queries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u8, value: f64, left: u32, right: u32 },
}

/// Immutable kd-tree over a copy of the input points. Query results refer to
/// indices in the original slice.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: u32,
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

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for kd-tree");
        let mut tree = KdTree {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1),
        };
        if !points.is_empty() {
            tree.build_node(0, points.len());
        }
        tree
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

    fn build_node(&mut self, start: usize, end: usize) -> u32 {
        let id = self.nodes.len() as u32;
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &i in &self.order[start..end] {
            let p = &self.points[i as usize];
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // all points identical
            self.nodes.push(Node::Leaf { start: start as u32, end: end as u32 });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a as usize][axis].total_cmp(&points[b as usize][axis])
        });
        let value = self.points[self.order[mid] as usize][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id as usize] = Node::Split { axis: axis as u8, value, left, right };
        id
    }

    /// Index and squared distance of the closest point; ties go to the lower index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Closest point with squared distance strictly below `max_dist2`.
    pub fn nearest_within(&self, q: &Vec3, max_dist2: f64) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = Candidate { dist2: max_dist2, index: u32::MAX };
        self.nearest_rec(0, q, &mut best);
        (best.index != u32::MAX).then_some((best.index as usize, best.dist2))
    }

    fn nearest_rec(&self, node: u32, q: &Vec3, best: &mut Candidate) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    let c = Candidate { dist2: d2, index: i };
                    if d2 < best.dist2 || (d2 == best.dist2 && c < *best) {
                        *best = c;
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, index).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, q, k, &mut heap);
        let mut out: Vec<_> = heap.into_iter().map(|c| (c.index as usize, c.dist2)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: u32, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node as usize] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start as usize..end as usize] {
                    let c = Candidate { dist2: (self.points[i as usize] - q).norm_squared(), index: i };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }
}
