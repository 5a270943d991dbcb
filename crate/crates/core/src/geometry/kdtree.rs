//! Exact 3-D k-d tree over a borrowed point slice.
//!
//! Query results are ordered by `(squared distance, index)` so neighborhoods
//! are reproducible regardless of tree shape.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct KdTree<'a> {
    points: &'a [Vector3<f64>],
    order: Vec<usize>,
    root: Node,
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

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = build(points, &mut order, 0, points.len(), 0);
        Self {
            points,
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points within `radius` of `query` (inclusive), nearest first.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let mut found = Vec::new();
        self.radius_rec(&self.root, query, r2, &mut found);
        found.sort_unstable();
        found.into_iter().map(|c| c.index).collect()
    }

    /// Indices of the `k` nearest points to `query`, nearest first.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<usize> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(&self.root, query, k, &mut heap);
        let mut found = heap.into_vec();
        found.sort_unstable();
        found.into_iter().map(|c| c.index).collect()
    }

    fn radius_rec(&self, node: &Node, query: &Vector3<f64>, r2: f64, out: &mut Vec<Candidate>) {
        match node {
            Node::Leaf { start, end } => {
                for &index in &self.order[*start..*end] {
                    let dist2 = (self.points[index] - query).norm_squared();
                    if dist2 <= r2 {
                        out.push(Candidate { dist2, index });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.radius_rec(near, query, r2, out);
                if delta * delta <= r2 {
                    self.radius_rec(far, query, r2, out);
                }
            }
        }
    }

    fn knn_rec(
        &self,
        node: &Node,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &index in &self.order[*start..*end] {
                    let candidate = Candidate {
                        dist2: (self.points[index] - query).norm_squared(),
                        index,
                    };
                    if heap.len() < k {
                        heap.push(candidate);
                    } else if heap.peek().is_some_and(|worst| candidate < *worst) {
                        heap.pop();
                        heap.push(candidate);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = query[*axis] - value;
                let (near, far) = if delta <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_rec(near, query, k, heap);
                let bound = heap.peek().map_or(f64::INFINITY, |worst| worst.dist2);
                if heap.len() < k || delta * delta <= bound {
                    self.knn_rec(far, query, k, heap);
                }
            }
        }
    }
}

fn build(
    points: &[Vector3<f64>],
    order: &mut [usize],
    start: usize,
    end: usize,
    depth: usize,
) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    // Split along the axis of largest extent.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in &order[start..end] {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = hi - lo;
    let axis = if extent.max() > 0.0 {
        extent.imax()
    } else {
        depth % 3
    };
    let mid = start + (end - start) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let value = points[order[mid]][axis];
    let left = build(points, order, start, mid, depth + 1);
    let right = build(points, order, mid, end, depth + 1);
    Node::Split {
        axis,
        value,
        left: Box::new(left),
        right: Box::new(right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sorted(points: &[Vector3<f64>], q: &Vector3<f64>) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all
    }

    #[test]
    fn queries_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points: Vec<Vector3<f64>> = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-0.1..0.1),
                )
            })
            .collect();
        let tree = KdTree::new(&points);
        for _ in 0..50 {
            let q = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.0,
            );
            let brute = brute_sorted(&points, &q);
            let knn = tree.nearest(&q, 17);
            assert_eq!(knn, brute.iter().take(17).map(|x| x.1).collect::<Vec<_>>());
            let radius = tree.within_radius(&q, 0.2);
            let expected: Vec<usize> = brute.iter().filter(|x| x.0 <= 0.04).map(|x| x.1).collect();
            assert_eq!(radius, expected);
        }
    }

    #[test]
    fn duplicate_points_tie_break_by_index() {
        let points = vec![Vector3::new(1.0, 1.0, 1.0); 20];
        let tree = KdTree::new(&points);
        assert_eq!(tree.nearest(&Vector3::zeros(), 3), vec![0, 1, 2]);
        assert_eq!(
            tree.within_radius(&Vector3::new(1.0, 1.0, 1.0), 0.0).len(),
            20
        );
    }
}
