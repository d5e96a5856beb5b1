//! Training design `(X, Y)` with an exact k-nearest-neighbour index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::kernel::{sq_dist, Points};

const LEAF_SIZE: usize = 16;

/// A neighbour: design row and its squared distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub row: usize,
    pub d2: f64,
}

impl Neighbor {
    /// Total order by distance, then row id.
    #[inline]
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.row.cmp(&other.row))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key_cmp(other)
    }
}

#[derive(Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: Box<Node>, right: Box<Node> },
}

/// Static kd-tree over the rows of a point matrix.
#[derive(Debug)]
pub struct KdTree {
    order: Vec<usize>,
    root: Node,
}

impl KdTree {
    pub fn build(points: Points<'_>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let n = order.len();
        let root = Self::build_node(points, &mut order, 0, n);
        KdTree { order, root }
    }

    fn build_node(points: Points<'_>, order: &mut [usize], start: usize, end: usize) -> Node {
        if end - start <= LEAF_SIZE {
            return Node::Leaf { start, end };
        }
        let dim = points.dim();
        let slice = &mut order[start..end];
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..dim {
            let (lo, hi) = slice.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points.row(i)[axis];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= 0.0 {
            return Node::Leaf { start, end };
        }
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            points.row(a)[best_axis].total_cmp(&points.row(b)[best_axis])
        });
        let value = points.row(slice[mid])[best_axis];
        let left = Self::build_node(points, order, start, start + mid);
        let right = Self::build_node(points, order, start + mid, end);
        Node::Split {
            axis: best_axis,
            value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// The `k` nearest rows to `q`, ascending by `(d2, row)`.
    pub fn knn(&self, points: Points<'_>, q: &[f64], k: usize) -> Vec<Neighbor> {
        let k = k.min(points.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(&self.root, points, q, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort_unstable();
        out
    }

    fn search(
        &self,
        node: &Node,
        points: Points<'_>,
        q: &[f64],
        k: usize,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &row in &self.order[*start..*end] {
                    let cand = Neighbor {
                        row,
                        d2: sq_dist(points.row(row), q),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
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
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, points, q, k, heap);
                // Equal bounds must still be visited: a tie may carry a lower row id.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, points, q, k, heap);
                }
            }
        }
    }
}

/// Full training design: `N x p` inputs, `N` responses and a neighbour index.
#[derive(Debug)]
pub struct DesignSet {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
    index: KdTree,
}

impl DesignSet {
    pub fn new(x: Vec<f64>, y: Vec<f64>, dim: usize) -> Result<Self> {
        let pts = Points::new(&x, dim)?;
        if pts.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: pts.len(),
                got: y.len(),
            });
        }
        if pts.is_empty() {
            return Err(Error::invalid("design has no rows"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("design contains non-finite values"));
        }
        let index = KdTree::build(pts);
        Ok(DesignSet { x, y, dim, index })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> Points<'_> {
        Points::new(&self.x, self.dim).expect("validated at construction")
    }

    pub fn x(&self, row: usize) -> &[f64] {
        &self.x[row * self.dim..(row + 1) * self.dim]
    }

    pub fn y(&self, row: usize) -> f64 {
        self.y[row]
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    pub fn inputs(&self) -> &[f64] {
        &self.x
    }

    /// Exact `k` nearest rows to `q`, ties broken by lower row id.
    pub fn nearest(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: q.len(),
            });
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("query point has non-finite coordinates"));
        }
        Ok(self.index.knn(self.points(), q, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(x: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<Neighbor> {
        let pts = Points::new(x, dim).unwrap();
        let mut all: Vec<Neighbor> = pts
            .rows()
            .enumerate()
            .map(|(row, r)| Neighbor { row, d2: sq_dist(r, q) })
            .collect();
        all.sort();
        all.truncate(k);
        all
    }

    #[test]
    fn knn_matches_full_sort_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &dim in &[1usize, 2, 3, 8] {
            let n = 500;
            let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let y = vec![0.0; n];
            let d = DesignSet::new(x.clone(), y, dim).unwrap();
            for _ in 0..20 {
                let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.2..1.2)).collect();
                for &k in &[1usize, 6, 50, 500, 600] {
                    assert_eq!(d.nearest(&q, k).unwrap(), brute(&x, dim, &q, k));
                }
            }
        }
    }

    #[test]
    fn knn_breaks_grid_ties_by_row() {
        let side = 21;
        let mut x = Vec::new();
        for i in 0..side {
            for j in 0..side {
                x.push(i as f64 / 20.0);
                x.push(j as f64 / 20.0);
            }
        }
        let d = DesignSet::new(x.clone(), vec![0.0; side * side], 2).unwrap();
        for q in [[0.5, 0.5], [0.0, 0.0], [0.525, 0.25], [0.3, 0.95]] {
            for k in [5, 9, 13, 40] {
                assert_eq!(d.nearest(&q, k).unwrap(), brute(&x, 2, &q, k));
            }
        }
    }

    #[test]
    fn duplicate_points() {
        let x = vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let d = DesignSet::new(x, vec![1.0; 6], 1).unwrap();
        let nn = d.nearest(&[0.0], 3).unwrap();
        assert_eq!(nn.iter().map(|n| n.row).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(DesignSet::new(vec![0.0, f64::NAN], vec![1.0, 2.0], 1).is_err());
        assert!(DesignSet::new(vec![0.0, 1.0], vec![1.0], 1).is_err());
        assert!(DesignSet::new(vec![], vec![], 1).is_err());
        let d = DesignSet::new(vec![0.0, 1.0], vec![1.0, 2.0], 1).unwrap();
        assert!(d.nearest(&[0.0, 0.0], 1).is_err());
    }
}
