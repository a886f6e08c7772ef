//! Static k-d tree over 3D points.
//!
//! Splits at the median of the widest axis down to small leaves. Every node
//! keeps the tight bounding box of its points, and queries prune by the
//! distance to that box.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF: usize = 8;

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

/// Tight axis-aligned bounds of a node.
#[derive(Clone, Copy, Debug)]
struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn d2(&self, q: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for k in 0..3 {
            let d = (self.lo[k] - q[k]).max(q[k] - self.hi[k]).max(0.0);
            s += d * d;
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Original index of each stored point.
    ids: Vec<usize>,
    nodes: Vec<Node>,
    bounds: Vec<Bounds>,
}

#[derive(PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (x, y, z) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    x * x + y * y + z * z
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut tree = Self {
            points: points.to_vec(),
            ids: (0..points.len()).collect(),
            nodes: Vec::new(),
            bounds: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let me = self.nodes.len();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points[start..end] {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        self.bounds.push(Bounds { lo, hi });
        let axis = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap_or(0);
        if end - start <= LEAF || hi[axis] - lo[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return me;
        }
        let mid = start + (end - start) / 2;
        let mut order: Vec<usize> = (start..end).collect();
        order.select_nth_unstable_by(mid - start, |&a, &b| self.points[a][axis].total_cmp(&self.points[b][axis]));
        let pts: Vec<[f64; 3]> = order.iter().map(|&i| self.points[i]).collect();
        let ids: Vec<usize> = order.iter().map(|&i| self.ids[i]).collect();
        self.points[start..end].copy_from_slice(&pts);
        self.ids[start..end].copy_from_slice(&ids);
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[me] = Node::Split { left, right };
        me
    }

    /// Closest stored point as `(original index, squared distance)`.
    pub fn nearest(&self, q: [f64; 3]) -> Option<(usize, f64)> {
        self.k_nearest(q, 1).into_iter().next()
    }

    /// Up to `k` closest points, nearest first, ties broken by index.
    pub fn k_nearest(&self, q: [f64; 3], k: usize) -> Vec<(usize, f64)> {
        if self.is_empty() || k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, &q, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.1, c.0)).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn knn_rec(&self, node: usize, q: &[f64; 3], k: usize, heap: &mut BinaryHeap<Cand>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let c = Cand(d2(&self.points[i], q), self.ids[i]);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split { left, right } => {
                let (dl, dr) = (self.bounds[left].d2(q), self.bounds[right].d2(q));
                let order = if dl <= dr { [(left, dl), (right, dr)] } else { [(right, dr), (left, dl)] };
                for (child, d) in order {
                    if heap.len() < k || d <= heap.peek().expect("heap non-empty").0 {
                        self.knn_rec(child, q, k, heap);
                    }
                }
            }
        }
    }

    /// Original indices of all points within `radius` of `q`, ascending.
    pub fn within(&self, q: [f64; 3], radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.within_rec(0, &q, radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    if d2(&self.points[i], q) <= r2 {
                        out.push(self.ids[i]);
                    }
                }
            }
            Node::Split { left, right } => {
                for child in [left, right] {
                    if self.bounds[child].d2(q) <= r2 {
                        self.within_rec(child, q, r2, out);
                    }
                }
            }
        }
    }
}
