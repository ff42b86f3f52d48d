//! Exact k-d tree over fixed-dimension points.
//!
//! Used in three places: 64-dim descriptor matching, 3-D correspondence
//! search in ICP and k-nearest-neighbor statistics for outlier removal.
//! Every query is exact. Equal distances are ordered by the caller-supplied
//! id, lowest first, so results never depend on insertion order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    /// Position of the point in the slice the tree was built from.
    pub index: usize,
    pub id: u32,
    pub dist_sq: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Neighbor) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Squared Euclidean distance, accumulated in dimension order.
#[inline]
pub fn squared_distance<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut acc = 0.0;
    for i in 0..D {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

pub struct KdTree<const D: usize> {
    /// Points permuted into leaf order.
    points: Vec<[f64; D]>,
    /// Original slice position of each permuted point.
    indices: Vec<usize>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl<const D: usize> KdTree<D> {
    /// Builds a tree whose ids are the point positions.
    pub fn new(points: &[[f64; D]]) -> Self {
        let ids = (0..points.len() as u32).collect::<Vec<_>>();
        Self::with_ids(points, &ids)
    }

    /// # Panics
    /// If `ids` and `points` differ in length.
    pub fn with_ids(points: &[[f64; D]], ids: &[u32]) -> Self {
        assert_eq!(points.len(), ids.len(), "one id per point");
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            build(points, &mut order, 0, &mut nodes);
        }
        KdTree {
            points: order.iter().map(|&i| points[i]).collect(),
            ids: order.iter().map(|&i| ids[i]).collect(),
            indices: order,
            nodes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn nearest(&self, query: &[f64; D]) -> Option<Neighbor> {
        self.nearest_within(query, f64::INFINITY)
    }

    /// Nearest point with squared distance `<= max_dist_sq`.
    pub fn nearest_within(&self, query: &[f64; D], max_dist_sq: f64) -> Option<Neighbor> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<Neighbor> = None;
        let mut bound = max_dist_sq;
        self.search_nearest(0, query, &mut best, &mut bound);
        best
    }

    fn search_nearest(
        &self,
        node: usize,
        query: &[f64; D],
        best: &mut Option<Neighbor>,
        bound: &mut f64,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let d = squared_distance(query, &self.points[slot]);
                    if d > *bound {
                        continue;
                    }
                    let cand = Neighbor {
                        index: self.indices[slot],
                        id: self.ids[slot],
                        dist_sq: d,
                    };
                    if best.is_none_or(|b| cand.key_cmp(&b) == Ordering::Less) {
                        *best = Some(cand);
                        *bound = d;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_nearest(near, query, best, bound);
                // Equal distances must still be visited for id tie-breaking.
                if diff * diff <= *bound {
                    self.search_nearest(far, query, best, bound);
                }
            }
        }
    }

    /// The `k` nearest points ordered by `(distance, id)`, skipping the point
    /// at slice position `exclude`.
    pub fn knn(&self, query: &[f64; D], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search_knn(0, query, k, exclude, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(|a, b| a.key_cmp(b));
        out
    }

    fn search_knn(
        &self,
        node: usize,
        query: &[f64; D],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    if Some(self.indices[slot]) == exclude {
                        continue;
                    }
                    let cand = Neighbor {
                        index: self.indices[slot],
                        id: self.ids[slot],
                        dist_sq: squared_distance(query, &self.points[slot]),
                    };
                    if heap.len() < k {
                        heap.push(HeapEntry(cand));
                    } else if let Some(top) = heap.peek() {
                        if cand.key_cmp(&top.0) == Ordering::Less {
                            heap.pop();
                            heap.push(HeapEntry(cand));
                        }
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_knn(near, query, k, exclude, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |e| e.0.dist_sq)
                };
                if diff * diff <= worst {
                    self.search_knn(far, query, k, exclude, heap);
                }
            }
        }
    }
}

fn build<const D: usize>(
    points: &[[f64; D]],
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }

    // Split on the widest dimension.
    let mut dim = 0;
    let mut widest = -1.0;
    for d in 0..D {
        let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &i| {
            (acc.0.min(points[i][d]), acc.1.max(points[i][d]))
        });
        if hi - lo > widest {
            widest = hi - lo;
            dim = d;
        }
    }
    if widest <= 0.0 {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }

    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][dim].total_cmp(&points[b][dim]));
    let value = points[order[mid]][dim];

    nodes.push(Node::Split {
        dim,
        value,
        left: 0,
        right: 0,
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build(points, lo, offset, nodes);
    let right = build(points, hi, offset + mid, nodes);
    if let Node::Split {
        left: l, right: r, ..
    } = &mut nodes[id]
    {
        *l = left;
        *r = right;
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_nearest<const D: usize>(pts: &[[f64; D]], ids: &[u32], q: &[f64; D]) -> (u32, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        for (p, &id) in pts.iter().zip(ids) {
            let d = squared_distance(q, p);
            if d < best.1 || (d == best.1 && id < best.0) {
                best = (id, d);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_linear_scan_3d() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<[f64; 3]> = (0..2000)
            .map(|_| [rng.random(), rng.random(), rng.random()])
            .collect();
        let ids: Vec<u32> = (0..pts.len() as u32).collect();
        let tree = KdTree::new(&pts);
        for _ in 0..200 {
            let q = [rng.random(), rng.random(), rng.random()];
            let got = tree.nearest(&q).unwrap();
            assert_eq!((got.id, got.dist_sq), linear_nearest(&pts, &ids, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_id() {
        // Many coincident points with shuffled ids.
        let pts = vec![[1.0, 1.0]; 40];
        let ids: Vec<u32> = (0..40).rev().map(|i| i * 3 + 5).collect();
        let tree = KdTree::with_ids(&pts, &ids);
        let got = tree.nearest(&[0.0, 0.0]).unwrap();
        assert_eq!(got.id, 5);

        let grid: Vec<[f64; 2]> = (0..10)
            .flat_map(|i| (0..10).map(move |j| [i as f64, j as f64]))
            .collect();
        let tree = KdTree::new(&grid);
        // Equidistant from four grid points.
        let got = tree.nearest(&[4.5, 4.5]).unwrap();
        assert_eq!(got.id, 44);
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                [
                    (rng.random_range(0..10) as f64) * 0.1,
                    (rng.random_range(0..10) as f64) * 0.1,
                    0.0,
                ]
            })
            .collect();
        let tree = KdTree::new(&pts);
        for (qi, q) in pts.iter().enumerate().take(50) {
            let got = tree.knn(q, 12, Some(qi));
            let mut all: Vec<(f64, u32)> = pts
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != qi)
                .map(|(i, p)| (squared_distance(q, p), i as u32))
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<(f64, u32)> = all.into_iter().take(12).collect();
            let got: Vec<(f64, u32)> = got.iter().map(|n| (n.dist_sq, n.id)).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn nearest_within_respects_bound() {
        let tree = KdTree::new(&[[0.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(tree.nearest_within(&[1.5, 0.0, 0.0], 1.0).is_none());
        assert_eq!(tree.nearest_within(&[1.0, 0.0, 0.0], 1.0).unwrap().index, 0);
        assert!(KdTree::<3>::new(&[]).nearest(&[0.0; 3]).is_none());
    }
}
