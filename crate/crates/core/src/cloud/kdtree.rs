//! Static 3-d tree over a frozen point set.
//!
//! Results are ordered by `(squared distance, original index)`, so ties resolve
//! the same way a brute-force scan sorted on that key would.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::error::CloudError;

const LEAF_SIZE: usize = 8;

/// One query hit: original point index and squared distance to the query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.index.cmp(&other.index))
    }
}

struct HeapEntry(Neighbor);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
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

#[derive(Clone, Copy, Debug)]
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

/// k-d tree answering k-nearest and radius queries.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    points: Vec<Vector3<f64>>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

impl NeighborIndex {
    pub fn build(points: &[Vector3<f64>]) -> Result<Self, CloudError> {
        if points.is_empty() {
            return Err(CloudError::EmptyCloud);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CloudError::NonFinitePoint { index });
        }
        let mut ids: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(points, &mut ids, 0, &mut nodes);
        let reordered = ids.iter().map(|&i| points[i]).collect();
        Ok(Self {
            points: reordered,
            ids,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points, closest first.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_recurse(0, query, k, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|e| e.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    pub fn nearest(&self, query: &Vector3<f64>) -> Neighbor {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.nearest_recurse(0, query, &mut best);
        best
    }

    /// The nearest point when it lies within `radius` (inclusive).
    pub fn nearest_within(&self, query: &Vector3<f64>, radius: f64) -> Option<Neighbor> {
        let mut best = Neighbor {
            index: usize::MAX,
            dist_sq: radius * radius,
        };
        self.nearest_recurse(0, query, &mut best);
        (best.index != usize::MAX).then_some(best)
    }

    /// Every point with squared distance `<= radius^2`, closest first.
    pub fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<Neighbor> {
        let mut out = Vec::new();
        self.radius_recurse(0, query, radius * radius, &mut |n| out.push(n));
        out.sort_by(Neighbor::key_cmp);
        out
    }

    pub fn count_within(&self, query: &Vector3<f64>, radius: f64) -> usize {
        let mut count = 0;
        self.radius_recurse(0, query, radius * radius, &mut |_| count += 1);
        count
    }

    fn knn_recurse(
        &self,
        node: usize,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut BinaryHeap<HeapEntry>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        index: self.ids[slot],
                        dist_sq: (self.points[slot] - query).norm_squared(),
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
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_recurse(near as usize, query, k, heap);
                let worst = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |e| e.0.dist_sq)
                };
                if diff * diff <= worst {
                    self.knn_recurse(far as usize, query, k, heap);
                }
            }
        }
    }

    fn nearest_recurse(&self, node: usize, query: &Vector3<f64>, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        index: self.ids[slot],
                        dist_sq: (self.points[slot] - query).norm_squared(),
                    };
                    if cand.key_cmp(best) == Ordering::Less {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_recurse(near as usize, query, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_recurse(far as usize, query, best);
                }
            }
        }
    }

    fn radius_recurse(
        &self,
        node: usize,
        query: &Vector3<f64>,
        radius_sq: f64,
        visit: &mut impl FnMut(Neighbor),
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let dist_sq = (self.points[slot] - query).norm_squared();
                    if dist_sq <= radius_sq {
                        visit(Neighbor {
                            index: self.ids[slot],
                            dist_sq,
                        });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.radius_recurse(near as usize, query, radius_sq, visit);
                if diff * diff <= radius_sq {
                    self.radius_recurse(far as usize, query, radius_sq, visit);
                }
            }
        }
    }
}

fn build_node(points: &[Vector3<f64>], ids: &mut [usize], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let slot = nodes.len();
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + ids.len()) as u32,
        });
        return slot as u32;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in ids.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    let value = points[ids[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_ids, right_ids) = ids.split_at_mut(mid);
    let left = build_node(points, left_ids, offset, nodes);
    let right = build_node(points, right_ids, offset + mid, nodes);
    nodes[slot] = Node::Split {
        axis: axis as u8,
        value,
        left,
        right,
    };
    slot as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = points
            .iter()
            .enumerate()
            .map(|(index, p)| Neighbor {
                index,
                dist_sq: (p - q).norm_squared(),
            })
            .collect();
        all.sort_by(Neighbor::key_cmp);
        all.truncate(k);
        all
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(NeighborIndex::build(&[]).unwrap_err(), CloudError::EmptyCloud);
    }

    #[test]
    fn single_point() {
        let idx = NeighborIndex::build(&[Vector3::new(1.0, 2.0, 3.0)]).unwrap();
        let n = idx.nearest(&Vector3::new(-5.0, 0.0, 9.0));
        assert_eq!(n.index, 0);
        assert_eq!(idx.knn(&Vector3::zeros(), 3).len(), 1);
    }

    #[test]
    fn cube_corner_finds_itself() {
        let mut pts = Vec::new();
        for x in 0..2 {
            for y in 0..2 {
                for z in 0..2 {
                    pts.push(Vector3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let idx = NeighborIndex::build(&pts).unwrap();
        let hit = idx.knn(&Vector3::zeros(), 1);
        assert_eq!(hit, vec![Neighbor { index: 0, dist_sq: 0.0 }]);
        // three neighbors tied at distance 1, resolved by index
        let hits = idx.knn(&Vector3::zeros(), 4);
        let ids: Vec<usize> = hits.iter().map(|n| n.index).collect();
        assert_eq!(ids, vec![0, 1, 2, 4]);
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = random_points(500, 7);
        let idx = NeighborIndex::build(&pts).unwrap();
        for q in random_points(100, 8).iter().chain(pts.iter().take(50)) {
            assert_eq!(idx.knn(q, 10), brute_knn(&pts, q, 10));
            let nn = brute_knn(&pts, q, 1)[0];
            assert_eq!(idx.nearest(q), nn);
            for r in [0.01, 0.05, 0.2] {
                assert_eq!(idx.nearest_within(q, r), (nn.dist_sq <= r * r).then_some(nn));
            }
        }
    }

    #[test]
    fn radius_matches_brute_force_on_grid_with_ties() {
        let mut pts = Vec::new();
        for x in 0..12 {
            for y in 0..12 {
                for z in 0..12 {
                    pts.push(Vector3::new(x as f64 * 0.5, y as f64 * 0.5, z as f64 * 0.5));
                }
            }
        }
        let idx = NeighborIndex::build(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = pts[rng.random_range(0..pts.len())];
            let r = 0.5 * rng.random_range(1..4) as f64;
            let brute: Vec<Neighbor> = {
                let mut v: Vec<Neighbor> = pts
                    .iter()
                    .enumerate()
                    .map(|(index, p)| Neighbor {
                        index,
                        dist_sq: (p - q).norm_squared(),
                    })
                    .filter(|n| n.dist_sq <= r * r)
                    .collect();
                v.sort_by(Neighbor::key_cmp);
                v
            };
            assert_eq!(idx.within_radius(&q, r), brute);
            assert_eq!(idx.count_within(&q, r), brute.len());
            assert_eq!(idx.knn(&q, 7), brute_knn(&pts, &q, 7));
        }
    }
}
