//! Point octree with radius and k-nearest-neighbor queries.
//!
//! Cells split at their midpoint into octants until a cell holds at most
//! `leaf_capacity` points or the depth cap is reached. Empty octants are kept
//! as leaves so that leaf cells tile the root box, but only non-empty leaves
//! contribute to [`PointOctree::leaf_diagonals`].

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::{Aabb, Error, HermitePointSet, Result, Vec3};

pub const DEFAULT_LEAF_CAPACITY: usize = 16;
pub const MAX_DEPTH: u32 = 21;

#[derive(Clone, Debug)]
struct Node {
    cell: Aabb,
    /// Tight bounds of the contained points (empty for empty leaves).
    tight: Aabb,
    start: usize,
    end: usize,
    depth: u32,
    first_child: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct PointOctree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_capacity: usize,
    leaf_diagonals: Vec<f64>,
}

/// Builds an octree over the positions of `ps`.
pub fn build_octree(ps: &HermitePointSet, leaf_capacity: usize) -> Result<PointOctree> {
    PointOctree::build(&ps.points, leaf_capacity)
}

impl PointOctree {
    pub fn build(points: &[Vec3], leaf_capacity: usize) -> Result<PointOctree> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if leaf_capacity == 0 {
            return Err(Error::InvalidInput("leaf capacity must be at least 1".into()));
        }
        let root_box = Aabb::from_points(points);
        let mut tree = PointOctree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: vec![Node {
                cell: root_box,
                tight: root_box,
                start: 0,
                end: points.len(),
                depth: 0,
                first_child: None,
            }],
            leaf_capacity,
            leaf_diagonals: Vec::new(),
        };
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = tree.nodes[ni].clone();
            let count = node.end - node.start;
            if count <= leaf_capacity || node.depth >= MAX_DEPTH {
                if count > 0 {
                    tree.leaf_diagonals.push(node.cell.diagonal());
                }
                continue;
            }
            let mid = node.cell.center();
            let octant =
                |p: &Vec3| (p.x >= mid.x) as usize | ((p.y >= mid.y) as usize) << 1 | ((p.z >= mid.z) as usize) << 2;
            // Stable counting sort of the node's slice by octant.
            let slice: Vec<usize> = tree.order[node.start..node.end].to_vec();
            let mut counts = [0usize; 8];
            for &i in &slice {
                counts[octant(&tree.points[i])] += 1;
            }
            let mut offsets = [0usize; 8];
            for o in 1..8 {
                offsets[o] = offsets[o - 1] + counts[o - 1];
            }
            let mut cursor = offsets;
            for &i in &slice {
                let o = octant(&tree.points[i]);
                tree.order[node.start + cursor[o]] = i;
                cursor[o] += 1;
            }
            let first = tree.nodes.len();
            for o in 0..8 {
                let mut cell = node.cell;
                for a in 0..3 {
                    if (o >> a) & 1 == 1 {
                        cell.min[a] = mid[a];
                    } else {
                        cell.max[a] = mid[a];
                    }
                }
                let (s, e) = (node.start + offsets[o], node.start + offsets[o] + counts[o]);
                let tight = Aabb::from_points(tree.order[s..e].iter().map(|&i| &tree.points[i]));
                tree.nodes.push(Node {
                    cell,
                    tight,
                    start: s,
                    end: e,
                    depth: node.depth + 1,
                    first_child: None,
                });
            }
            tree.nodes[ni].first_child = Some(first);
            // Reverse push keeps leaf_diagonals in octant order.
            for o in (0..8).rev() {
                stack.push(first + o);
            }
        }
        Ok(tree)
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

    pub fn leaf_capacity(&self) -> usize {
        self.leaf_capacity
    }

    /// Diagonal lengths of the non-empty leaf cells.
    pub fn leaf_diagonals(&self) -> &[f64] {
        &self.leaf_diagonals
    }

    /// Point indices of every leaf (empty leaves included), with the leaf cell.
    pub fn leaves(&self) -> Vec<(Aabb, Vec<usize>)> {
        self.nodes
            .iter()
            .filter(|n| n.first_child.is_none())
            .map(|n| (n.cell, self.order[n.start..n.end].to_vec()))
            .collect()
    }

    pub fn bbox(&self) -> Aabb {
        self.nodes[0].cell
    }

    /// Indices with `|p - center| < radius`, ascending.
    pub fn radius_query(&self, center: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.radius_query_into(center, radius, &mut out);
        out
    }

    /// As [`Self::radius_query`], reusing `out`.
    pub fn radius_query_into(&self, center: &Vec3, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        self.for_each_in_radius(center, radius, |i, _| out.push(i));
        out.sort_unstable();
    }

    /// Visits every point strictly inside the ball with its squared distance,
    /// in tree order.
    pub fn for_each_in_radius(&self, center: &Vec3, radius: f64, mut visit: impl FnMut(usize, f64)) {
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.start == node.end || node.tight.distance_squared(center) >= r2 {
                continue;
            }
            match node.first_child {
                Some(first) => stack.extend(first..first + 8),
                None => {
                    for &i in &self.order[node.start..node.end] {
                        let d2 = (self.points[i] - center).norm_squared();
                        if d2 < r2 {
                            visit(i, d2);
                        }
                    }
                }
            }
        }
    }

    /// Number of points strictly inside the ball.
    pub fn count_in_radius(&self, center: &Vec3, radius: f64) -> usize {
        let mut n = 0;
        self.for_each_in_radius(center, radius, |_, _| n += 1);
        n
    }

    /// The `k` nearest points to `center` as `(index, distance)`, ascending by
    /// distance with ties broken by index. `exclude` removes one index from
    /// consideration.
    pub fn knn(&self, center: &Vec3, k: usize, exclude: Option<usize>) -> Result<Vec<(usize, f64)>> {
        let available = self.points.len() - exclude.map_or(0, |e| (e < self.points.len()) as usize);
        if k == 0 || k > available {
            return Err(Error::TooManyNeighbors { k, available });
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(0, center, k, exclude, &mut heap);
        let mut out: Vec<(usize, f64)> = heap.into_iter().map(|c| (c.index, c.d2.sqrt())).collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        Ok(out)
    }

    /// kNN where `exclude_self` drops the lowest-index point coincident with
    /// `center`, if any.
    pub fn knn_query(&self, center: &Vec3, k: usize, exclude_self: bool) -> Result<Vec<(usize, f64)>> {
        let exclude = if exclude_self {
            self.knn(center, 1, None)?
                .first()
                .filter(|(_, d)| *d == 0.0)
                .map(|(i, _)| *i)
        } else {
            None
        };
        self.knn(center, k, exclude)
    }

    fn knn_visit(&self, ni: usize, center: &Vec3, k: usize, exclude: Option<usize>, heap: &mut BinaryHeap<Candidate>) {
        let node = &self.nodes[ni];
        if node.start == node.end {
            return;
        }
        if heap.len() == k {
            let worst = heap.peek().expect("non-empty").d2;
            if node.tight.distance_squared(center) > worst {
                return;
            }
        }
        match node.first_child {
            Some(first) => {
                let mut kids: Vec<(f64, usize)> = (first..first + 8)
                    .filter(|&c| self.nodes[c].start != self.nodes[c].end)
                    .map(|c| (self.nodes[c].tight.distance_squared(center), c))
                    .collect();
                kids.sort_by(|a, b| a.0.total_cmp(&b.0));
                for (_, c) in kids {
                    self.knn_visit(c, center, k, exclude, heap);
                }
            }
            None => {
                for &i in &self.order[node.start..node.end] {
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Candidate {
                        d2: (self.points[i] - center).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
