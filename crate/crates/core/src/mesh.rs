use std::collections::HashMap;

use crate::{Error, Result, Vec3};

/// A polygonal face: quads from extraction, triangles after fan splitting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Face {
    Tri([usize; 3]),
    Quad([usize; 4]),
}

impl Face {
    pub fn indices(&self) -> &[usize] {
        match self {
            Face::Tri(t) => t,
            Face::Quad(q) => q,
        }
    }

    /// Undirected edges in winding order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let idx = self.indices();
        (0..idx.len()).map(move |k| (idx[k], idx[(k + 1) % idx.len()]))
    }

    /// Fan split around the first vertex.
    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let idx = self.indices();
        (1..idx.len() - 1).map(move |k| [idx[0], idx[k], idx[k + 1]])
    }
}

/// Polygon mesh with per-vertex normals.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QuadMesh {
    pub vertices: Vec<Vec3>,
    pub vertex_normals: Vec<Vec3>,
    pub faces: Vec<Face>,
}

impl QuadMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// Checks the index and non-degeneracy invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.vertex_normals.is_empty() && self.vertex_normals.len() != self.vertices.len() {
            return Err(Error::InvalidInput("vertex normal count mismatch".into()));
        }
        for (fi, f) in self.faces.iter().enumerate() {
            let idx = f.indices();
            if idx.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::InvalidInput(format!("face {fi} has an out-of-range index")));
            }
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    if idx[a] == idx[b] {
                        return Err(Error::InvalidInput(format!("face {fi} is degenerate")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Same vertices, every face fan-split into triangles.
    pub fn triangulated(&self) -> QuadMesh {
        QuadMesh {
            vertices: self.vertices.clone(),
            vertex_normals: self.vertex_normals.clone(),
            faces: self
                .faces
                .iter()
                .flat_map(|f| f.triangles().map(Face::Tri).collect::<Vec<_>>())
                .collect(),
        }
    }

    pub fn triangle_list(&self) -> Vec<[Vec3; 3]> {
        self.faces
            .iter()
            .flat_map(|f| f.triangles().collect::<Vec<_>>())
            .map(|[a, b, c]| [self.vertices[a], self.vertices[b], self.vertices[c]])
            .collect()
    }

    /// Number of faces incident to every undirected edge.
    pub fn edge_incidence(&self) -> HashMap<(usize, usize), usize> {
        let mut map = HashMap::new();
        for f in &self.faces {
            for (a, b) in f.edges() {
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// Edges used by exactly one face.
    pub fn boundary_edge_count(&self) -> usize {
        self.edge_incidence().values().filter(|&&c| c == 1).count()
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_incidence().values().all(|&c| c == 2)
    }

    /// Connected-component label per face, with faces linked through shared vertices.
    /// Labels are dense and ordered by first appearance.
    pub fn face_components(&self) -> (Vec<usize>, usize) {
        let mut uf = UnionFind::new(self.vertices.len());
        for f in &self.faces {
            let idx = f.indices();
            for w in idx.windows(2) {
                uf.union(w[0], w[1]);
            }
        }
        let mut label_of_root = HashMap::new();
        let labels: Vec<usize> = self
            .faces
            .iter()
            .map(|f| {
                let root = uf.find(f.indices()[0]);
                let next = label_of_root.len();
                *label_of_root.entry(root).or_insert(next)
            })
            .collect();
        (labels, label_of_root.len())
    }

    /// Keeps only the faces for which `keep` is true and drops unreferenced vertices.
    pub fn retain_faces(&self, keep: impl Fn(usize) -> bool) -> QuadMesh {
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut out = QuadMesh::default();
        let has_normals = self.vertex_normals.len() == self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if !keep(fi) {
                continue;
            }
            let mut map = |v: usize| {
                if remap[v] == usize::MAX {
                    remap[v] = out.vertices.len();
                    out.vertices.push(self.vertices[v]);
                    if has_normals {
                        out.vertex_normals.push(self.vertex_normals[v]);
                    }
                }
                remap[v]
            };
            out.faces.push(match *f {
                Face::Tri([a, b, c]) => Face::Tri([map(a), map(b), map(c)]),
                Face::Quad([a, b, c, d]) => Face::Quad([map(a), map(b), map(c), map(d)]),
            });
        }
        out
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_list()
            .iter()
            .map(|[a, b, c]| 0.5 * (b - a).cross(&(c - a)).norm())
            .sum()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn unit_cube() -> QuadMesh {
        let vertices = (0..8)
            .map(|i| Vec3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let faces = vec![
            Face::Quad([0, 2, 3, 1]),
            Face::Quad([4, 5, 7, 6]),
            Face::Quad([0, 1, 5, 4]),
            Face::Quad([2, 6, 7, 3]),
            Face::Quad([0, 4, 6, 2]),
            Face::Quad([1, 3, 7, 5]),
        ];
        QuadMesh {
            vertices,
            vertex_normals: vec![],
            faces,
        }
    }

    #[test]
    fn cube_is_closed() {
        let m = unit_cube();
        m.validate().unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.boundary_edge_count(), 0);
        assert!((m.total_area() - 6.0).abs() < 1e-12);
        let t = m.triangulated();
        assert_eq!(t.faces.len(), 12);
        assert!(t.is_watertight());
    }

    #[test]
    fn open_face_has_boundary() {
        let mut m = unit_cube();
        m.faces.pop();
        assert_eq!(m.boundary_edge_count(), 4);
    }

    #[test]
    fn components_and_retain() {
        let mut m = unit_cube();
        let off = m.vertices.len();
        m.vertices.extend([
            Vec3::new(5.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::new(5.0, 1.0, 0.0),
        ]);
        m.faces.push(Face::Tri([off, off + 1, off + 2]));
        let (labels, count) = m.face_components();
        assert_eq!(count, 2);
        assert_eq!(labels[6], 1);
        let kept = m.retain_faces(|f| labels[f] == 0);
        assert_eq!(kept.vertices.len(), 8);
        assert_eq!(kept.faces.len(), 6);
    }

    #[test]
    fn degenerate_face_rejected() {
        let mut m = unit_cube();
        m.faces.push(Face::Quad([0, 1, 1, 2]));
        assert!(m.validate().is_err());
    }
}
