//! Structured triangulation of the unit square.
//!
//! The square is split into `n x n` cells, each cut by the diagonal from its
//! bottom-left to its top-right corner. Numbering:
//!
//! * vertices row-major from the bottom row, `v = i (n + 1) + j` at `(j/n, i/n)`;
//! * triangles per cell (row-major), lower triangle first, all counter-clockwise;
//! * edges sorted lexicographically by their (sorted) vertex pair.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Vertex indices, smaller first.
    pub vertices: [usize; 2],
    pub boundary: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    n: usize,
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    /// Local edge `k` of a triangle is opposite its local vertex `k`.
    triangle_edges: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    edge_triangles: Vec<Vec<usize>>,
    interior_edge_index: Vec<Option<usize>>,
    interior_edges: Vec<usize>,
    interior_vertex_index: Vec<Option<usize>>,
    interior_vertices: Vec<usize>,
    areas: Vec<f64>,
    barycenters: Vec<Point>,
}

pub fn build_mesh(n: usize) -> Result<Mesh> {
    Mesh::new(n)
}

impl Mesh {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one subdivision".into()));
        }
        let h = n as f64;
        let stride = n + 1;
        let vertices: Vec<Point> =
            (0..stride).flat_map(|i| (0..stride).map(move |j| [j as f64 / h, i as f64 / h])).collect();

        let mut triangles = Vec::with_capacity(2 * n * n);
        for i in 0..n {
            for j in 0..n {
                let v = i * stride + j;
                triangles.push([v, v + 1, v + stride + 1]);
                triangles.push([v, v + stride + 1, v + stride]);
            }
        }

        let mut pairs: Vec<[usize; 2]> =
            triangles.iter().flat_map(|t| (0..3).map(move |k| sorted_pair(t[(k + 1) % 3], t[(k + 2) % 3]))).collect();
        pairs.sort_unstable();
        pairs.dedup();

        let mut edge_triangles = vec![Vec::with_capacity(2); pairs.len()];
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for (k, slot) in local.iter_mut().enumerate() {
                let key = sorted_pair(tri[(k + 1) % 3], tri[(k + 2) % 3]);
                let e = pairs.binary_search(&key).expect("edge collected above");
                edge_triangles[e].push(t);
                *slot = e;
            }
            triangle_edges.push(local);
        }

        let edges: Vec<Edge> = pairs
            .iter()
            .zip(&edge_triangles)
            .map(|(&vertices, ts)| Edge { vertices, boundary: ts.len() == 1 })
            .collect();

        let mut interior_edge_index = vec![None; edges.len()];
        let mut interior_edges = Vec::new();
        for (e, edge) in edges.iter().enumerate() {
            if !edge.boundary {
                interior_edge_index[e] = Some(interior_edges.len());
                interior_edges.push(e);
            }
        }

        let mut interior_vertex_index = vec![None; vertices.len()];
        let mut interior_vertices = Vec::new();
        for i in 1..n {
            for j in 1..n {
                let v = i * stride + j;
                interior_vertex_index[v] = Some(interior_vertices.len());
                interior_vertices.push(v);
            }
        }

        let areas = triangles.iter().map(|t| signed_area(t.map(|v| vertices[v]))).collect();
        let barycenters = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|v| vertices[v]);
                [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
            })
            .collect();

        Ok(Self {
            n,
            vertices,
            triangles,
            triangle_edges,
            edges,
            edge_triangles,
            interior_edge_index,
            interior_edges,
            interior_vertex_index,
            interior_vertices,
            areas,
            barycenters,
        })
    }

    /// Subdivisions per side.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_interior_edges(&self) -> usize {
        self.interior_edges.len()
    }

    pub fn num_interior_vertices(&self) -> usize {
        self.interior_vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Global edge indices of a triangle; entry `k` is opposite vertex `k`.
    pub fn triangle_edges(&self, t: usize) -> [usize; 3] {
        self.triangle_edges[t]
    }

    pub fn edge_triangles(&self, e: usize) -> &[usize] {
        &self.edge_triangles[e]
    }

    pub fn interior_edge_index(&self, e: usize) -> Option<usize> {
        self.interior_edge_index[e]
    }

    /// Global edge index of each interior edge, in interior order.
    pub fn interior_edges(&self) -> &[usize] {
        &self.interior_edges
    }

    pub fn interior_vertex_index(&self, v: usize) -> Option<usize> {
        self.interior_vertex_index[v]
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn barycenters(&self) -> &[Point] {
        &self.barycenters
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e].vertices.map(|v| self.vertices[v]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// Writes `vertices.csv`, `triangles.csv` and `edges.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;

        let mut w = BufWriter::new(File::create(dir.join("vertices.csv"))?);
        writeln!(w, "index,x,y,interior_index")?;
        for (v, p) in self.vertices.iter().enumerate() {
            let idx = self.interior_vertex_index[v].map_or(String::new(), |i| i.to_string());
            writeln!(w, "{v},{:.16e},{:.16e},{idx}", p[0], p[1])?;
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("triangles.csv"))?);
        writeln!(w, "index,v0,v1,v2,area,bx,by")?;
        for (t, tri) in self.triangles.iter().enumerate() {
            let b = self.barycenters[t];
            writeln!(w, "{t},{},{},{},{:.16e},{:.16e},{:.16e}", tri[0], tri[1], tri[2], self.areas[t], b[0], b[1])?;
        }
        w.flush()?;

        let mut w = BufWriter::new(File::create(dir.join("edges.csv"))?);
        writeln!(w, "index,v0,v1,boundary,interior_index")?;
        for (e, edge) in self.edges.iter().enumerate() {
            let idx = self.interior_edge_index[e].map_or(String::new(), |i| i.to_string());
            writeln!(w, "{e},{},{},{},{idx}", edge.vertices[0], edge.vertices[1], edge.boundary as u8)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Midpoints of the interior edges, in interior-edge order.
pub fn edge_midpoints(m: &Mesh) -> Vec<Point> {
    m.interior_edges.iter().map(|&e| m.edge_midpoint(e)).collect()
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

fn signed_area([a, b, c]: [Point; 3]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero() {
        assert!(build_mesh(0).is_err());
    }

    #[test]
    fn single_cell() {
        let m = build_mesh(1).unwrap();
        assert_eq!(
            (m.num_triangles(), m.num_vertices(), m.num_interior_edges(), m.num_interior_vertices()),
            (2, 4, 1, 0)
        );
        assert_eq!(m.edges()[m.interior_edges()[0]].vertices, [0, 3]);
        assert_eq!(edge_midpoints(&m), vec![[0.5, 0.5]]);
    }

    #[test]
    fn triangles_are_counter_clockwise_and_equal() {
        for n in [1, 3, 7] {
            let m = build_mesh(n).unwrap();
            let expected = 0.5 / (n * n) as f64;
            for &a in m.areas() {
                assert!(a > 0.0);
                assert!((a - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn local_edges_are_opposite() {
        let m = build_mesh(3).unwrap();
        for t in 0..m.num_triangles() {
            let tri = m.triangles()[t];
            for (k, &e) in m.triangle_edges(t).iter().enumerate() {
                assert!(!m.edges()[e].vertices.contains(&tri[k]));
            }
        }
    }

    #[test]
    fn writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        build_mesh(2).unwrap().write_csv(dir.path()).unwrap();
        let edges = std::fs::read_to_string(dir.path().join("edges.csv")).unwrap();
        assert_eq!(edges.lines().count(), 17);
        let tris = std::fs::read_to_string(dir.path().join("triangles.csv")).unwrap();
        assert_eq!(tris.lines().count(), 9);
    }
}
