//! Structured triangulations of the unit square.
//!
//! Vertices are numbered row by row (`j * nx + i`), every cell is split along
//! its lower-left to upper-right diagonal, and boundary entities carry a tag
//! telling the lid (`y = 1`) apart from the remaining walls.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

const GEOM_TOL: f64 = 1e-12;

pub type Point = [f64; 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    /// Top side `y = 1`, corners included.
    Lid,
    Wall,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub midpoint: Point,
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge indices of each triangle: `[e(v0,v1), e(v1,v2), e(v2,v0)]`.
    pub triangle_edges: Vec<[usize; 3]>,
    pub boundary_vertex: Vec<bool>,
    pub boundary_edge: Vec<bool>,
    pub vertex_tag: Vec<Option<BoundaryTag>>,
    pub edge_tag: Vec<Option<BoundaryTag>>,
}

/// Result of a point location query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub barycentric: [f64; 3],
}

fn on_boundary(p: Point) -> bool {
    p[0].abs() < GEOM_TOL || (p[0] - 1.0).abs() < GEOM_TOL || p[1].abs() < GEOM_TOL || (p[1] - 1.0).abs() < GEOM_TOL
}

fn tag_of(p: Point) -> Option<BoundaryTag> {
    if !on_boundary(p) {
        None
    } else if (p[1] - 1.0).abs() < GEOM_TOL {
        Some(BoundaryTag::Lid)
    } else {
        Some(BoundaryTag::Wall)
    }
}

impl TriMesh {
    /// Uniform `nx × ny` vertex grid on `[0,1]²`.
    pub fn build_uniform(nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Config(format!("mesh needs at least 2 vertices per axis, got {nx}x{ny}")));
        }
        let hx = 1.0 / (nx - 1) as f64;
        let hy = 1.0 / (ny - 1) as f64;
        let mut vertices = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                // exact endpoints so boundary detection never depends on rounding
                let x = if i == nx - 1 { 1.0 } else { i as f64 * hx };
                let y = if j == ny - 1 { 1.0 } else { j as f64 * hy };
                vertices.push([x, y]);
            }
        }
        let vid = |i: usize, j: usize| j * nx + i;
        let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut triangle_edges = Vec::with_capacity(triangles.len());
        for tri in &triangles {
            let mut te = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let id = *edge_index.entry(key).or_insert_with(|| {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        midpoint: [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])],
                    });
                    edges.len() - 1
                });
                te[k] = id;
            }
            triangle_edges.push(te);
        }

        let boundary_vertex: Vec<bool> = vertices.iter().map(|&p| on_boundary(p)).collect();
        let vertex_tag = vertices.iter().map(|&p| tag_of(p)).collect();
        // a boundary edge has both endpoints on the same side of the square
        let edge_tag: Vec<Option<BoundaryTag>> = edges
            .iter()
            .map(|e| {
                let (a, b) = (vertices[e.vertices[0]], vertices[e.vertices[1]]);
                let same_side = (0..2).any(|c| {
                    ((a[c]).abs() < GEOM_TOL && (b[c]).abs() < GEOM_TOL)
                        || ((a[c] - 1.0).abs() < GEOM_TOL && (b[c] - 1.0).abs() < GEOM_TOL)
                });
                if same_side {
                    tag_of(e.midpoint)
                } else {
                    None
                }
            })
            .collect();
        let boundary_edge = edge_tag.iter().map(Option::is_some).collect();

        Ok(Self {
            nx,
            ny,
            vertices,
            triangles,
            edges,
            triangle_edges,
            boundary_vertex,
            boundary_edge,
            vertex_tag,
            edge_tag,
        })
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Barycentric coordinates of `x` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, x: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Containing triangle and barycentric coordinates of a point in `[0,1]²`.
    pub fn locate_point(&self, x: Point) -> Result<Location> {
        if !(x[0] >= -GEOM_TOL && x[0] <= 1.0 + GEOM_TOL && x[1] >= -GEOM_TOL && x[1] <= 1.0 + GEOM_TOL) {
            return Err(Error::OutsideDomain { x: x[0], y: x[1] });
        }
        let cx = (self.nx - 1) as f64;
        let cy = (self.ny - 1) as f64;
        let i = ((x[0] * cx).floor().max(0.0) as usize).min(self.nx - 2);
        let j = ((x[1] * cy).floor().max(0.0) as usize).min(self.ny - 2);
        let s = x[0] * cx - i as f64;
        let r = x[1] * cy - j as f64;
        let cell = j * (self.nx - 1) + i;
        let triangle = if s >= r { 2 * cell } else { 2 * cell + 1 };
        let mut bary = self.barycentric(triangle, x);
        for l in &mut bary {
            if *l < 0.0 {
                *l = 0.0;
            }
        }
        let sum: f64 = bary.iter().sum();
        for l in &mut bary {
            *l /= sum;
        }
        Ok(Location { triangle, barycentric: bary })
    }

    /// Writes the vertex table followed by the triangle table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "vertex,x,y,boundary,tag")?;
        for (k, p) in self.vertices.iter().enumerate() {
            let tag = match self.vertex_tag[k] {
                Some(BoundaryTag::Lid) => "lid",
                Some(BoundaryTag::Wall) => "wall",
                None => "interior",
            };
            writeln!(out, "{k},{},{},{},{tag}", p[0], p[1], self.boundary_vertex[k] as u8)?;
        }
        writeln!(out, "triangle,v0,v1,v2")?;
        for (k, t) in self.triangles.iter().enumerate() {
            writeln!(out, "{k},{},{},{}", t[0], t[1], t[2])?;
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        format!("uniform-{}x{}-diag-ll-ur", self.nx, self.ny)
    }
}
