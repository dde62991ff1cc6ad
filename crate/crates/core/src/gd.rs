//! Taylor–Hood gradient discretisation: continuous P2 vector velocity with
//! homogeneous boundary values, continuous P1 pressure.
//!
//! The element is conforming, so the reconstructions are the exact function
//! value and derivatives of the finite element function. Everything is
//! precomputed at the quadrature points of every triangle; a [`QuadPoint`]
//! addresses one of them.

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::mesh::{BoundaryTag, Point, TriMesh};
use crate::quadrature::TriangleRule;
use crate::rheology::Mat2;

pub const P2_LOCAL: usize = 6;
pub const P1_LOCAL: usize = 3;
/// Vector velocity unknowns per triangle.
pub const VEL_LOCAL: usize = 2 * P2_LOCAL;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadPoint {
    pub triangle: usize,
    pub index: usize,
}

/// Geometry and basis data at one quadrature point.
#[derive(Clone, Debug)]
pub struct QpData {
    pub x: Point,
    /// Quadrature weight times triangle area.
    pub weight: f64,
    pub p2: [f64; P2_LOCAL],
    pub p2_grad: [[f64; 2]; P2_LOCAL],
    pub p1: [f64; P1_LOCAL],
}

/// Element of `X_{D,0}`: coefficients of the free (interior) velocity unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteVelocity {
    pub coeffs: Vec<f64>,
}

impl DiscreteVelocity {
    pub fn zeros(n: usize) -> Self {
        Self { coeffs: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePressure {
    pub coeffs: Vec<f64>,
    pub mean_zero: bool,
}

#[derive(Clone, Debug)]
pub struct GradientDiscretisation {
    pub mesh: TriMesh,
    pub rule: TriangleRule,
    /// Scalar P2 nodes: mesh vertices followed by edge midpoints.
    pub node_coords: Vec<Point>,
    pub node_boundary: Vec<bool>,
    pub node_tag: Vec<Option<BoundaryTag>>,
    /// Local P2 node order: three vertices, then midpoints of (v0,v1), (v1,v2), (v2,v0).
    pub triangle_nodes: Vec<[usize; P2_LOCAL]>,
    /// Full vector dof `2 * node + component` to free index.
    pub free_index: Vec<Option<usize>>,
    pub free_to_full: Vec<usize>,
    qp: Vec<QpData>,
}

impl GradientDiscretisation {
    pub fn new(mesh: TriMesh) -> Self {
        let rule = TriangleRule::radon7();
        let nv = mesh.vertices.len();
        let mut node_coords = mesh.vertices.clone();
        node_coords.extend(mesh.edges.iter().map(|e| e.midpoint));
        let mut node_boundary = mesh.boundary_vertex.clone();
        node_boundary.extend(mesh.boundary_edge.iter().copied());
        let mut node_tag = mesh.vertex_tag.clone();
        node_tag.extend(mesh.edge_tag.iter().copied());

        let triangle_nodes: Vec<[usize; P2_LOCAL]> = mesh
            .triangles
            .iter()
            .zip(&mesh.triangle_edges)
            .map(|(t, e)| [t[0], t[1], t[2], nv + e[0], nv + e[1], nv + e[2]])
            .collect();

        let n_nodes = node_coords.len();
        let mut free_index = vec![None; 2 * n_nodes];
        let mut free_to_full = Vec::new();
        for node in 0..n_nodes {
            if !node_boundary[node] {
                for c in 0..2 {
                    free_index[2 * node + c] = Some(free_to_full.len());
                    free_to_full.push(2 * node + c);
                }
            }
        }

        let mut qp = Vec::with_capacity(mesh.triangles.len() * rule.len());
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|v| mesh.vertices[v]);
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            let area = mesh.signed_area(t);
            let g1 = [(c[1] - a[1]) / det, -(c[0] - a[0]) / det];
            let g2 = [-(b[1] - a[1]) / det, (b[0] - a[0]) / det];
            let glam = [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2];
            for (l, &w) in rule.points.iter().zip(&rule.weights) {
                let x = [l[0] * a[0] + l[1] * b[0] + l[2] * c[0], l[0] * a[1] + l[1] * b[1] + l[2] * c[1]];
                let mut p2 = [0.0; P2_LOCAL];
                let mut p2_grad = [[0.0; 2]; P2_LOCAL];
                for k in 0..3 {
                    let k1 = (k + 1) % 3;
                    p2[k] = l[k] * (2.0 * l[k] - 1.0);
                    p2[3 + k] = 4.0 * l[k] * l[k1];
                    for d in 0..2 {
                        p2_grad[k][d] = (4.0 * l[k] - 1.0) * glam[k][d];
                        p2_grad[3 + k][d] = 4.0 * (l[k1] * glam[k][d] + l[k] * glam[k1][d]);
                    }
                }
                qp.push(QpData { x, weight: w * area, p2, p2_grad, p1: *l });
            }
        }

        Self { mesh, rule, node_coords, node_boundary, node_tag, triangle_nodes, free_index, free_to_full, qp }
    }

    pub fn uniform(nx: usize, ny: usize) -> Result<Self> {
        Ok(Self::new(TriMesh::build_uniform(nx, ny)?))
    }

    pub fn dim_x0(&self) -> usize {
        self.free_to_full.len()
    }

    pub fn dim_y(&self) -> usize {
        self.mesh.vertices.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.node_coords.len()
    }

    pub fn dim_full(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn num_qp_per_triangle(&self) -> usize {
        self.rule.len()
    }

    pub fn qp(&self, q: QuadPoint) -> &QpData {
        &self.qp[q.triangle * self.rule.len() + q.index]
    }

    pub fn triangle_qps(&self, t: usize) -> &[QpData] {
        let n = self.rule.len();
        &self.qp[t * n..(t + 1) * n]
    }

    pub fn quad_points(&self) -> impl Iterator<Item = QuadPoint> + '_ {
        let n = self.rule.len();
        (0..self.mesh.num_triangles()).flat_map(move |t| (0..n).map(move |i| QuadPoint { triangle: t, index: i }))
    }

    /// Full dof indices of the 12 local vector unknowns, ordered `(node, component)`.
    pub fn local_full_dofs(&self, t: usize) -> [usize; VEL_LOCAL] {
        let nodes = &self.triangle_nodes[t];
        std::array::from_fn(|k| 2 * nodes[k / 2] + k % 2)
    }

    pub fn local_free_dofs(&self, t: usize) -> [Option<usize>; VEL_LOCAL] {
        self.local_full_dofs(t).map(|d| self.free_index[d])
    }

    /// Pressure unknowns of a triangle (the vertex indices).
    pub fn local_pressure_dofs(&self, t: usize) -> [usize; P1_LOCAL] {
        self.mesh.triangles[t]
    }

    /// Embeds free coefficients into a full vector with zero boundary values.
    pub fn expand(&self, v: &DiscreteVelocity) -> Vec<f64> {
        let mut full = vec![0.0; self.dim_full()];
        for (k, &d) in self.free_to_full.iter().enumerate() {
            full[d] = v.coeffs[k];
        }
        full
    }

    /// Free part of a full coefficient vector.
    pub fn restrict(&self, full: &[f64]) -> DiscreteVelocity {
        DiscreteVelocity { coeffs: self.free_to_full.iter().map(|&d| full[d]).collect() }
    }

    /// Full vector `v + g` where `g` is a full vector (boundary data included).
    pub fn lift(&self, v: &DiscreteVelocity, g_full: &[f64]) -> Vec<f64> {
        let mut full = g_full.to_vec();
        for (k, &d) in self.free_to_full.iter().enumerate() {
            full[d] += v.coeffs[k];
        }
        full
    }

    /// `Π_D` of a full coefficient vector at a quadrature point.
    pub fn value_full(&self, full: &[f64], q: QuadPoint) -> [f64; 2] {
        let data = self.qp(q);
        let nodes = &self.triangle_nodes[q.triangle];
        let mut u = [0.0; 2];
        for k in 0..P2_LOCAL {
            u[0] += full[2 * nodes[k]] * data.p2[k];
            u[1] += full[2 * nodes[k] + 1] * data.p2[k];
        }
        u
    }

    /// `∇_D` of a full coefficient vector, `(∇v)_{ij} = ∂_i v_j`.
    pub fn gradient_full(&self, full: &[f64], q: QuadPoint) -> Mat2 {
        let data = self.qp(q);
        let nodes = &self.triangle_nodes[q.triangle];
        let mut g = [[0.0; 2]; 2];
        for k in 0..P2_LOCAL {
            for j in 0..2 {
                let c = full[2 * nodes[k] + j];
                g[0][j] += c * data.p2_grad[k][0];
                g[1][j] += c * data.p2_grad[k][1];
            }
        }
        Mat2(g)
    }

    pub fn reconstruct_velocity(&self, v: &DiscreteVelocity, q: QuadPoint) -> [f64; 2] {
        let data = self.qp(q);
        let mut u = [0.0; 2];
        for (k, dof) in self.local_free_dofs(q.triangle).iter().enumerate() {
            if let Some(i) = dof {
                u[k % 2] += v.coeffs[*i] * data.p2[k / 2];
            }
        }
        u
    }

    pub fn reconstruct_gradient(&self, v: &DiscreteVelocity, q: QuadPoint) -> Mat2 {
        let data = self.qp(q);
        let mut g = [[0.0; 2]; 2];
        for (k, dof) in self.local_free_dofs(q.triangle).iter().enumerate() {
            if let Some(i) = dof {
                let (node, comp) = (k / 2, k % 2);
                g[0][comp] += v.coeffs[*i] * data.p2_grad[node][0];
                g[1][comp] += v.coeffs[*i] * data.p2_grad[node][1];
            }
        }
        Mat2(g)
    }

    pub fn symmetric_gradient(&self, v: &DiscreteVelocity, q: QuadPoint) -> Mat2 {
        self.reconstruct_gradient(v, q).sym()
    }

    pub fn divergence(&self, v: &DiscreteVelocity, q: QuadPoint) -> f64 {
        self.reconstruct_gradient(v, q).trace()
    }

    /// `χ_D` at a quadrature point.
    pub fn reconstruct_pressure(&self, p: &DiscretePressure, q: QuadPoint) -> f64 {
        let data = self.qp(q);
        let tri = self.mesh.triangles[q.triangle];
        (0..P1_LOCAL).map(|k| p.coeffs[tri[k]] * data.p1[k]).sum()
    }

    /// Evaluates a full P2 vector at an arbitrary point of the domain.
    pub fn evaluate_full_at(&self, full: &[f64], x: Point) -> Result<[f64; 2]> {
        let loc = self.mesh.locate_point(x)?;
        let l = loc.barycentric;
        let nodes = &self.triangle_nodes[loc.triangle];
        let mut phi = [0.0; P2_LOCAL];
        for k in 0..3 {
            phi[k] = l[k] * (2.0 * l[k] - 1.0);
            phi[3 + k] = 4.0 * l[k] * l[(k + 1) % 3];
        }
        let mut u = [0.0; 2];
        for k in 0..P2_LOCAL {
            u[0] += full[2 * nodes[k]] * phi[k];
            u[1] += full[2 * nodes[k] + 1] * phi[k];
        }
        Ok(u)
    }

    pub fn evaluate_at(&self, v: &DiscreteVelocity, x: Point) -> Result<[f64; 2]> {
        self.evaluate_full_at(&self.expand(v), x)
    }

    /// Nodal interpolation. With `constrained` the full vector (boundary
    /// values kept) is returned, otherwise only the free coefficients.
    pub fn interpolate(&self, f: &dyn VectorField, constrained: bool) -> Result<Vec<f64>> {
        let mut full = vec![0.0; self.dim_full()];
        if !f.is_zero() {
            for (node, &x) in self.node_coords.iter().enumerate() {
                let u = f.eval(x);
                if !(u[0].is_finite() && u[1].is_finite()) {
                    return Err(Error::Data(format!("non-finite field value at ({}, {})", x[0], x[1])));
                }
                full[2 * node] = u[0];
                full[2 * node + 1] = u[1];
            }
        }
        if constrained {
            Ok(full)
        } else {
            Ok(self.restrict(&full).coeffs)
        }
    }

    pub fn interpolate_free(&self, f: &dyn VectorField) -> Result<DiscreteVelocity> {
        Ok(DiscreteVelocity { coeffs: self.interpolate(f, false)? })
    }

    /// `∫ χ_D q` for every pressure basis function.
    pub fn pressure_mean_weights(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim_y()];
        for q in self.quad_points() {
            let data = self.qp(q);
            for (k, &v) in self.mesh.triangles[q.triangle].iter().enumerate() {
                m[v] += data.weight * data.p1[k];
            }
        }
        m
    }

    /// `‖Π_D v‖²_{L²}` by quadrature of a full vector.
    pub fn l2_norm_sq_full(&self, full: &[f64]) -> f64 {
        self.quad_points()
            .map(|q| {
                let u = self.value_full(full, q);
                self.qp(q).weight * (u[0] * u[0] + u[1] * u[1])
            })
            .sum()
    }

    /// `‖f‖²_{L²}` of a closed-form field, by the same quadrature.
    pub fn l2_norm_sq_field(&self, f: &dyn VectorField) -> f64 {
        self.quad_points()
            .map(|q| {
                let data = self.qp(q);
                let u = f.eval(data.x);
                data.weight * (u[0] * u[0] + u[1] * u[1])
            })
            .sum()
    }

    /// Writes `(x, y, u_x, u_y)` rows at all P2 nodes of a full vector.
    pub fn write_field_csv<W: std::io::Write>(&self, full: &[f64], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "u_x", "u_y"])?;
        for (node, x) in self.node_coords.iter().enumerate() {
            w.write_record([
                x[0].to_string(),
                x[1].to_string(),
                full[2 * node].to_string(),
                full[2 * node + 1].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
