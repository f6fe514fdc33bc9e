//! Triangle surface mesh with tangent frames and linear-FEM operators.
//!
//! The mesh is immutable after construction and shared read-only by every
//! downstream stage. Units are centimeters throughout.

use crate::error::{Error, Result};
use crate::{Mat3, Vec3};

/// Per-triangle geometry: local orthonormal frame, linear shape-function
/// gradient operator and area.
#[derive(Debug, Clone)]
pub struct ElementFrame {
    /// Columns: first local axis (along edge v0->v1), second local axis,
    /// element normal. Maps element-local coordinates to global.
    pub rotation: Mat3,
    /// 2x3 gradient operator in element-local coordinates (1/cm): row-major
    /// `[dN0/dx, dN1/dx, dN2/dx; dN0/dy, dN1/dy, dN2/dy]`.
    pub grad_operator: [[f64; 3]; 2],
    /// Triangle area (cm^2).
    pub area: f64,
    /// Triangle centroid (cm).
    pub centroid: Vec3,
    /// Vertex positions in the local 2D frame (v0 at the origin).
    pub local_coords: [[f64; 2]; 3],
}

impl ElementFrame {
    fn build(triangle: usize, a: Vec3, b: Vec3, c: Vec3) -> Result<Self> {
        let e01 = b - a;
        let e02 = c - a;
        let cross = e01.cross(&e02);
        let area = 0.5 * cross.norm();
        if !(area > 1e-12) {
            return Err(Error::DegenerateTriangle { triangle, area });
        }
        let normal = cross / cross.norm();
        let axis_x = e01 / e01.norm();
        let axis_y = normal.cross(&axis_x);

        let x1 = e01.norm();
        let x2 = e02.dot(&axis_x);
        let y2 = e02.dot(&axis_y);
        let local = [[0.0, 0.0], [x1, 0.0], [x2, y2]];

        // gradients of the linear shape functions: grad N_i = perp of the
        // opposite edge / (2 A), with (i, j, k) cyclic
        let two_a = x1 * y2;
        let mut g = [[0.0; 3]; 2];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            g[0][i] = (local[j][1] - local[k][1]) / two_a;
            g[1][i] = (local[k][0] - local[j][0]) / two_a;
        }

        Ok(ElementFrame {
            rotation: Mat3::from_columns(&[axis_x, axis_y, normal]),
            grad_operator: g,
            area,
            centroid: (a + b + c) / 3.0,
            local_coords: local,
        })
    }

    /// Element normal (third frame column).
    pub fn normal(&self) -> Vec3 {
        self.rotation.column(2).into()
    }

    /// Tangent axes (first two frame columns).
    pub fn tangent_axes(&self) -> (Vec3, Vec3) {
        (self.rotation.column(0).into(), self.rotation.column(1).into())
    }

    /// Gradient of the linear interpolant in the local 2D frame.
    pub fn local_gradient(&self, nodal: [f64; 3]) -> [f64; 2] {
        let g = &self.grad_operator;
        [
            g[0][0] * nodal[0] + g[0][1] * nodal[1] + g[0][2] * nodal[2],
            g[1][0] * nodal[0] + g[1][1] * nodal[1] + g[1][2] * nodal[2],
        ]
    }
}

/// Immutable triangle surface mesh with per-vertex and per-element frames.
#[derive(Debug, Clone)]
pub struct TriangleSurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub vertex_normals: Vec<Vec3>,
    /// Orthonormal tangent pair (p1, p2) per vertex; {p1, p2, n} right-handed.
    pub vertex_frames: Vec<(Vec3, Vec3)>,
    pub element_frames: Vec<ElementFrame>,
    pub total_area: f64,
    vertex_triangles: Vec<Vec<usize>>,
    vertex_neighbors: Vec<Vec<usize>>,
    content_hash: String,
}

impl TriangleSurfaceMesh {
    /// Build a mesh from raw geometry, validating indices, degeneracy,
    /// manifoldness and connectivity, and constructing all frames.
    pub fn build(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidMesh("empty vertex or triangle list".into()));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= nv {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        vertex_count: nv,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle { triangle: t, area: 0.0 });
            }
        }

        check_manifold(&triangles)?;

        let mut element_frames = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            element_frames.push(ElementFrame::build(
                t,
                vertices[tri[0]],
                vertices[tri[1]],
                vertices[tri[2]],
            )?);
        }
        let total_area: f64 = element_frames.iter().map(|e| e.area).sum();

        let mut vertex_triangles = vec![Vec::new(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                vertex_triangles[i].push(t);
            }
        }
        if let Some(lonely) = vertex_triangles.iter().position(|v| v.is_empty()) {
            return Err(Error::InvalidMesh(format!(
                "vertex {lonely} is not referenced by any triangle"
            )));
        }

        let mut vertex_neighbors: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for tri in &triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b && !vertex_neighbors[tri[a]].contains(&tri[b]) {
                        vertex_neighbors[tri[a]].push(tri[b]);
                    }
                }
            }
        }
        for nb in &mut vertex_neighbors {
            nb.sort_unstable();
        }

        check_connected(nv, &vertex_neighbors)?;

        // area-weighted vertex normals
        let mut vertex_normals = vec![Vec3::zeros(); nv];
        for (t, tri) in triangles.iter().enumerate() {
            let ef = &element_frames[t];
            let weighted = ef.normal() * ef.area;
            for &i in tri {
                vertex_normals[i] += weighted;
            }
        }
        for (i, n) in vertex_normals.iter_mut().enumerate() {
            let len = n.norm();
            if !(len > 1e-14) {
                return Err(Error::InvalidMesh(format!(
                    "vertex {i}: incident triangle normals cancel out"
                )));
            }
            *n /= len;
        }

        let mut vertex_frames = Vec::with_capacity(nv);
        for n in &vertex_normals {
            vertex_frames.push(build_vertex_frame(*n)?);
        }

        let content_hash = crate::hash::mesh_content_hash(&vertices, &triangles);

        Ok(TriangleSurfaceMesh {
            vertices,
            triangles,
            vertex_normals,
            vertex_frames,
            element_frames,
            total_area,
            vertex_triangles,
            vertex_neighbors,
            content_hash,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Triangles incident to a vertex.
    pub fn triangles_of(&self, vertex: usize) -> &[usize] {
        &self.vertex_triangles[vertex]
    }

    /// Sorted vertex neighbors (one-ring).
    pub fn neighbors_of(&self, vertex: usize) -> &[usize] {
        &self.vertex_neighbors[vertex]
    }

    /// SHA-256 of the canonical geometry; keys caches and manifests.
    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    /// Mean edge length (cm).
    pub fn mean_edge_length(&self) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for tri in &self.triangles {
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                if a < b {
                    sum += (self.vertices[a] - self.vertices[b]).norm();
                    count += 1;
                }
            }
        }
        sum / count as f64
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

/// Deterministic tangent frame from a unit normal: project the global axis
/// least aligned with `n` (ties broken x<y<z) onto the tangent plane for p1,
/// then p2 = n x p1.
pub fn build_vertex_frame(normal: Vec3) -> Result<(Vec3, Vec3)> {
    let len = normal.norm();
    if !(len > 1e-14) {
        return Err(Error::ZeroNormal);
    }
    let n = normal / len;
    let axes = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut best = 0;
    let mut best_dot = f64::INFINITY;
    for (k, a) in axes.iter().enumerate() {
        let d = a.dot(&n).abs();
        if d < best_dot {
            best_dot = d;
            best = k;
        }
    }
    let a = axes[best];
    let p1 = a - n * a.dot(&n);
    let p1 = p1 / p1.norm();
    let p2 = n.cross(&p1);
    Ok((p1, p2))
}

/// Gradient of the linear interpolant of `nodal_values` over the element, in
/// global coordinates. Exact for linear fields; the component along the
/// element normal is structurally zero.
pub fn fem_gradient(element: &ElementFrame, nodal_values: [f64; 3]) -> Vec3 {
    let g = element.local_gradient(nodal_values);
    let (ax, ay) = element.tangent_axes();
    ax * g[0] + ay * g[1]
}

/// Convex combination of three nodal vectors with barycentric weights.
pub fn barycentric_interpolate(
    nodal_vectors: [&[f64]; 3],
    weights: [f64; 3],
) -> Result<Vec<f64>> {
    for &w in &weights {
        if w < 0.0 {
            return Err(Error::NegativeWeight { weight: w });
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidMesh(format!(
            "barycentric weights sum to {sum}, expected 1"
        )));
    }
    let d = nodal_vectors[0].len();
    assert!(nodal_vectors.iter().all(|v| v.len() == d));
    let mut out = vec![0.0; d];
    for (v, w) in nodal_vectors.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(*v) {
            *o += w * x;
        }
    }
    Ok(out)
}

fn check_manifold(triangles: &[[usize; 3]]) -> Result<()> {
    use std::collections::HashMap;
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            *edges.entry(key).or_insert(0) += 1;
        }
    }
    for (&(a, b), &count) in &edges {
        if count > 2 {
            return Err(Error::NonManifoldEdge { a, b, count });
        }
    }
    Ok(())
}

fn check_connected(nv: usize, neighbors: &[Vec<usize>]) -> Result<()> {
    let mut seen = vec![false; nv];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut visited = 1usize;
    while let Some(v) = stack.pop() {
        for &w in &neighbors[v] {
            if !seen[w] {
                seen[w] = true;
                visited += 1;
                stack.push(w);
            }
        }
    }
    if visited != nv {
        // count components for the error message
        let mut comp = 1usize;
        let mut seen2 = seen;
        loop {
            let Some(start) = seen2.iter().position(|s| !s) else {
                break;
            };
            comp += 1;
            let mut stack = vec![start];
            seen2[start] = true;
            while let Some(v) = stack.pop() {
                for &w in &neighbors[v] {
                    if !seen2[w] {
                        seen2[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        return Err(Error::Disconnected { components: comp });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_triangle() -> TriangleSurfaceMesh {
        TriangleSurfaceMesh::build(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn right_triangle_area() {
        let m = single_triangle();
        assert_abs_diff_eq!(m.total_area, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn element_frame_orthonormal_and_partition_of_unity() {
        let m = single_triangle();
        let ef = &m.element_frames[0];
        let rtr = ef.rotation.transpose() * ef.rotation;
        assert!((rtr - Mat3::identity()).norm() < 1e-10);
        for row in &ef.grad_operator {
            assert!((row[0] + row[1] + row[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_frame_axis_rule() {
        let (p1, p2) = build_vertex_frame(Vec3::z()).unwrap();
        assert_abs_diff_eq!((p1 - Vec3::x()).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((p2 - Vec3::y()).norm(), 0.0, epsilon = 1e-15);

        let n = Vec3::x();
        let (p1, p2) = build_vertex_frame(n).unwrap();
        assert!(p1.dot(&n).abs() < 1e-12);
        assert!((p2 - n.cross(&p1)).norm() < 1e-12);
    }

    #[test]
    fn vertex_frame_rejects_zero_normal() {
        assert!(build_vertex_frame(Vec3::zeros()).is_err());
    }

    #[test]
    fn fem_gradient_constant_is_zero() {
        let m = single_triangle();
        let g = fem_gradient(&m.element_frames[0], [3.5, 3.5, 3.5]);
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn fem_gradient_linear_field_exact() {
        let m = single_triangle();
        // u(x, y) = x at the nodes
        let g = fem_gradient(&m.element_frames[0], [0.0, 1.0, 0.0]);
        assert!((g - Vec3::x()).norm() < 1e-12);
        assert!(g[2].abs() < 1e-12);

        // u = 2x + 3y
        let g = fem_gradient(&m.element_frames[0], [0.0, 2.0, 3.0]);
        assert!((g - Vec3::new(2.0, 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn fem_gradient_random_planar_triangles() {
        use rand::Rng;
        let mut rng = crate::nn::seeded_rng(42);
        for _ in 0..100 {
            let mut pts = [Vec3::zeros(); 3];
            for p in &mut pts {
                *p = Vec3::new(rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>() * 4.0 - 2.0, 1.25);
            }
            let Ok(ef) = ElementFrame::build(0, pts[0], pts[1], pts[2]) else {
                continue;
            };
            let (a, b) = (rng.random::<f64>(), rng.random::<f64>());
            let nodal = [
                a * pts[0].x + b * pts[0].y,
                a * pts[1].x + b * pts[1].y,
                a * pts[2].x + b * pts[2].y,
            ];
            let g = fem_gradient(&ef, nodal);
            let expect = Vec3::new(a, b, 0.0);
            assert!(
                (g - expect).norm() < 1e-10 * (1.0 + expect.norm()),
                "gradient {g:?} vs {expect:?}"
            );
        }
    }

    #[test]
    fn barycentric_rules() {
        let v0 = [1.0, 2.0];
        let v1 = [3.0, 4.0];
        let v2 = [5.0, 6.0];
        let r = barycentric_interpolate([&v0, &v1, &v2], [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r, vec![1.0, 2.0]);
        let third = 1.0 / 3.0;
        let r = barycentric_interpolate([&v0, &v1, &v2], [third, third, third]).unwrap();
        assert_abs_diff_eq!(r[0], 3.0, epsilon = 1e-12);
        assert!(barycentric_interpolate([&v0, &v1, &v2], [-0.1, 0.6, 0.5]).is_err());
    }

    #[test]
    fn out_of_range_index_rejected() {
        let r = TriangleSurfaceMesh::build(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 3]],
        );
        assert!(matches!(r, Err(Error::IndexOutOfRange { index: 3, .. })));
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let r = TriangleSurfaceMesh::build(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(0.0, -1.0, 0.0)],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        );
        assert!(matches!(r, Err(Error::NonManifoldEdge { count: 3, .. })));
    }

    #[test]
    fn degenerate_triangle_rejected() {
        let r = TriangleSurfaceMesh::build(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
        );
        assert!(matches!(r, Err(Error::DegenerateTriangle { triangle: 0, .. })));
    }

    #[test]
    fn frames_orthonormal_property() {
        use rand::Rng;
        let mut rng = crate::nn::seeded_rng(7);
        for _ in 0..1000 {
            let n = Vec3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            if n.norm() < 1e-3 {
                continue;
            }
            let n = n / n.norm();
            let (p1, p2) = build_vertex_frame(n).unwrap();
            assert!((p1.norm() - 1.0).abs() < 1e-10);
            assert!((p2.norm() - 1.0).abs() < 1e-10);
            assert!(p1.dot(&p2).abs() < 1e-10);
            assert!(p1.dot(&n).abs() < 1e-10);
            assert!(p2.dot(&n).abs() < 1e-10);
            assert!((p1.cross(&p2) - n).norm() < 1e-8);
        }
    }
}
