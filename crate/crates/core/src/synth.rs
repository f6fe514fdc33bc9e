//! Synthetic benchmark geometries: flat sheet, icosphere, sphere with two
//! polar holes. Analytic shapes make oracle checks possible (exact areas,
//! distances, spectra).

use crate::error::Result;
use crate::mesh::TriangleSurfaceMesh;
use crate::Vec3;

/// Flat rectangular sheet in the z=0 plane, `nx` x `ny` vertices, alternating
/// cell diagonals for direction-balanced triangles.
pub fn flat_sheet(width: f64, height: f64, nx: usize, ny: usize) -> Result<TriangleSurfaceMesh> {
    assert!(nx >= 2 && ny >= 2, "sheet needs at least 2x2 vertices");
    let dx = width / (nx - 1) as f64;
    let dy = height / (ny - 1) as f64;
    let mut vertices = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            vertices.push(Vec3::new(i as f64 * dx, j as f64 * dy, 0.0));
        }
    }
    let idx = |i: usize, j: usize| j * nx + i;
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            if (i + j) % 2 == 0 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
    }
    TriangleSurfaceMesh::build(vertices, triangles)
}

/// Icosphere: regular icosahedron subdivided `subdivisions` times, vertices
/// projected to the sphere of the given radius.
pub fn icosphere(radius: f64, subdivisions: usize) -> Result<TriangleSurfaceMesh> {
    let (mut vertices, mut triangles) = icosahedron();
    for _ in 0..subdivisions {
        let mut midpoint: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut new_tris = Vec::with_capacity(triangles.len() * 4);
        for tri in &triangles {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let a = tri[k];
                let b = tri[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[a] + vertices[b]) * 0.5;
                    vertices.push(m / m.norm());
                    vertices.len() - 1
                });
            }
            new_tris.push([tri[0], mids[0], mids[2]]);
            new_tris.push([tri[1], mids[1], mids[0]]);
            new_tris.push([tri[2], mids[2], mids[1]]);
            new_tris.push([mids[0], mids[1], mids[2]]);
        }
        triangles = new_tris;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleSurfaceMesh::build(vertices, triangles)
}

/// Icosphere with two circular holes cut around the +z and -z poles
/// (triangles whose centroid satisfies |z| > radius*cos(cap_angle) are
/// removed). The result is an annular, boundary-bearing surface.
pub fn holed_sphere(
    radius: f64,
    subdivisions: usize,
    cap_angle_rad: f64,
) -> Result<TriangleSurfaceMesh> {
    let full = icosphere(radius, subdivisions)?;
    let z_cut = radius * cap_angle_rad.cos();
    let kept: Vec<[usize; 3]> = full
        .triangles
        .iter()
        .filter(|tri| {
            let c = (full.vertices[tri[0]] + full.vertices[tri[1]] + full.vertices[tri[2]]) / 3.0;
            c.z.abs() < z_cut
        })
        .copied()
        .collect();
    // compact vertex indices
    let mut remap = vec![usize::MAX; full.vertices.len()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(kept.len());
    for tri in kept {
        let mut t = [0usize; 3];
        for (slot, &v) in t.iter_mut().zip(&tri) {
            if remap[v] == usize::MAX {
                remap[v] = vertices.len();
                vertices.push(full.vertices[v]);
            }
            *slot = remap[v];
        }
        triangles.push(t);
    }
    TriangleSurfaceMesh::build(vertices, triangles)
}

fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let raw = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ];
    let vertices: Vec<Vec3> = raw
        .iter()
        .map(|&(x, y, z)| {
            let v = Vec3::new(x, y, z);
            v / v.norm()
        })
        .collect();
    let triangles = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (vertices, triangles)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sheet_area_is_exact() {
        let m = flat_sheet(10.0, 10.0, 11, 11).unwrap();
        assert!((m.total_area - 100.0).abs() < 1e-9);
        assert_eq!(m.vertex_count(), 121);
        assert_eq!(m.triangle_count(), 200);
    }

    #[test]
    fn icosphere_area_approaches_sphere() {
        let m = icosphere(1.0, 4).unwrap();
        let exact = 4.0 * std::f64::consts::PI;
        assert!(
            (m.total_area - exact).abs() / exact < 0.005,
            "area {} vs {exact}",
            m.total_area
        );
        assert_eq!(m.vertex_count(), 2562);
    }

    #[test]
    fn icosphere_normals_point_outward() {
        let m = icosphere(2.0, 2).unwrap();
        for (v, n) in m.vertices.iter().zip(&m.vertex_normals) {
            assert!(v.dot(n) > 0.0, "inward normal at {v:?}");
        }
    }

    #[test]
    fn holed_sphere_is_connected_annulus() {
        let m = holed_sphere(1.0, 3, 0.5).unwrap();
        // both caps removed: no vertex close to the poles
        let z_cut = 0.5_f64.cos();
        assert!(m.vertices.iter().all(|v| v.z.abs() < z_cut + 0.2));
        assert!(m.total_area < 4.0 * std::f64::consts::PI);
    }
}
