//! Forward model: rule-based ground-truth fiber fields, an anisotropic
//! fast-iterative eikonal solver on triangle meshes, farthest-point pacing
//! site selection, and noisy sparse sampling of the solved maps.

use crate::error::{Error, Result};
use crate::mesh::{ElementFrame, TriangleSurfaceMesh};
use crate::{Mat2, Mat3, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Ground-truth fibers and conduction velocities, with the per-element
/// tangent-basis tensors the solver consumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthField {
    /// Per-vertex unit tangent fiber direction.
    pub fibers: Vec<Vec3>,
    /// Longitudinal velocity per vertex (cm/ms).
    pub v_long: Vec<f64>,
    /// Transverse velocity per vertex (cm/ms).
    pub v_trans: Vec<f64>,
    /// Per-element 2x2 conduction tensor in the element tangent frame
    /// (cm^2/ms^2), averaged from the three vertex tensors.
    pub element_tensors: Vec<Mat2>,
    /// Vertices where the fiber rule was undefined and a deterministic
    /// neighbor average was substituted.
    pub fallback_vertices: Vec<usize>,
}

/// Fiber-assignment rules for synthetic ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FiberRule {
    /// Fiber at a fixed angle (radians) from p1 in every tangent plane.
    ConstantAngle { angle: f64 },
    /// Fiber along z cross position: circles of latitude on a sphere.
    Circumferential,
    /// Analytic varying angle: theta(x) = amplitude * sin(2 pi (x+y) / wavelength).
    SinusoidalAngle { amplitude: f64, wavelength: f64 },
}

/// Build a ground-truth field on the mesh with uniform velocities.
pub fn rule_based_fibers(
    mesh: &TriangleSurfaceMesh,
    rule: FiberRule,
    v_long: f64,
    v_trans: f64,
) -> Result<GroundTruthField> {
    assert!(v_long >= v_trans && v_trans > 0.0, "need v_long >= v_trans > 0");
    let nv = mesh.vertex_count();
    let mut fibers: Vec<Option<Vec3>> = vec![None; nv];

    for v in 0..nv {
        let (p1, p2) = mesh.vertex_frames[v];
        let n = mesh.vertex_normals[v];
        let dir = match rule {
            FiberRule::ConstantAngle { angle } => Some(p1 * angle.cos() + p2 * angle.sin()),
            FiberRule::SinusoidalAngle { amplitude, wavelength } => {
                let p = mesh.vertices[v];
                let theta =
                    amplitude * (2.0 * std::f64::consts::PI * (p.x + p.y) / wavelength).sin();
                Some(p1 * theta.cos() + p2 * theta.sin())
            }
            FiberRule::Circumferential => {
                // z cross n lies in the tangent plane and is exactly
                // orthogonal to the in-plane meridian direction
                let raw = Vec3::z().cross(&n);
                if raw.norm() < 1e-6 {
                    None
                } else {
                    Some(raw / raw.norm())
                }
            }
        };
        fibers[v] = dir.map(|d| {
            let t = d - n * d.dot(&n);
            t / t.norm()
        });
    }

    // deterministic neighbor-average fallback for undefined vertices
    let mut fallback_vertices = Vec::new();
    loop {
        let mut progressed = false;
        let mut still_missing = false;
        for v in 0..nv {
            if fibers[v].is_some() {
                continue;
            }
            let n = mesh.vertex_normals[v];
            let mut acc = Vec3::zeros();
            let mut reference: Option<Vec3> = None;
            for &w in mesh.neighbors_of(v) {
                if let Some(f) = fibers[w] {
                    // unoriented average: align each neighbor with the first
                    let r = *reference.get_or_insert(f);
                    acc += if f.dot(&r) >= 0.0 { f } else { -f };
                }
            }
            let t = acc - n * acc.dot(&n);
            if t.norm() > 1e-12 {
                fibers[v] = Some(t / t.norm());
                fallback_vertices.push(v);
                progressed = true;
            } else {
                still_missing = true;
            }
        }
        if !still_missing {
            break;
        }
        if !progressed {
            return Err(Error::InvalidMesh(
                "fiber rule undefined on a region with no defined neighbors".into(),
            ));
        }
    }
    fallback_vertices.sort_unstable();

    let fibers: Vec<Vec3> = fibers.into_iter().map(|f| f.unwrap()).collect();
    let v_long_field = vec![v_long; nv];
    let v_trans_field = vec![v_trans; nv];
    let element_tensors =
        element_tensors_from_vertices(mesh, &fibers, &v_long_field, &v_trans_field);
    Ok(GroundTruthField {
        fibers,
        v_long: v_long_field,
        v_trans: v_trans_field,
        element_tensors,
        fallback_vertices,
    })
}

/// Per-vertex global tensor D = vl^2 l l^T + vt^2 t t^T (t = n x l), averaged
/// over each triangle and restricted to the element tangent frame.
pub fn element_tensors_from_vertices(
    mesh: &TriangleSurfaceMesh,
    fibers: &[Vec3],
    v_long: &[f64],
    v_trans: &[f64],
) -> Vec<Mat2> {
    let vertex_d: Vec<Mat3> = (0..mesh.vertex_count())
        .map(|v| {
            let l = fibers[v];
            let t = mesh.vertex_normals[v].cross(&l);
            let e1 = v_long[v] * v_long[v];
            let e2 = v_trans[v] * v_trans[v];
            l * l.transpose() * e1 + t * t.transpose() * e2
        })
        .collect();
    mesh.triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let avg = (vertex_d[tri[0]] + vertex_d[tri[1]] + vertex_d[tri[2]]) / 3.0;
            let ef = &mesh.element_frames[t];
            let (ax, ay) = ef.tangent_axes();
            let p = nalgebra::Matrix3x2::from_columns(&[ax, ay]);
            (p.transpose() * avg * p).into()
        })
        .collect()
}

/// One-triangle update: minimal arrival time at the `slot` corner given the
/// other two corner times, under the element's conduction tensor `metric`
/// (the travel-time metric is its inverse). Golden-section minimization over
/// the opposite edge to a 1e-10 bracket.
pub fn local_update(
    element: &ElementFrame,
    slot: usize,
    metric: &Mat2,
    known: [f64; 2],
) -> f64 {
    let inv = invert2(metric);
    local_update_inv(element, slot, &inv, known)
}

/// As [`local_update`] but with the inverse (travel-time) metric precomputed.
pub fn local_update_inv(
    element: &ElementFrame,
    slot: usize,
    inv_metric: &Mat2,
    known: [f64; 2],
) -> f64 {
    let pv = element.local_coords[slot];
    let pa = element.local_coords[(slot + 1) % 3];
    let pb = element.local_coords[(slot + 2) % 3];
    let (ta, tb) = (known[0], known[1]);

    let edge_time = |from: [f64; 2]| {
        let e = [pv[0] - from[0], pv[1] - from[1]];
        quad_form(inv_metric, e).sqrt()
    };

    match (ta.is_finite(), tb.is_finite()) {
        (false, false) => f64::INFINITY,
        (true, false) => ta + edge_time(pa),
        (false, true) => tb + edge_time(pb),
        (true, true) => {
            let f = |lam: f64| {
                let px = (1.0 - lam) * pa[0] + lam * pb[0];
                let py = (1.0 - lam) * pa[1] + lam * pb[1];
                let e = [pv[0] - px, pv[1] - py];
                (1.0 - lam) * ta + lam * tb + quad_form(inv_metric, e).sqrt()
            };
            // golden-section on [0,1]; f is convex in lambda
            let inv_phi = 0.5 * (5.0f64.sqrt() - 1.0);
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let mut x1 = hi - inv_phi * (hi - lo);
            let mut x2 = lo + inv_phi * (hi - lo);
            let mut f1 = f(x1);
            let mut f2 = f(x2);
            while hi - lo > 1e-10 {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - inv_phi * (hi - lo);
                    f1 = f(x1);
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + inv_phi * (hi - lo);
                    f2 = f(x2);
                }
            }
            let interior = f(0.5 * (lo + hi));
            interior.min(f(0.0)).min(f(1.0))
        }
    }
}

/// Solve the anisotropic eikonal equation on the mesh by an active-list
/// fast-iterative sweep: each popped vertex takes the min over the local
/// updates of all incident triangles, and improvements reactivate neighbors.
/// Runs to the exact fixed point (no update can lower any vertex).
pub fn fim_solve(
    mesh: &TriangleSurfaceMesh,
    field: &GroundTruthField,
    sources: &[usize],
) -> Result<Vec<f64>> {
    let inv_metrics: Vec<Mat2> = field.element_tensors.iter().map(invert2).collect();
    fim_solve_with_metrics(mesh, &inv_metrics, sources)
}

/// Isotropic unit-speed variant; the solution is geodesic distance.
pub fn geodesic_distance(mesh: &TriangleSurfaceMesh, sources: &[usize]) -> Result<Vec<f64>> {
    let eye = vec![Mat2::identity(); mesh.triangle_count()];
    fim_solve_with_metrics(mesh, &eye, sources)
}

fn fim_solve_with_metrics(
    mesh: &TriangleSurfaceMesh,
    inv_metrics: &[Mat2],
    sources: &[usize],
) -> Result<Vec<f64>> {
    assert!(!sources.is_empty(), "at least one source required");
    let nv = mesh.vertex_count();
    let mut phi = vec![f64::INFINITY; nv];
    let mut is_source = vec![false; nv];
    for &s in sources {
        assert!(s < nv, "source index out of range");
        phi[s] = 0.0;
        is_source[s] = true;
    }

    let mut queue: VecDeque<usize> = VecDeque::new();
    let mut in_queue = vec![false; nv];
    for &s in sources {
        for &w in mesh.neighbors_of(s) {
            if !is_source[w] && !in_queue[w] {
                in_queue[w] = true;
                queue.push_back(w);
            }
        }
    }

    let pop_cap = 1000 * nv + 100_000;
    let mut pops = 0usize;
    while let Some(v) = queue.pop_front() {
        in_queue[v] = false;
        pops += 1;
        if pops > pop_cap {
            return Err(Error::EikonalNoConvergence { sweeps: pops });
        }
        let candidate = best_update(mesh, inv_metrics, &phi, v);
        if candidate < phi[v] {
            phi[v] = candidate;
            for &w in mesh.neighbors_of(v) {
                if !is_source[w] && !in_queue[w] {
                    in_queue[w] = true;
                    queue.push_back(w);
                }
            }
        }
    }

    let unreachable = phi.iter().filter(|t| !t.is_finite()).count();
    if unreachable > 0 {
        return Err(Error::UnreachableVertices { count: unreachable });
    }
    Ok(phi)
}

fn best_update(
    mesh: &TriangleSurfaceMesh,
    inv_metrics: &[Mat2],
    phi: &[f64],
    v: usize,
) -> f64 {
    let mut best = f64::INFINITY;
    for &t in mesh.triangles_of(v) {
        let tri = mesh.triangles[t];
        let slot = tri.iter().position(|&x| x == v).unwrap();
        let a = tri[(slot + 1) % 3];
        let b = tri[(slot + 2) % 3];
        let cand = local_update_inv(
            &mesh.element_frames[t],
            slot,
            &inv_metrics[t],
            [phi[a], phi[b]],
        );
        if cand < best {
            best = cand;
        }
    }
    best
}

/// Residual check: the largest amount any vertex could still be lowered by a
/// local update (0 at the exact fixed point). Test/diagnostic helper.
pub fn max_update_slack(
    mesh: &TriangleSurfaceMesh,
    field: &GroundTruthField,
    phi: &[f64],
) -> f64 {
    let inv_metrics: Vec<Mat2> = field.element_tensors.iter().map(invert2).collect();
    let mut worst = 0.0f64;
    for v in 0..mesh.vertex_count() {
        if phi[v] == 0.0 {
            continue;
        }
        let cand = best_update(mesh, &inv_metrics, phi, v);
        worst = worst.max(phi[v] - cand);
    }
    worst
}

/// Greedy maximin pacing sites: a seeded random first site, then repeatedly
/// the vertex farthest (geodesically) from all chosen sites.
pub fn farthest_point_pacing(
    mesh: &TriangleSurfaceMesh,
    n_sites: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let nv = mesh.vertex_count();
    if n_sites == 0 || n_sites > nv {
        return Err(Error::TooManySites {
            requested: n_sites,
            available: nv,
        });
    }
    let mut rng = crate::nn::rng_from_bytes(crate::hash::derive_seed(seed, "pacing", &[]));
    let first = rng.random_range(0..nv);
    let mut sites = vec![first];
    let mut min_dist = geodesic_distance(mesh, &[first])?;
    while sites.len() < n_sites {
        let mut best = 0usize;
        let mut best_d = -1.0;
        for (v, &d) in min_dist.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = v;
            }
        }
        sites.push(best);
        let d = geodesic_distance(mesh, &[best])?;
        for (m, dv) in min_dist.iter_mut().zip(&d) {
            if *dv < *m {
                *m = *dv;
            }
        }
    }
    Ok(sites)
}

/// One activation map: the full solved field plus the sparse noisy samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActivationMap {
    pub pacing_vertex: usize,
    /// Full per-vertex activation time (ms); ground truth for evaluation.
    pub full_solution: Vec<f64>,
    /// Sparse measurements: (vertex, noisy time in ms), distinct vertices,
    /// sorted by vertex index.
    pub samples: Vec<(usize, f64)>,
    /// Max over the full solution (ms); the normalization constant.
    pub t_max: f64,
    pub noise_sigma: f64,
}

/// Draw `floor(area * density)` distinct vertices uniformly without
/// replacement and add i.i.d. Gaussian noise to the solved times.
pub fn sample_measurements(
    solution: &[f64],
    area: f64,
    density: f64,
    sigma: f64,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    assert!(density > 0.0 && sigma >= 0.0);
    let n = (area * density).floor() as usize;
    let nv = solution.len();
    if n > nv {
        return Err(Error::DensityTooHigh {
            requested: n,
            available: nv,
        });
    }
    let mut rng = crate::nn::rng_from_bytes(crate::hash::derive_seed(seed, "samples", &[]));
    // partial Fisher-Yates over the index array
    let mut idx: Vec<usize> = (0..nv).collect();
    for i in 0..n {
        let j = rng.random_range(i..nv);
        idx.swap(i, j);
    }
    let mut chosen: Vec<usize> = idx[..n].to_vec();
    chosen.sort_unstable();
    let normal = rand_distr::Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).unwrap();
    Ok(chosen
        .into_iter()
        .map(|v| {
            let noise = if sigma > 0.0 { rng.sample(normal) } else { 0.0 };
            (v, solution[v] + noise)
        })
        .collect())
}

fn invert2(m: &Mat2) -> Mat2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Mat2::new(
        m[(1, 1)] / det,
        -m[(0, 1)] / det,
        -m[(1, 0)] / det,
        m[(0, 0)] / det,
    )
}

fn quad_form(m: &Mat2, e: [f64; 2]) -> f64 {
    m[(0, 0)] * e[0] * e[0] + (m[(0, 1)] + m[(1, 0)]) * e[0] * e[1] + m[(1, 1)] * e[1] * e[1]
}
