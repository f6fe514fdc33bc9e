//! Aggregating the per-member tensor predictions into a single fiber field:
//! the log-Euclidean mean tensor or the medoid member fiber, plus the
//! disparity uncertainty field.

use crate::mesh::TriangleSurfaceMesh;
use crate::parallel::{self, Parallelism};
use crate::stats;
use crate::tensor::{assemble_local, principal_fiber, sym2_eigen, sym2_exp, sym2_log, TensorHead};
use crate::train::EnsembleState;
use crate::{Mat2, Vec3};
use serde::{Deserialize, Serialize};

/// Fiber selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    MeanTensor,
    Medoid,
}

/// Per-vertex selection output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FiberSelectionResult {
    pub method: SelectionMethod,
    /// Selected unit tangent fiber per vertex.
    pub fibers: Vec<Vec3>,
    /// Selected squared velocities (e1, e2) per vertex: the mean-tensor
    /// eigenvalues, or the medoid member's values.
    pub velocities_sq: Vec<(f64, f64)>,
    /// Disparity (radians, in [0, pi/2]) per vertex.
    pub disparity: Vec<f64>,
    /// All member fibers per vertex (diagnostics), shape [vertex][member].
    pub member_fibers: Vec<Vec<Vec3>>,
    /// Vertices where the mean tensor was isotropic and the fiber fell back
    /// to the p1 convention.
    pub isotropic_vertices: Vec<usize>,
}

/// Unoriented fiber distance (1 - |v1.v2|)^2.
pub fn fiber_distance(v1: &Vec3, v2: &Vec3) -> f64 {
    let d = 1.0 - v1.dot(v2).abs();
    d * d
}

/// Log-Euclidean mean of the member tensors in the shared tangent basis:
/// exp(mean(R_k diag(ln e1, ln e2) R_k^T)). Returns the mean tensor, its
/// principal fiber angle coefficients (cos, sin), its eigenvalues
/// (high, low), and an isotropy flag.
pub fn mean_tensor(heads: &[TensorHead]) -> (Mat2, [f64; 2], (f64, f64), bool) {
    assert!(!heads.is_empty());
    let mut acc = Mat2::zeros();
    for h in heads {
        let local = assemble_local(h).0;
        acc += sym2_log(&local);
    }
    acc /= heads.len() as f64;
    let mean = sym2_exp(&acc);
    let (low, high, v) = sym2_eigen(&mean);
    let spread = (high - low).abs();
    let isotropic = spread <= 1e-12 * high.abs().max(1e-300);
    (mean, v, (high, low), isotropic)
}

/// The member fiber minimizing the median of its distances to all members
/// (self-distance included); ties broken by the lowest member index.
pub fn medoid_fiber_index(fibers: &[Vec3]) -> usize {
    assert!(!fibers.is_empty());
    let s = fibers.len();
    let mut best = 0usize;
    let mut best_med = f64::INFINITY;
    for k in 0..s {
        let dists: Vec<f64> = (0..s).map(|j| fiber_distance(&fibers[k], &fibers[j])).collect();
        let med = stats::median(&dists);
        if med < best_med {
            best_med = med;
            best = k;
        }
    }
    best
}

/// Disparity: arccos of the mean absolute cosine between the selected fiber
/// and the member fibers; 0 when all members are parallel to it.
pub fn disparity(selected: &Vec3, fibers: &[Vec3]) -> f64 {
    let mean_dot: f64 =
        fibers.iter().map(|f| selected.dot(f).abs()).sum::<f64>() / fibers.len() as f64;
    mean_dot.clamp(0.0, 1.0).acos()
}

/// Evaluate every member's tensor head at every vertex and aggregate with the
/// chosen method. Member fibers are the principal eigen-directions of each
/// member's tensor.
pub fn select_field(
    state: &EnsembleState,
    mesh: &TriangleSurfaceMesh,
    method: SelectionMethod,
    parallelism: Parallelism,
) -> FiberSelectionResult {
    let s_e = state.members.len();
    let member_heads: Vec<Vec<TensorHead>> =
        parallel::map_indexed(parallelism, s_e, |k| state.predict_heads_at_vertices(k));

    let nv = mesh.vertex_count();
    let per_vertex: Vec<(Vec3, (f64, f64), f64, Vec<Vec3>, bool)> =
        parallel::map_indexed(parallelism, nv, |v| {
            let (p1, p2) = mesh.vertex_frames[v];
            let heads: Vec<TensorHead> = (0..s_e).map(|k| member_heads[k][v]).collect();
            let fibers: Vec<Vec3> = heads.iter().map(|h| principal_fiber(h, p1, p2)).collect();
            let (selected, vel, isotropic) = match method {
                SelectionMethod::Medoid => {
                    let k = medoid_fiber_index(&fibers);
                    let h = &heads[k];
                    let (e_high, e_low) = if h.e1 >= h.e2 { (h.e1, h.e2) } else { (h.e2, h.e1) };
                    (fibers[k], (e_high, e_low), false)
                }
                SelectionMethod::MeanTensor => {
                    let (_, vcoef, (high, low), isotropic) = mean_tensor(&heads);
                    let f = if isotropic {
                        p1
                    } else {
                        p1 * vcoef[0] + p2 * vcoef[1]
                    };
                    (f, (high, low), isotropic)
                }
            };
            let selected = canonical_sign(selected);
            let disp = disparity(&selected, &fibers);
            (selected, vel, disp, fibers, isotropic)
        });

    let mut result = FiberSelectionResult {
        method,
        fibers: Vec::with_capacity(nv),
        velocities_sq: Vec::with_capacity(nv),
        disparity: Vec::with_capacity(nv),
        member_fibers: Vec::with_capacity(nv),
        isotropic_vertices: Vec::new(),
    };
    for (v, (f, vel, d, fibers, isotropic)) in per_vertex.into_iter().enumerate() {
        result.fibers.push(f);
        result.velocities_sq.push(vel);
        result.disparity.push(d);
        result.member_fibers.push(fibers);
        if isotropic {
            result.isotropic_vertices.push(v);
        }
    }
    result
}

/// Deterministic sign: first nonzero component positive.
fn canonical_sign(v: Vec3) -> Vec3 {
    for k in 0..3 {
        if v[k] != 0.0 {
            return if v[k] < 0.0 { -v } else { v };
        }
    }
    v
}
