//! Per-member loss evaluation and hand-composed exact gradients.
//!
//! Four terms: data misfit on the sparse measurements, the eikonal residual
//! on a batch of collocation elements, and Huber total-variation smoothness
//! of the squared velocities and of the fiber-angle cosine. Gradients flow
//! through batched reverse mode; in cartesian mode the eikonal term needs
//! the activation gradient w.r.t. the input coordinates, handled by the
//! tangent-adjoint pass.

use crate::error::{Error, Result};
use crate::nn::MlpGrads;
use crate::tensor::{sigmoid, softplus, E_MIN, E_SCALE};
use crate::train::context::TrainContext;
use crate::train::{Member, Mode, TrainingConfig};
use ndarray::Array2;

/// The four loss components (already averaged, unweighted).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossTerms {
    pub data: f64,
    pub eiko: f64,
    pub cv: f64,
    pub ang: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        w.data * self.data + w.eiko * self.eiko + w.cv * self.cv + w.ang * self.ang
    }

    pub fn is_finite(&self) -> bool {
        self.data.is_finite() && self.eiko.is_finite() && self.cv.is_finite() && self.ang.is_finite()
    }
}

/// Term weights; the config's lambdas, or one-hot vectors in gradient checks.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub data: f64,
    pub eiko: f64,
    pub cv: f64,
    pub ang: f64,
}

impl LossWeights {
    pub fn from_config(cfg: &TrainingConfig) -> LossWeights {
        LossWeights {
            data: cfg.lambda_data,
            eiko: cfg.lambda_eiko,
            cv: cfg.lambda_cv,
            ang: cfg.lambda_ang,
        }
    }

    pub fn one_hot(term: &str) -> LossWeights {
        LossWeights {
            data: (term == "data") as u64 as f64,
            eiko: (term == "eiko") as u64 as f64,
            cv: (term == "cv") as u64 as f64,
            ang: (term == "ang") as u64 as f64,
        }
    }
}

/// Gradients for one member's trainable networks.
#[derive(Debug, Clone)]
pub struct MemberGrads {
    pub tensor: MlpGrads,
    pub maps: Vec<MlpGrads>,
}

impl MemberGrads {
    pub fn zeros_like(member: &Member) -> MemberGrads {
        MemberGrads {
            tensor: MlpGrads::zeros_like(&member.tensor_net.trainable),
            maps: member
                .map_nets
                .iter()
                .map(|p| MlpGrads::zeros_like(&p.trainable))
                .collect(),
        }
    }
}

/// Huber penalty of a 2-vector's norm: quadratic below `delta`, linear above.
/// Returns (value, gradient w.r.t. the vector).
fn huber(g: [f64; 2], delta: f64) -> (f64, [f64; 2]) {
    let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
    if norm <= delta {
        (
            norm * norm / (2.0 * delta),
            [g[0] / delta, g[1] / delta],
        )
    } else {
        (norm - 0.5 * delta, [g[0] / norm, g[1] / norm])
    }
}

/// Evaluate one member's losses on a collocation batch, optionally
/// accumulating weighted gradients.
pub fn member_eval(
    member: &Member,
    ctx: &TrainContext,
    cfg: &TrainingConfig,
    batch: &[usize],
    weights: &LossWeights,
    mut grads: Option<&mut MemberGrads>,
) -> Result<LossTerms> {
    let n_maps = ctx.n_maps();
    let b = batch.len();
    let lam_p = cfg.lambda_p;

    // ---------------- data term ----------------
    let mut data_loss = 0.0;
    let mut data_caches = Vec::with_capacity(n_maps);
    for (i, map) in ctx.maps.iter().enumerate() {
        let n_i = map.sample_verts.len();
        let (y, cache) = member.map_nets[i]
            .trainable
            .forward_batch_cached(&map.sample_inputs);
        let prior = &member.prior_map_samples[i];
        let mut residuals = Array2::zeros((1, n_i));
        let mut acc = 0.0;
        for c in 0..n_i {
            let pred = y[[0, c]] + lam_p * prior[c];
            let r = pred - map.targets[c];
            residuals[[0, c]] = r;
            acc += r * r;
        }
        data_loss += acc / n_i as f64;
        data_caches.push((cache, residuals));
    }
    data_loss /= n_maps as f64;

    if let Some(g) = grads.as_deref_mut() {
        for (i, map) in ctx.maps.iter().enumerate() {
            let n_i = map.sample_verts.len();
            let (cache, residuals) = &data_caches[i];
            let scale = 2.0 * weights.data / (n_maps as f64 * n_i as f64);
            let out_grad = residuals * scale;
            member.map_nets[i]
                .trainable
                .backward_batch(&map.sample_inputs, cache, &out_grad, &mut g.maps[i]);
        }
    }
    drop(data_caches);

    // ---------------- tensor forward on centroids + vertices ----------------
    // column layout: [batch centroids (b), batch vertices (3b)]
    let cent_inputs = ctx.gather_cent_inputs(batch);
    let batch_verts: Vec<usize> = batch
        .iter()
        .flat_map(|&e| ctx.elems[e].verts.into_iter())
        .collect();
    let vert_inputs = ctx.gather_vert_inputs(&batch_verts);
    let mut tensor_in = Array2::zeros((ctx.n_in, 4 * b));
    for c in 0..b {
        for r in 0..ctx.n_in {
            tensor_in[[r, c]] = cent_inputs[[r, c]];
        }
    }
    for c in 0..3 * b {
        for r in 0..ctx.n_in {
            tensor_in[[r, b + c]] = vert_inputs[[r, c]];
        }
    }
    let (tensor_out, tensor_cache) = member
        .tensor_net
        .trainable
        .forward_batch_cached(&tensor_in);
    // raw head values: trainable + lambda_p * prior (prior added pre-squash)
    let mut raw = tensor_out;
    for (c, &e) in batch.iter().enumerate() {
        for r in 0..3 {
            raw[[r, c]] += lam_p * member.prior_tensor_cent[[r, e]];
        }
    }
    for (c, &v) in batch_verts.iter().enumerate() {
        for r in 0..3 {
            raw[[r, b + c]] += lam_p * member.prior_tensor_vert[[r, v]];
        }
    }
    let mut raw_grad = Array2::zeros((3, 4 * b));

    // squashed centroid heads: (c, s, e1, e2) plus squash derivatives
    struct Head {
        c: f64,
        s: f64,
        e1: f64,
        e2: f64,
        dc_dr0: f64,
        ds_dr0: f64,
        de1_dr1: f64,
        de2_dr2: f64,
    }
    let squash = |r0: f64, r1: f64, r2: f64| -> Head {
        let c = r0.tanh();
        let s2 = 1.0 - c * c;
        let s = s2.max(0.0).sqrt();
        Head {
            c,
            s,
            e1: E_MIN + softplus(r1) * E_SCALE,
            e2: E_MIN + softplus(r2) * E_SCALE,
            dc_dr0: s2,
            ds_dr0: -c * s,
            de1_dr1: sigmoid(r1) * E_SCALE,
            de2_dr2: sigmoid(r2) * E_SCALE,
        }
    };

    // ---------------- eikonal term ----------------
    let mut eiko_loss = 0.0;
    let eiko_norm = (n_maps * b) as f64;

    match ctx.mode {
        Mode::Spectral => {
            for (i, map) in ctx.maps.iter().enumerate() {
                let (phi, cache) = member.map_nets[i]
                    .trainable
                    .forward_batch_cached(&vert_inputs);
                let prior = &member.prior_map_vert[i];
                let mut out_grad = Array2::zeros((1, 3 * b));
                for (jb, &e) in batch.iter().enumerate() {
                    let eg = &ctx.elems[e];
                    let mut phi3 = [0.0; 3];
                    for k in 0..3 {
                        phi3[k] = phi[[0, 3 * jb + k]] + lam_p * prior[eg.verts[k]];
                    }
                    let gl = [
                        eg.grad_op[0][0] * phi3[0]
                            + eg.grad_op[0][1] * phi3[1]
                            + eg.grad_op[0][2] * phi3[2],
                        eg.grad_op[1][0] * phi3[0]
                            + eg.grad_op[1][1] * phi3[1]
                            + eg.grad_op[1][2] * phi3[2],
                    ];
                    let h = squash(raw[[0, jb]], raw[[1, jb]], raw[[2, jb]]);
                    let u = h.c * gl[0] + h.s * gl[1];
                    let w = h.c * gl[1] - h.s * gl[0];
                    let q = h.e1 * u * u + h.e2 * w * w;
                    let sq = q.sqrt();
                    let rho = map.t_max * sq - 1.0;
                    if !rho.is_finite() {
                        return Err(Error::NonFiniteResidual { element: e });
                    }
                    eiko_loss += rho * rho / eiko_norm;

                    if grads.is_some() && q > 1e-300 {
                        let dl_dq = weights.eiko * 2.0 * rho / eiko_norm * map.t_max / (2.0 * sq);
                        // map-net path: dq/dgl = 2 D_B gl
                        let dq_dgl = [
                            2.0 * (h.c * h.e1 * u - h.s * h.e2 * w),
                            2.0 * (h.s * h.e1 * u + h.c * h.e2 * w),
                        ];
                        for k in 0..3 {
                            out_grad[[0, 3 * jb + k]] += dl_dq
                                * (dq_dgl[0] * eg.grad_op[0][k] + dq_dgl[1] * eg.grad_op[1][k]);
                        }
                        // tensor path at the centroid column jb
                        let dq_dc = 2.0 * (h.e1 * u * gl[0] + h.e2 * w * gl[1]);
                        let dq_ds = 2.0 * (h.e1 * u * gl[1] - h.e2 * w * gl[0]);
                        raw_grad[[0, jb]] += dl_dq * (dq_dc * h.dc_dr0 + dq_ds * h.ds_dr0);
                        raw_grad[[1, jb]] += dl_dq * u * u * h.de1_dr1;
                        raw_grad[[2, jb]] += dl_dq * w * w * h.de2_dr2;
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    member.map_nets[i]
                        .trainable
                        .backward_batch(&vert_inputs, &cache, &out_grad, &mut g.maps[i]);
                }
            }
        }
        Mode::Cartesian => {
            // physical activation gradient via the input Jacobian at centroids
            let mut tan0 = Array2::zeros((3, 3 * b));
            for j in 0..b {
                for d in 0..3 {
                    tan0[[d, j * 3 + d]] = ctx.coord_scale[d];
                }
            }
            for (i, map) in ctx.maps.iter().enumerate() {
                let cache = member.map_nets[i]
                    .trainable
                    .forward_with_tangents(&cent_inputs, &tan0, 3);
                let prior_jac = &member.prior_map_cent_jac[i];
                let mut tan_grad = Array2::zeros((1, 3 * b));
                for (jb, &e) in batch.iter().enumerate() {
                    let eg = &ctx.elems[e];
                    let mut g3 = [0.0; 3];
                    for d in 0..3 {
                        g3[d] = cache.out_tangent[[0, 3 * jb + d]] + lam_p * prior_jac[[d, e]];
                    }
                    let gvec = crate::Vec3::new(g3[0], g3[1], g3[2]);
                    let gl = [eg.axis1.dot(&gvec), eg.axis2.dot(&gvec)];
                    let h = squash(raw[[0, jb]], raw[[1, jb]], raw[[2, jb]]);
                    let u = h.c * gl[0] + h.s * gl[1];
                    let w = h.c * gl[1] - h.s * gl[0];
                    let q = h.e1 * u * u + h.e2 * w * w;
                    let sq = q.sqrt();
                    let rho = map.t_max * sq - 1.0;
                    if !rho.is_finite() {
                        return Err(Error::NonFiniteResidual { element: e });
                    }
                    eiko_loss += rho * rho / eiko_norm;

                    if grads.is_some() && q > 1e-300 {
                        let dl_dq = weights.eiko * 2.0 * rho / eiko_norm * map.t_max / (2.0 * sq);
                        let dq_dgl = [
                            2.0 * (h.c * h.e1 * u - h.s * h.e2 * w),
                            2.0 * (h.s * h.e1 * u + h.c * h.e2 * w),
                        ];
                        let dg = eg.axis1 * (dl_dq * dq_dgl[0]) + eg.axis2 * (dl_dq * dq_dgl[1]);
                        for d in 0..3 {
                            tan_grad[[0, 3 * jb + d]] += dg[d];
                        }
                        let dq_dc = 2.0 * (h.e1 * u * gl[0] + h.e2 * w * gl[1]);
                        let dq_ds = 2.0 * (h.e1 * u * gl[1] - h.e2 * w * gl[0]);
                        raw_grad[[0, jb]] += dl_dq * (dq_dc * h.dc_dr0 + dq_ds * h.ds_dr0);
                        raw_grad[[1, jb]] += dl_dq * u * u * h.de1_dr1;
                        raw_grad[[2, jb]] += dl_dq * w * w * h.de2_dr2;
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    let out_grad = Array2::zeros((1, b));
                    member.map_nets[i].trainable.backward_with_tangents(
                        &cache,
                        &out_grad,
                        &tan_grad,
                        &mut g.maps[i],
                    );
                }
            }
        }
    }

    // ---------------- smoothness terms on batch-element vertices ----------------
    let mut cv_loss = 0.0;
    let mut ang_loss = 0.0;
    for (jb, &e) in batch.iter().enumerate() {
        let eg = &ctx.elems[e];
        let cols = [b + 3 * jb, b + 3 * jb + 1, b + 3 * jb + 2];
        let heads: Vec<Head> = cols
            .iter()
            .map(|&c| squash(raw[[0, c]], raw[[1, c]], raw[[2, c]]))
            .collect();
        let grad_of = |vals: [f64; 3]| -> [f64; 2] {
            [
                eg.grad_op[0][0] * vals[0] + eg.grad_op[0][1] * vals[1] + eg.grad_op[0][2] * vals[2],
                eg.grad_op[1][0] * vals[0] + eg.grad_op[1][1] * vals[1] + eg.grad_op[1][2] * vals[2],
            ]
        };
        let gl_e1 = grad_of([heads[0].e1, heads[1].e1, heads[2].e1]);
        let gl_e2 = grad_of([heads[0].e2, heads[1].e2, heads[2].e2]);
        let gl_a = grad_of([heads[0].c, heads[1].c, heads[2].c]);
        let (h_e1, dh_e1) = huber(gl_e1, cfg.delta_e);
        let (h_e2, dh_e2) = huber(gl_e2, cfg.delta_e);
        let (h_a, dh_a) = huber(gl_a, cfg.delta_a);
        cv_loss += (h_e1 + h_e2) / b as f64;
        ang_loss += h_a / b as f64;

        if grads.is_some() {
            let base_cv = weights.cv / b as f64;
            let base_ang = weights.ang / b as f64;
            for k in 0..3 {
                let col = cols[k];
                let bk = [eg.grad_op[0][k], eg.grad_op[1][k]];
                let de1 = base_cv * (dh_e1[0] * bk[0] + dh_e1[1] * bk[1]);
                let de2 = base_cv * (dh_e2[0] * bk[0] + dh_e2[1] * bk[1]);
                let da = base_ang * (dh_a[0] * bk[0] + dh_a[1] * bk[1]);
                raw_grad[[0, col]] += da * heads[k].dc_dr0;
                raw_grad[[1, col]] += de1 * heads[k].de1_dr1;
                raw_grad[[2, col]] += de2 * heads[k].de2_dr2;
            }
        }
    }

    if let Some(g) = grads.as_deref_mut() {
        member
            .tensor_net
            .trainable
            .backward_batch(&tensor_in, &tensor_cache, &raw_grad, &mut g.tensor);
    }

    Ok(LossTerms {
        data: data_loss,
        eiko: eiko_loss,
        cv: cv_loss,
        ang: ang_loss,
    })
}

/// Mean-square eikonal residual of explicit per-vertex normalized times and
/// per-element tangent-frame tensors over all elements; the forward/inverse
/// consistency oracle.
pub fn eikonal_residual_msq(
    mesh: &crate::mesh::TriangleSurfaceMesh,
    phi_normalized: &[f64],
    local_tensors: &[crate::Mat2],
    t_max: f64,
) -> f64 {
    let mut acc = 0.0;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let ef = &mesh.element_frames[t];
        let gl = ef.local_gradient([
            phi_normalized[tri[0]],
            phi_normalized[tri[1]],
            phi_normalized[tri[2]],
        ]);
        let d = &local_tensors[t];
        let q = d[(0, 0)] * gl[0] * gl[0]
            + (d[(0, 1)] + d[(1, 0)]) * gl[0] * gl[1]
            + d[(1, 1)] * gl[1] * gl[1];
        let rho = t_max * q.max(0.0).sqrt() - 1.0;
        acc += rho * rho;
    }
    acc / mesh.triangle_count() as f64
}
