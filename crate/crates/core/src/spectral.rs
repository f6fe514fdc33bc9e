//! Laplace-Beltrami spectral basis: cotangent stiffness, lumped mass, a block
//! Rayleigh-Ritz eigensolver for the smallest modes, and the scaled
//! eigenfunction embedding used as network input.

use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use crate::sparse::CsrMatrix;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Eigenvalue-change stagnation tolerance.
const EIG_TOL: f64 = 1e-8;
/// Generalized residual acceptance: ||K v - lambda M v|| / ||v||.
const RESIDUAL_TOL: f64 = 1e-6;
const MAX_ITER: usize = 10_000;

/// The first `n_modes` non-constant Laplace-Beltrami eigenfunctions of a mesh
/// plus the trivial zero mode (kept for diagnostics, excluded from the
/// embedding).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralBasis {
    /// `n_modes + 1` eigenvalues ascending, starting at the zero mode.
    pub eigenvalues: Vec<f64>,
    /// Matching eigenfunctions, M-orthonormal, sign-fixed (largest-magnitude
    /// entry positive). `eigenfunctions[k][v]` is mode k at vertex v.
    pub eigenfunctions: Vec<Vec<f64>>,
    /// Max-abs scale per non-constant mode; embeddings are v_k / scale_k.
    pub scales: Vec<f64>,
    pub n_modes: usize,
    /// Content hash of the mesh the basis belongs to.
    pub mesh_hash: String,
}

impl SpectralBasis {
    /// Assemble the FEM operators and solve for the `n_modes + 1` smallest
    /// generalized eigenpairs.
    pub fn compute(mesh: &TriangleSurfaceMesh, n_modes: usize) -> Result<SpectralBasis> {
        let k = assemble_cotan_stiffness(mesh);
        let m = assemble_lumped_mass(mesh);
        let (eigenvalues, eigenfunctions) = smallest_eigenpairs(&k, &m, n_modes)?;
        let scales = eigenfunctions[1..]
            .iter()
            .map(|v| {
                let s = v.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(SpectralBasis {
            eigenvalues,
            eigenfunctions,
            scales,
            n_modes,
            mesh_hash: mesh.content_hash().to_string(),
        })
    }

    /// Scaled embedding of a vertex: the non-constant eigenfunctions at that
    /// vertex, each divided by its max-abs so coordinates lie in [-1, 1].
    pub fn embed(&self, vertex: usize) -> Vec<f64> {
        (0..self.n_modes)
            .map(|k| self.eigenfunctions[k + 1][vertex] / self.scales[k])
            .collect()
    }

    /// Dense embedding matrix, shape (n_modes, n_vertices).
    pub fn embedding_matrix(&self) -> ndarray::Array2<f64> {
        let nv = self.eigenfunctions[0].len();
        let mut out = ndarray::Array2::zeros((self.n_modes, nv));
        for k in 0..self.n_modes {
            for v in 0..nv {
                out[[k, v]] = self.eigenfunctions[k + 1][v] / self.scales[k];
            }
        }
        out
    }

    /// Write the basis to a JSON cache file.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Load a cached basis; `None` when the file is absent or belongs to a
    /// different mesh / mode count.
    pub fn load_cache(path: &Path, mesh_hash: &str, n_modes: usize) -> Result<Option<SpectralBasis>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let basis: SpectralBasis = serde_json::from_str(&text)?;
        if basis.mesh_hash == mesh_hash && basis.n_modes == n_modes {
            Ok(Some(basis))
        } else {
            Ok(None)
        }
    }
}

/// Cotangent stiffness matrix K (symmetric PSD, K 1 = 0). Obtuse triangles
/// keep their negative cotangent weights.
pub fn assemble_cotan_stiffness(mesh: &TriangleSurfaceMesh) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(mesh.triangle_count() * 12);
    for tri in &mesh.triangles {
        for k in 0..3 {
            let i = tri[(k + 1) % 3];
            let j = tri[(k + 2) % 3];
            let o = tri[k];
            let a = mesh.vertices[i] - mesh.vertices[o];
            let b = mesh.vertices[j] - mesh.vertices[o];
            let cross = a.cross(&b).norm();
            let cot = a.dot(&b) / cross;
            let w = 0.5 * cot;
            triplets.push((i, i, w));
            triplets.push((j, j, w));
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
        }
    }
    CsrMatrix::from_triplets(mesh.vertex_count(), triplets)
}

/// Lumped (barycentric) mass: M_ii = sum of incident triangle areas / 3.
pub fn assemble_lumped_mass(mesh: &TriangleSurfaceMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.vertex_count()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let third = mesh.element_frames[t].area / 3.0;
        for &v in tri {
            m[v] += third;
        }
    }
    m
}

/// Solve K v = lambda M v for the `count + 1` smallest eigenpairs (the extra
/// one is the zero mode) by block Rayleigh-Ritz iteration on the similarity
/// transform M^{-1/2} K M^{-1/2}, Jacobi-preconditioned, with full
/// reorthonormalization.
///
/// Returns eigenvalues ascending and M-orthonormal, sign-fixed eigenvectors.
pub fn smallest_eigenpairs(
    k: &CsrMatrix,
    m: &[f64],
    count: usize,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k.n;
    let wanted = count + 1;
    assert!(wanted <= n, "more modes requested than vertices");
    let sqrt_m: Vec<f64> = m.iter().map(|&x| x.sqrt()).collect();

    // A = M^{-1/2} K M^{-1/2}, applied through the CSR of K
    let apply = |x: &[f64], y: &mut [f64], tmp: &mut [f64]| {
        for i in 0..n {
            tmp[i] = x[i] / sqrt_m[i];
        }
        k.matvec(tmp, y);
        for i in 0..n {
            y[i] /= sqrt_m[i];
        }
    };

    let diag_a: Vec<f64> = k
        .diagonal()
        .iter()
        .zip(m)
        .map(|(&kii, &mii)| kii / mii)
        .collect();
    let max_diag = diag_a.iter().fold(0.0f64, |a, &b| a.max(b));
    let precond_floor = 1e-12 * max_diag.max(1e-300);

    let guard = (wanted / 2).max(4);
    let block = (wanted + guard).min(n);

    // deterministic start: constant column plus seeded noise
    let mut rng = crate::nn::seeded_rng(0x5eed_ba51);
    let mut x_cols: Vec<Vec<f64>> = (0..block)
        .map(|j| {
            if j == 0 {
                vec![1.0 / (n as f64).sqrt(); n]
            } else {
                (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
            }
        })
        .collect();
    orthonormalize(&mut x_cols, &[]);

    let mut p_cols: Vec<Vec<f64>> = Vec::new();
    let mut prev_eigs: Vec<f64> = vec![f64::INFINITY; wanted];
    let mut tmp = vec![0.0; n];
    let mut converged = false;
    let mut ritz_vals: Vec<f64> = Vec::new();

    for _iter in 0..MAX_ITER {
        // subspace [X W P]
        let mut ax_cols: Vec<Vec<f64>> = x_cols
            .iter()
            .map(|x| {
                let mut y = vec![0.0; n];
                apply(x, &mut y, &mut tmp);
                y
            })
            .collect();

        // Ritz on current X to get residuals
        let h = gram(&x_cols, &ax_cols);
        let (vals, vecs) = sym_eig_ascending(&h);
        let rot_x = rotate(&x_cols, &vecs);
        let rot_ax = rotate(&ax_cols, &vecs);
        x_cols = rot_x;
        ax_cols = rot_ax;
        ritz_vals = vals;

        // convergence: eigenvalue stagnation + generalized residuals
        let scale = ritz_vals[wanted - 1].abs().max(1e-12 * max_diag).max(1e-300);
        let eig_moved = ritz_vals[..wanted]
            .iter()
            .zip(&prev_eigs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        prev_eigs.copy_from_slice(&ritz_vals[..wanted]);
        if eig_moved < EIG_TOL * scale {
            let worst = worst_generalized_residual(k, m, &sqrt_m, &x_cols, &ritz_vals, wanted);
            if worst < RESIDUAL_TOL {
                converged = true;
                break;
            }
        }

        // residual block, preconditioned
        let mut w_cols: Vec<Vec<f64>> = Vec::with_capacity(block);
        for j in 0..block {
            let lam = ritz_vals[j];
            let mut r: Vec<f64> = (0..n).map(|i| ax_cols[j][i] - lam * x_cols[j][i]).collect();
            for i in 0..n {
                r[i] /= diag_a[i].max(precond_floor);
            }
            w_cols.push(r);
        }

        let mut basis = x_cols.clone();
        let x_len = basis.len();
        basis.extend(w_cols);
        basis.extend(p_cols.iter().cloned());
        orthonormalize_tail(&mut basis, x_len);

        let a_basis: Vec<Vec<f64>> = basis
            .iter()
            .map(|x| {
                let mut y = vec![0.0; n];
                apply(x, &mut y, &mut tmp);
                y
            })
            .collect();
        let h = gram(&basis, &a_basis);
        let (_, vecs) = sym_eig_ascending(&h);
        let keep: Vec<Vec<f64>> = vecs[..block.min(vecs.len())].to_vec();
        let x_new = rotate(&basis, &keep);

        // conjugate block: the component of the update outside span(X)
        let mut p_new: Vec<Vec<f64>> = Vec::with_capacity(block);
        for col in &x_new {
            let mut p = col.clone();
            for x in &x_cols {
                let d = dot(x, &p);
                axpy(&mut p, x, -d);
            }
            p_new.push(p);
        }
        orthonormalize(&mut p_new, &[]);
        p_new.truncate(block);

        x_cols = x_new;
        orthonormalize(&mut x_cols, &[]);
        p_cols = p_new;
    }

    if !converged {
        let worst = worst_generalized_residual(k, m, &sqrt_m, &x_cols, &ritz_vals, wanted);
        if worst >= RESIDUAL_TOL {
            return Err(Error::EigenNoConvergence {
                iterations: MAX_ITER,
                residual: worst,
            });
        }
    }

    // back-transform to M-orthonormal eigenvectors, fix signs
    let mut eigenvalues = Vec::with_capacity(wanted);
    let mut eigenvectors = Vec::with_capacity(wanted);
    for j in 0..wanted {
        eigenvalues.push(ritz_vals[j]);
        let mut v: Vec<f64> = (0..n).map(|i| x_cols[j][i] / sqrt_m[i]).collect();
        fix_sign(&mut v);
        eigenvectors.push(v);
    }
    Ok((eigenvalues, eigenvectors))
}

/// Rayleigh quotient v^T K v / v^T M v; test helper for the returned modes.
pub fn rayleigh_quotient(k: &CsrMatrix, m: &[f64], v: &[f64]) -> f64 {
    let mut kv = vec![0.0; v.len()];
    k.matvec(v, &mut kv);
    let num = dot(v, &kv);
    let den: f64 = v.iter().zip(m).map(|(&x, &mi)| x * x * mi).sum();
    num / den
}

fn worst_generalized_residual(
    k: &CsrMatrix,
    m: &[f64],
    sqrt_m: &[f64],
    x_cols: &[Vec<f64>],
    vals: &[f64],
    wanted: usize,
) -> f64 {
    let n = k.n;
    let mut worst = 0.0f64;
    for j in 0..wanted {
        let v: Vec<f64> = (0..n).map(|i| x_cols[j][i] / sqrt_m[i]).collect();
        let mut kv = vec![0.0; n];
        k.matvec(&v, &mut kv);
        let mut rr = 0.0;
        let mut vv = 0.0;
        for i in 0..n {
            let r = kv[i] - vals[j] * m[i] * v[i];
            rr += r * r;
            vv += v[i] * v[i];
        }
        worst = worst.max((rr / vv).sqrt());
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], x: &[f64], alpha: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Modified Gram-Schmidt (two passes) over `cols`, in place; drops columns
/// that lose all length. `against` columns are projected out first.
fn orthonormalize(cols: &mut Vec<Vec<f64>>, against: &[Vec<f64>]) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for col in cols.drain(..) {
        let mut c = col;
        for _pass in 0..2 {
            for a in against {
                let d = dot(a, &c);
                axpy(&mut c, a, -d);
            }
            for o in &out {
                let d = dot(o, &c);
                axpy(&mut c, o, -d);
            }
        }
        let norm = dot(&c, &c).sqrt();
        if norm > 1e-10 {
            for x in &mut c {
                *x /= norm;
            }
            out.push(c);
        }
    }
    *cols = out;
}

/// Orthonormalize `cols[start..]` against the (already orthonormal) head and
/// themselves.
fn orthonormalize_tail(cols: &mut Vec<Vec<f64>>, start: usize) {
    let head: Vec<Vec<f64>> = cols[..start].to_vec();
    let mut tail: Vec<Vec<f64>> = cols.split_off(start);
    orthonormalize(&mut tail, &head);
    cols.extend(tail);
}

/// Gram matrix B[i][j] = cols_a[i] . cols_b[j], symmetrized.
fn gram(cols_a: &[Vec<f64>], cols_b: &[Vec<f64>]) -> DMatrix<f64> {
    let b = cols_a.len();
    let mut h = DMatrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            h[(i, j)] = dot(&cols_a[i], &cols_b[j]);
        }
    }
    // enforce symmetry against rounding
    let ht = h.transpose();
    (h + ht) * 0.5
}

/// Eigen-decomposition of a small dense symmetric matrix, ascending; returns
/// (values, eigenvector columns).
fn sym_eig_ascending(h: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let se = h.clone().symmetric_eigen();
    let b = h.nrows();
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&a, &c| se.eigenvalues[a].total_cmp(&se.eigenvalues[c]));
    let vals = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .map(|&i| se.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

/// Linear combinations: out[j] = sum_i cols[i] * coeff[j][i].
fn rotate(cols: &[Vec<f64>], coeffs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = cols[0].len();
    coeffs
        .iter()
        .map(|c| {
            let mut out = vec![0.0; n];
            for (col, &w) in cols.iter().zip(c.iter()) {
                axpy(&mut out, col, w);
            }
            out
        })
        .collect()
}

/// Sign convention: the entry of largest magnitude is positive (first such
/// index wins ties).
fn fix_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}
