//! Precomputed, read-only training context shared by all ensemble members:
//! network inputs per vertex and per element centroid, normalized sample
//! targets, and per-element geometry tables.

use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use crate::spectral::SpectralBasis;
use crate::train::Mode;
use crate::Vec3;
use ndarray::{Array1, Array2};

/// Per-map training data in normalized time units.
#[derive(Debug, Clone)]
pub struct MapData {
    pub sample_verts: Vec<usize>,
    /// Network inputs at the sample vertices, (n_in, N_i).
    pub sample_inputs: Array2<f64>,
    /// Measured times divided by the map's T_max.
    pub targets: Array1<f64>,
    pub t_max: f64,
}

/// Per-element geometry used by the losses.
#[derive(Debug, Clone)]
pub struct ElemGeom {
    pub verts: [usize; 3],
    /// Local 2x3 gradient operator (1/cm).
    pub grad_op: [[f64; 3]; 2],
    /// Element tangent axes (columns of the frame rotation).
    pub axis1: Vec3,
    pub axis2: Vec3,
}

/// Shared immutable training inputs.
#[derive(Debug, Clone)]
pub struct TrainContext {
    pub mode: Mode,
    pub n_in: usize,
    /// Inputs per vertex, (n_in, n_verts).
    pub vert_inputs: Array2<f64>,
    /// Inputs per element centroid, (n_in, n_elems).
    pub cent_inputs: Array2<f64>,
    pub maps: Vec<MapData>,
    pub elems: Vec<ElemGeom>,
    /// Cartesian mode: d(input)/d(coordinate) per axis (2 / bbox extent).
    pub coord_scale: [f64; 3],
    pub mesh_hash: String,
}

impl TrainContext {
    /// Assemble the context. Spectral mode requires a basis computed on the
    /// same mesh; cartesian mode normalizes coordinates into [-1, 1]^3 over
    /// the bounding box (degenerate axes map to 0).
    pub fn build(
        mesh: &TriangleSurfaceMesh,
        basis: Option<&SpectralBasis>,
        dataset: &ActivationDataset,
        mode: Mode,
    ) -> Result<TrainContext> {
        if dataset.mesh_hash != mesh.content_hash() {
            return Err(Error::InvalidConfig(format!(
                "dataset was simulated on mesh {} but the loaded mesh is {}",
                &dataset.mesh_hash[..12.min(dataset.mesh_hash.len())],
                &mesh.content_hash()[..12]
            )));
        }
        let nv = mesh.vertex_count();
        let ne = mesh.triangle_count();

        let (n_in, vert_inputs, coord_scale) = match mode {
            Mode::Spectral => {
                let basis = basis.ok_or_else(|| {
                    Error::InvalidConfig("spectral mode requires an eigenbasis".into())
                })?;
                if basis.mesh_hash != mesh.content_hash() {
                    return Err(Error::InvalidConfig(
                        "eigenbasis belongs to a different mesh".into(),
                    ));
                }
                (basis.n_modes, basis.embedding_matrix(), [0.0; 3])
            }
            Mode::Cartesian => {
                let (lo, hi) = mesh.bounding_box();
                let mut scale = [0.0f64; 3];
                let mut mid = [0.0f64; 3];
                for k in 0..3 {
                    let extent = hi[k] - lo[k];
                    mid[k] = 0.5 * (hi[k] + lo[k]);
                    scale[k] = if extent > 1e-12 { 2.0 / extent } else { 0.0 };
                }
                let mut x = Array2::zeros((3, nv));
                for (v, p) in mesh.vertices.iter().enumerate() {
                    for k in 0..3 {
                        x[[k, v]] = (p[k] - mid[k]) * scale[k];
                    }
                }
                (3, x, scale)
            }
        };

        // centroid inputs are the barycentric mean of the vertex inputs in
        // both modes (exact for the affine cartesian map)
        let mut cent_inputs = Array2::zeros((n_in, ne));
        for (t, tri) in mesh.triangles.iter().enumerate() {
            for r in 0..n_in {
                cent_inputs[[r, t]] = (vert_inputs[[r, tri[0]]]
                    + vert_inputs[[r, tri[1]]]
                    + vert_inputs[[r, tri[2]]])
                    / 3.0;
            }
        }

        let mut maps = Vec::with_capacity(dataset.n_maps());
        for (i, map) in dataset.maps.iter().enumerate() {
            if map.samples.is_empty() {
                return Err(Error::EmptyMap { map: i });
            }
            if !(map.t_max > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "map {i} has non-positive T_max"
                )));
            }
            let n_i = map.samples.len();
            let mut inputs = Array2::zeros((n_in, n_i));
            let mut targets = Array1::zeros(n_i);
            let mut verts = Vec::with_capacity(n_i);
            for (c, (v, t)) in map.samples.iter().enumerate() {
                verts.push(*v);
                targets[c] = t / map.t_max;
                for r in 0..n_in {
                    inputs[[r, c]] = vert_inputs[[r, *v]];
                }
            }
            maps.push(MapData {
                sample_verts: verts,
                sample_inputs: inputs,
                targets,
                t_max: map.t_max,
            });
        }

        let elems = mesh
            .triangles
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let ef = &mesh.element_frames[t];
                let (axis1, axis2) = ef.tangent_axes();
                ElemGeom {
                    verts: *tri,
                    grad_op: ef.grad_operator,
                    axis1,
                    axis2,
                }
            })
            .collect();

        Ok(TrainContext {
            mode,
            n_in,
            vert_inputs,
            cent_inputs,
            maps,
            elems,
            coord_scale,
            mesh_hash: mesh.content_hash().to_string(),
        })
    }

    pub fn n_maps(&self) -> usize {
        self.maps.len()
    }

    pub fn n_elems(&self) -> usize {
        self.elems.len()
    }

    pub fn n_verts(&self) -> usize {
        self.vert_inputs.ncols()
    }

    /// Gather input columns for a list of vertices.
    pub fn gather_vert_inputs(&self, verts: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_in, verts.len()));
        for (c, &v) in verts.iter().enumerate() {
            for r in 0..self.n_in {
                out[[r, c]] = self.vert_inputs[[r, v]];
            }
        }
        out
    }

    /// Gather input columns for a list of element centroids.
    pub fn gather_cent_inputs(&self, elems: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_in, elems.len()));
        for (c, &e) in elems.iter().enumerate() {
            for r in 0..self.n_in {
                out[[r, c]] = self.cent_inputs[[r, e]];
            }
        }
        out
    }
}
