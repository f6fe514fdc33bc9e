//! VTK export of ground truth, selected fibers and diagnostic fields.

use crate::dataset::ActivationDataset;
use crate::eikonal::GroundTruthField;
use crate::error::Result;
use crate::mesh::TriangleSurfaceMesh;
use crate::mesh_io::{write_vtk, PointData};
use crate::metrics::angle_error_deg;
use crate::select::FiberSelectionResult;
use std::path::Path;

/// Write a legacy VTK file with ground-truth fibers, the selected fibers,
/// the per-vertex angle error, disparity and the true activation maps.
/// `include_member_fibers` adds one vector field per ensemble member.
pub fn export_fields(
    path: &Path,
    mesh: &TriangleSurfaceMesh,
    truth: &GroundTruthField,
    selection: &FiberSelectionResult,
    dataset: &ActivationDataset,
    include_member_fibers: bool,
) -> Result<()> {
    let nv = mesh.vertex_count();
    let beta: Vec<f64> = (0..nv)
        .map(|v| angle_error_deg(&truth.fibers[v], &selection.fibers[v]))
        .collect();

    let mut data = PointData::default()
        .with_vector("truth_fiber", truth.fibers.clone())
        .with_vector("selected_fiber", selection.fibers.clone())
        .with_scalar("angle_error_deg", beta)
        .with_scalar("disparity_rad", selection.disparity.clone());
    for (i, map) in dataset.maps.iter().enumerate() {
        data = data.with_scalar(&format!("activation_{i}_ms"), map.full_solution.clone());
    }
    if include_member_fibers {
        let s_e = selection.member_fibers.first().map_or(0, |m| m.len());
        for k in 0..s_e {
            let fibers: Vec<crate::Vec3> =
                (0..nv).map(|v| selection.member_fibers[v][k]).collect();
            data = data.with_vector(&format!("member_{k}_fiber"), fibers);
        }
    }
    write_vtk(path, mesh, &data)
}
