//! Evaluation metrics: activation-map RMSE, unoriented fiber angle error,
//! the median fiber error, and the aggregated evaluation report.

use crate::dataset::ActivationDataset;
use crate::eikonal::GroundTruthField;
use crate::mesh::TriangleSurfaceMesh;
use crate::parallel::Parallelism;
use crate::select::{select_field, FiberSelectionResult, SelectionMethod};
use crate::stats;
use crate::tensor::principal_fiber;
use crate::train::EnsembleState;
use crate::Vec3;
use serde::{Deserialize, Serialize};

/// Root-mean-square difference between two per-vertex time fields (ms).
pub fn rmse_map(predicted: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "field length mismatch");
    let acc: f64 = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (acc / truth.len() as f64).sqrt()
}

/// Unoriented angle between two unit vectors, in degrees, in [0, 90].
pub fn angle_error_deg(f_true: &Vec3, f_pred: &Vec3) -> f64 {
    let dot = f_true.dot(f_pred).abs().clamp(0.0, 1.0);
    dot.acos().to_degrees()
}

/// Median of a per-vertex angle-error field (degrees).
pub fn fiber_error_median(errors: &[f64]) -> f64 {
    stats::median(errors)
}

/// Per-map RMSE summary: mean and standard deviation over ensemble members.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapErrorSummary {
    pub map: usize,
    pub rmse_mean_ms: f64,
    pub rmse_std_ms: f64,
    pub per_member_ms: Vec<f64>,
}

/// Full evaluation of a trained ensemble against ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Per-map activation reconstruction errors.
    pub maps: Vec<MapErrorSummary>,
    /// Median fiber error per member (degrees).
    pub member_fe_deg: Vec<f64>,
    /// Mean of the member fiber errors.
    pub ensemble_mean_fe_deg: f64,
    /// Min/max member fiber error (the range).
    pub fe_range_deg: (f64, f64),
    pub mean_tensor_fe_deg: f64,
    pub medoid_fe_deg: f64,
    /// Disparity summary over vertices (medoid selection).
    pub disparity_mean: f64,
    pub disparity_median: f64,
    pub disparity_max: f64,
    /// Spearman rank correlation between disparity and the medoid
    /// angle-error field.
    pub disparity_error_spearman: f64,
    pub wall_seconds: f64,
    pub config: crate::train::TrainingConfig,
}

/// Compute every metric for a trained ensemble. Also returns the medoid and
/// mean-tensor selections so callers can export them.
pub fn evaluate(
    state: &EnsembleState,
    mesh: &TriangleSurfaceMesh,
    dataset: &ActivationDataset,
    truth: &GroundTruthField,
    parallelism: Parallelism,
) -> (EvaluationReport, FiberSelectionResult, FiberSelectionResult) {
    let start = std::time::Instant::now();
    let s_e = state.members.len();
    let n_maps = dataset.n_maps();

    // activation-map errors: denormalized predictions vs the noiseless truth
    let mut maps = Vec::with_capacity(n_maps);
    for i in 0..n_maps {
        let truth_field = &dataset.maps[i].full_solution;
        let t_max = dataset.maps[i].t_max;
        let per_member: Vec<f64> = (0..s_e)
            .map(|k| {
                let pred: Vec<f64> = state
                    .predict_map_field(k, i)
                    .into_iter()
                    .map(|t| t * t_max)
                    .collect();
                rmse_map(&pred, truth_field)
            })
            .collect();
        maps.push(MapErrorSummary {
            map: i,
            rmse_mean_ms: stats::mean(&per_member),
            rmse_std_ms: stats::std_dev(&per_member),
            per_member_ms: per_member,
        });
    }

    // per-member fiber errors against ground truth
    let member_fe_deg: Vec<f64> = (0..s_e)
        .map(|k| {
            let heads = state.predict_heads_at_vertices(k);
            let errors: Vec<f64> = (0..mesh.vertex_count())
                .map(|v| {
                    let (p1, p2) = mesh.vertex_frames[v];
                    let f = principal_fiber(&heads[v], p1, p2);
                    angle_error_deg(&truth.fibers[v], &f)
                })
                .collect();
            fiber_error_median(&errors)
        })
        .collect();

    let medoid = select_field(state, mesh, SelectionMethod::Medoid, parallelism);
    let mean_tensor = select_field(state, mesh, SelectionMethod::MeanTensor, parallelism);

    let medoid_errors: Vec<f64> = (0..mesh.vertex_count())
        .map(|v| angle_error_deg(&truth.fibers[v], &medoid.fibers[v]))
        .collect();
    let mean_errors: Vec<f64> = (0..mesh.vertex_count())
        .map(|v| angle_error_deg(&truth.fibers[v], &mean_tensor.fibers[v]))
        .collect();

    let fe_min = member_fe_deg.iter().copied().fold(f64::INFINITY, f64::min);
    let fe_max = member_fe_deg.iter().copied().fold(0.0f64, f64::max);

    let report = EvaluationReport {
        ensemble_mean_fe_deg: stats::mean(&member_fe_deg),
        fe_range_deg: (fe_min, fe_max),
        mean_tensor_fe_deg: fiber_error_median(&mean_errors),
        medoid_fe_deg: fiber_error_median(&medoid_errors),
        disparity_mean: stats::mean(&medoid.disparity),
        disparity_median: stats::median(&medoid.disparity),
        disparity_max: medoid.disparity.iter().copied().fold(0.0f64, f64::max),
        disparity_error_spearman: stats::spearman(&medoid.disparity, &medoid_errors),
        member_fe_deg,
        maps,
        wall_seconds: start.elapsed().as_secs_f64(),
        config: state.config.clone(),
    };
    (report, medoid, mean_tensor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_cases() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(rmse_map(&a, &a), 0.0);
        let b = vec![1.5, 2.5, 3.5];
        assert!((rmse_map(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        use rand::Rng;
        let mut rng = crate::nn::seeded_rng(4);
        let a: Vec<f64> = (0..501).map(|_| rng.random::<f64>() * 30.0).collect();
        let b: Vec<f64> = (0..501).map(|_| rng.random::<f64>() * 30.0).collect();
        let fast = rmse_map(&a, &b);
        let mean_sq =
            a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
        assert!((fast - mean_sq.sqrt()).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "length mismatch")]
    fn rmse_length_mismatch_panics() {
        rmse_map(&[1.0], &[1.0, 2.0]);
    }

    #[test]
    fn angle_error_cases() {
        let x = Vec3::x();
        assert_eq!(angle_error_deg(&x, &x), 0.0);
        assert_eq!(angle_error_deg(&x, &(-x)), 0.0);
        assert!((angle_error_deg(&x, &Vec3::y()) - 90.0).abs() < 1e-12);
        let d45 = Vec3::new(1.0, 1.0, 0.0) / 2.0f64.sqrt();
        assert!((angle_error_deg(&x, &d45) - 45.0).abs() < 1e-9);
    }

    #[test]
    fn fe_median_cases() {
        assert_eq!(fiber_error_median(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(fiber_error_median(&[10.0, 30.0, 20.0]), 20.0);
        let sorted_oracle = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            if s.len() % 2 == 1 {
                s[s.len() / 2]
            } else {
                0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
            }
        };
        use rand::Rng;
        let mut rng = crate::nn::seeded_rng(6);
        let field: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 90.0).collect();
        assert_eq!(fiber_error_median(&field), sorted_oracle(&field));
    }
}
