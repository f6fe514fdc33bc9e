//! Ensemble training: configuration, member state with frozen randomized
//! priors, the iteration loop, and checkpointing.

pub mod context;
pub mod losses;

use crate::adam::AdamState;
use crate::dataset::ActivationDataset;
use crate::error::{Error, Result};
use crate::mesh::TriangleSurfaceMesh;
use crate::nn::RandomizedPriorPair;
use crate::parallel::{self, Parallelism};
use crate::spectral::SpectralBasis;
use crate::tensor::{head_squash, TensorHead};
use context::TrainContext;
use losses::{member_eval, LossTerms, LossWeights, MemberGrads};
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Activation-map network: 5 hidden layers of 20 units.
pub const MAP_HIDDEN: [usize; 5] = [20; 5];
/// Tensor network: 7 hidden layers of 20 units.
pub const TENSOR_HIDDEN: [usize; 7] = [20; 7];

const CHECKPOINT_VERSION: u32 = 1;

/// Network input encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Laplace-Beltrami eigenfunction inputs; spatial gradients via the FEM
    /// element operator.
    Spectral,
    /// Normalized cartesian inputs; spatial gradients via the exact network
    /// input Jacobian.
    Cartesian,
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub lambda_data: f64,
    pub lambda_eiko: f64,
    pub lambda_cv: f64,
    pub lambda_ang: f64,
    /// Huber threshold for the squared-velocity smoothness.
    pub delta_e: f64,
    /// Huber threshold for the angle-cosine smoothness.
    pub delta_a: f64,
    /// Ensemble size S_e.
    pub ensemble_size: usize,
    /// Prior contribution scale.
    pub lambda_p: f64,
    /// Collocation batch size (elements per iteration).
    pub batch: usize,
    pub iterations: usize,
    /// Number of non-constant eigenfunctions (spectral mode input width).
    pub n_modes: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl TrainingConfig {
    /// Spectral-mode defaults.
    pub fn spectral_defaults(seed: u64) -> TrainingConfig {
        TrainingConfig {
            mode: Mode::Spectral,
            lambda_data: 1e-1,
            lambda_eiko: 1e-4,
            lambda_cv: 1e-5,
            lambda_ang: 1e-8,
            delta_e: 1.0,
            delta_a: 1.0,
            ensemble_size: 20,
            lambda_p: 1e-3,
            batch: 64,
            iterations: 50_000,
            n_modes: 10,
            seed,
            learning_rate: 1e-3,
        }
    }

    /// Cartesian-mode defaults (stronger eikonal weight, weaker angle TV).
    pub fn cartesian_defaults(seed: u64) -> TrainingConfig {
        TrainingConfig {
            mode: Mode::Cartesian,
            lambda_eiko: 1e-3,
            lambda_ang: 1e-9,
            ..TrainingConfig::spectral_defaults(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_data", self.lambda_data),
            ("lambda_eiko", self.lambda_eiko),
            ("lambda_cv", self.lambda_cv),
            ("lambda_ang", self.lambda_ang),
            ("lambda_p", self.lambda_p),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        if self.ensemble_size == 0 {
            return Err(Error::InvalidConfig("ensemble_size must be >= 1".into()));
        }
        if !(self.delta_e > 0.0 && self.delta_a > 0.0) {
            return Err(Error::InvalidConfig("Huber thresholds must be > 0".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.mode == Mode::Spectral && self.n_modes == 0 {
            return Err(Error::InvalidConfig("spectral mode needs n_modes >= 1".into()));
        }
        Ok(())
    }

    fn map_dims(&self, n_in: usize) -> Vec<usize> {
        let mut d = vec![n_in];
        d.extend_from_slice(&MAP_HIDDEN);
        d.push(1);
        d
    }

    fn tensor_dims(&self, n_in: usize) -> Vec<usize> {
        let mut d = vec![n_in];
        d.extend_from_slice(&TENSOR_HIDDEN);
        d.push(3);
        d
    }
}

/// Reference to an evaluation point: a mesh vertex or an element centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointRef {
    Vertex(usize),
    Centroid(usize),
}

/// One ensemble member: trainable/prior network pairs plus Adam state and
/// cached prior outputs (priors are frozen, so their contribution at every
/// mesh point is precomputed once).
#[derive(Debug, Clone)]
pub struct Member {
    pub tensor_net: RandomizedPriorPair,
    pub map_nets: Vec<RandomizedPriorPair>,
    pub tensor_adam: AdamState,
    pub map_adams: Vec<AdamState>,
    /// Prior raw head outputs at vertices, (3, n_verts).
    pub prior_tensor_vert: Array2<f64>,
    /// Prior raw head outputs at element centroids, (3, n_elems).
    pub prior_tensor_cent: Array2<f64>,
    /// Per map: prior activation values at all vertices.
    pub prior_map_vert: Vec<Array1<f64>>,
    /// Per map: prior activation values at element centroids.
    pub prior_map_cent: Vec<Array1<f64>>,
    /// Per map: prior values gathered at the map's sample vertices.
    pub prior_map_samples: Vec<Array1<f64>>,
    /// Cartesian mode only: physical-space prior gradient at centroids,
    /// (3, n_elems) per map.
    pub prior_map_cent_jac: Vec<Array2<f64>>,
}

impl Member {
    fn init(cfg: &TrainingConfig, ctx: &TrainContext, index: usize) -> Member {
        let mut rng = crate::nn::rng_from_bytes(crate::hash::derive_seed(
            cfg.seed,
            "member",
            &[index as u64],
        ));
        let tensor_net = RandomizedPriorPair::init(&cfg.tensor_dims(ctx.n_in), cfg.lambda_p, &mut rng);
        let map_nets: Vec<RandomizedPriorPair> = (0..ctx.n_maps())
            .map(|_| RandomizedPriorPair::init(&cfg.map_dims(ctx.n_in), cfg.lambda_p, &mut rng))
            .collect();
        let tensor_adam = AdamState::new(&tensor_net.trainable, cfg.learning_rate);
        let map_adams = map_nets
            .iter()
            .map(|p| AdamState::new(&p.trainable, cfg.learning_rate))
            .collect();
        let mut member = Member {
            tensor_net,
            map_nets,
            tensor_adam,
            map_adams,
            prior_tensor_vert: Array2::zeros((0, 0)),
            prior_tensor_cent: Array2::zeros((0, 0)),
            prior_map_vert: Vec::new(),
            prior_map_cent: Vec::new(),
            prior_map_samples: Vec::new(),
            prior_map_cent_jac: Vec::new(),
        };
        member.rebuild_prior_caches(ctx);
        member
    }

    /// Evaluate the frozen priors over all vertices and centroids.
    pub fn rebuild_prior_caches(&mut self, ctx: &TrainContext) {
        self.prior_tensor_vert = self.tensor_net.prior.forward_batch(&ctx.vert_inputs);
        self.prior_tensor_cent = self.tensor_net.prior.forward_batch(&ctx.cent_inputs);
        self.prior_map_vert.clear();
        self.prior_map_cent.clear();
        self.prior_map_samples.clear();
        self.prior_map_cent_jac.clear();
        for (i, map) in ctx.maps.iter().enumerate() {
            let vert = self.map_nets[i].prior.forward_batch(&ctx.vert_inputs);
            let vert = vert.row(0).to_owned();
            let cent = self.map_nets[i].prior.forward_batch(&ctx.cent_inputs);
            self.prior_map_cent.push(cent.row(0).to_owned());
            let samples = Array1::from_iter(map.sample_verts.iter().map(|&v| vert[v]));
            self.prior_map_vert.push(vert);
            self.prior_map_samples.push(samples);
            if ctx.mode == Mode::Cartesian {
                let mut jac = Array2::zeros((3, ctx.n_elems()));
                for e in 0..ctx.n_elems() {
                    let x: Vec<f64> = ctx.cent_inputs.column(e).to_vec();
                    let (_, j) = self.map_nets[i].prior.input_jacobian(&x);
                    for d in 0..3 {
                        jac[[d, e]] = j[[0, d]] * ctx.coord_scale[d];
                    }
                }
                self.prior_map_cent_jac.push(jac);
            }
        }
    }
}

/// Serialized member parameters (prior caches are rebuilt on load).
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemberParams {
    tensor_net: RandomizedPriorPair,
    map_nets: Vec<RandomizedPriorPair>,
    tensor_adam: AdamState,
    map_adams: Vec<AdamState>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: TrainingConfig,
    mesh_hash: String,
    iteration: usize,
    members: Vec<MemberParams>,
}

/// Loss history entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub iteration: usize,
    pub losses: LossTerms,
}

/// The ensemble plus everything needed to train and evaluate it.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub config: TrainingConfig,
    pub ctx: TrainContext,
    pub members: Vec<Member>,
    pub iteration: usize,
}

impl EnsembleState {
    /// Initialize an untrained ensemble (independent Glorot seeds per member).
    pub fn init(
        mesh: &TriangleSurfaceMesh,
        basis: Option<&SpectralBasis>,
        dataset: &ActivationDataset,
        config: TrainingConfig,
    ) -> Result<EnsembleState> {
        config.validate()?;
        let ctx = TrainContext::build(mesh, basis, dataset, config.mode)?;
        let members = (0..config.ensemble_size)
            .map(|k| Member::init(&config, &ctx, k))
            .collect();
        Ok(EnsembleState {
            config,
            ctx,
            members,
            iteration: 0,
        })
    }

    pub fn n_maps(&self) -> usize {
        self.ctx.n_maps()
    }

    /// Run `iterations` training steps. Each iteration: one shared collocation
    /// batch, per-member loss gradients (optionally in parallel; results are
    /// identical), one Adam step per network. `progress` fires every 100
    /// iterations and on the last one.
    pub fn train(
        &mut self,
        iterations: usize,
        parallelism: Parallelism,
        progress: &mut dyn FnMut(&ProgressRecord),
    ) -> Result<Vec<ProgressRecord>> {
        let weights = LossWeights::from_config(&self.config);
        let batch_size = self.config.batch.min(self.ctx.n_elems());
        let mut rng = crate::nn::rng_from_bytes(crate::hash::derive_seed(
            self.config.seed,
            "batches",
            &[],
        ));
        // fast-forward the batch stream when resuming from a checkpoint
        for _ in 0..self.iteration {
            let _ = draw_batch(&mut rng, self.ctx.n_elems(), batch_size);
        }

        let mut history = Vec::new();
        for step in 0..iterations {
            let iteration = self.iteration + step;
            let batch = draw_batch(&mut rng, self.ctx.n_elems(), batch_size);

            let results: Vec<Result<(LossTerms, MemberGrads)>> = parallel::map_indexed(
                parallelism,
                self.members.len(),
                |k| {
                    let member = &self.members[k];
                    let mut grads = MemberGrads::zeros_like(member);
                    let losses = member_eval(
                        member,
                        &self.ctx,
                        &self.config,
                        &batch,
                        &weights,
                        Some(&mut grads),
                    )?;
                    Ok((losses, grads))
                },
            );

            let mut mean = LossTerms {
                data: 0.0,
                eiko: 0.0,
                cv: 0.0,
                ang: 0.0,
            };
            for (k, result) in results.into_iter().enumerate() {
                let (losses, grads) = result?;
                if !losses.is_finite() {
                    return Err(Error::NanLoss {
                        iteration,
                        term: format!("member {k}"),
                    });
                }
                mean.data += losses.data;
                mean.eiko += losses.eiko;
                mean.cv += losses.cv;
                mean.ang += losses.ang;
                let member = &mut self.members[k];
                member
                    .tensor_adam
                    .step(&mut member.tensor_net.trainable, &grads.tensor)
                    .map_err(|_| Error::NanLoss {
                        iteration,
                        term: format!("member {k} tensor gradient"),
                    })?;
                for (i, g) in grads.maps.iter().enumerate() {
                    member.map_adams[i]
                        .step(&mut member.map_nets[i].trainable, g)
                        .map_err(|_| Error::NanLoss {
                            iteration,
                            term: format!("member {k} map {i} gradient"),
                        })?;
                }
            }
            let s = self.members.len() as f64;
            mean.data /= s;
            mean.eiko /= s;
            mean.cv /= s;
            mean.ang /= s;

            if iteration % 100 == 0 || step + 1 == iterations {
                let rec = ProgressRecord {
                    iteration,
                    losses: mean,
                };
                progress(&rec);
                history.push(rec);
            }
        }
        self.iteration += iterations;
        Ok(history)
    }

    /// Losses of one member on a given batch (no gradient, no update).
    pub fn member_losses(&self, member: usize, batch: &[usize]) -> Result<LossTerms> {
        let weights = LossWeights::from_config(&self.config);
        member_eval(
            &self.members[member],
            &self.ctx,
            &self.config,
            batch,
            &weights,
            None,
        )
    }

    /// Weighted-total gradient of one member on a given batch; `weights`
    /// selects terms (used by the finite-difference checks).
    pub fn member_grads(
        &self,
        member: usize,
        batch: &[usize],
        weights: &LossWeights,
    ) -> Result<(LossTerms, MemberGrads)> {
        let mut grads = MemberGrads::zeros_like(&self.members[member]);
        let losses = member_eval(
            &self.members[member],
            &self.ctx,
            &self.config,
            batch,
            weights,
            Some(&mut grads),
        )?;
        Ok((losses, grads))
    }

    /// Normalized activation prediction of one member at one point.
    pub fn predict_map(&self, member: usize, map: usize, point: PointRef) -> f64 {
        let m = &self.members[member];
        let (input, prior): (Vec<f64>, f64) = match point {
            PointRef::Vertex(v) => (
                self.ctx.vert_inputs.column(v).to_vec(),
                m.prior_map_vert[map][v],
            ),
            PointRef::Centroid(e) => (
                self.ctx.cent_inputs.column(e).to_vec(),
                m.prior_map_cent[map][e],
            ),
        };
        m.map_nets[map].trainable.forward(&input)[0] + self.config.lambda_p * prior
    }

    /// Raw (pre-squash) tensor head of one member at one point, prior included.
    pub fn predict_head_raw(&self, member: usize, point: PointRef) -> [f64; 3] {
        let m = &self.members[member];
        let (input, prior): (Vec<f64>, [f64; 3]) = match point {
            PointRef::Vertex(v) => (
                self.ctx.vert_inputs.column(v).to_vec(),
                [
                    m.prior_tensor_vert[[0, v]],
                    m.prior_tensor_vert[[1, v]],
                    m.prior_tensor_vert[[2, v]],
                ],
            ),
            PointRef::Centroid(e) => (
                self.ctx.cent_inputs.column(e).to_vec(),
                [
                    m.prior_tensor_cent[[0, e]],
                    m.prior_tensor_cent[[1, e]],
                    m.prior_tensor_cent[[2, e]],
                ],
            ),
        };
        let y = m.tensor_net.trainable.forward(&input);
        [
            y[0] + self.config.lambda_p * prior[0],
            y[1] + self.config.lambda_p * prior[1],
            y[2] + self.config.lambda_p * prior[2],
        ]
    }

    /// Squashed tensor head of one member at one point.
    pub fn predict_head(&self, member: usize, point: PointRef) -> TensorHead {
        head_squash(self.predict_head_raw(member, point))
    }

    /// Normalized activation prediction of one member over all vertices.
    pub fn predict_map_field(&self, member: usize, map: usize) -> Vec<f64> {
        let m = &self.members[member];
        let y = m.map_nets[map].trainable.forward_batch(&self.ctx.vert_inputs);
        let prior = &m.prior_map_vert[map];
        (0..self.ctx.n_verts())
            .map(|v| y[[0, v]] + self.config.lambda_p * prior[v])
            .collect()
    }

    /// Squashed tensor heads of one member at every vertex.
    pub fn predict_heads_at_vertices(&self, member: usize) -> Vec<TensorHead> {
        let m = &self.members[member];
        let y = m.tensor_net.trainable.forward_batch(&self.ctx.vert_inputs);
        let prior = &m.prior_tensor_vert;
        (0..self.ctx.n_verts())
            .map(|v| {
                head_squash([
                    y[[0, v]] + self.config.lambda_p * prior[[0, v]],
                    y[[1, v]] + self.config.lambda_p * prior[[1, v]],
                    y[[2, v]] + self.config.lambda_p * prior[[2, v]],
                ])
            })
            .collect()
    }

    /// Serialize parameters and optimizer state to a versioned JSON file.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            mesh_hash: self.ctx.mesh_hash.clone(),
            iteration: self.iteration,
            members: self
                .members
                .iter()
                .map(|m| MemberParams {
                    tensor_net: m.tensor_net.clone(),
                    map_nets: m.map_nets.clone(),
                    tensor_adam: m.tensor_adam.clone(),
                    map_adams: m.map_adams.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&ck)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Restore a checkpoint; the mesh, basis and dataset must match the ones
    /// used at save time (the mesh hash is verified).
    pub fn load_checkpoint(
        path: &Path,
        mesh: &TriangleSurfaceMesh,
        basis: Option<&SpectralBasis>,
        dataset: &ActivationDataset,
    ) -> Result<EnsembleState> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                what: format!("checkpoint {}", path.display()),
                hint: "train".into(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        if ck.mesh_hash != mesh.content_hash() {
            return Err(Error::Checkpoint(
                "checkpoint belongs to a different mesh".into(),
            ));
        }
        let ctx = TrainContext::build(mesh, basis, dataset, ck.config.mode)?;
        let members = ck
            .members
            .into_iter()
            .map(|p| {
                let mut m = Member {
                    tensor_net: p.tensor_net,
                    map_nets: p.map_nets,
                    tensor_adam: p.tensor_adam,
                    map_adams: p.map_adams,
                    prior_tensor_vert: Array2::zeros((0, 0)),
                    prior_tensor_cent: Array2::zeros((0, 0)),
                    prior_map_vert: Vec::new(),
                    prior_map_cent: Vec::new(),
                    prior_map_samples: Vec::new(),
                    prior_map_cent_jac: Vec::new(),
                };
                m.rebuild_prior_caches(&ctx);
                m
            })
            .collect();
        Ok(EnsembleState {
            config: ck.config,
            ctx,
            members,
            iteration: ck.iteration,
        })
    }
}

fn draw_batch(rng: &mut rand_chacha::ChaCha20Rng, n_elems: usize, batch: usize) -> Vec<usize> {
    // distinct elements via partial Fisher-Yates index sampling
    let mut idx: Vec<usize> = (0..n_elems).collect();
    for i in 0..batch {
        let j = rng.random_range(i..n_elems);
        idx.swap(i, j);
    }
    idx.truncate(batch);
    idx
}

impl Member {
    /// Total trainable parameter count (tensor net first, then each map net).
    pub fn flat_param_count(&self) -> usize {
        self.tensor_net.trainable.param_count()
            + self
                .map_nets
                .iter()
                .map(|p| p.trainable.param_count())
                .sum::<usize>()
    }

    /// Flat accessor over all trainable parameters; pairs with
    /// [`MemberGrads::flat_get`] for finite-difference probes.
    pub fn flat_get(&self, idx: usize) -> f64 {
        let mut i = idx;
        if i < self.tensor_net.trainable.param_count() {
            return self.tensor_net.trainable.get_param(i);
        }
        i -= self.tensor_net.trainable.param_count();
        for p in &self.map_nets {
            if i < p.trainable.param_count() {
                return p.trainable.get_param(i);
            }
            i -= p.trainable.param_count();
        }
        panic!("member parameter index {idx} out of range");
    }

    pub fn flat_set(&mut self, idx: usize, value: f64) {
        let mut i = idx;
        if i < self.tensor_net.trainable.param_count() {
            self.tensor_net.trainable.set_param(i, value);
            return;
        }
        i -= self.tensor_net.trainable.param_count();
        for p in &mut self.map_nets {
            if i < p.trainable.param_count() {
                p.trainable.set_param(i, value);
                return;
            }
            i -= p.trainable.param_count();
        }
        panic!("member parameter index {idx} out of range");
    }
}

impl MemberGrads {
    /// Flat accessor matching [`Member::flat_get`] indexing.
    pub fn flat_get(&self, idx: usize) -> f64 {
        let mut i = idx;
        let tensor_n: usize = self.tensor.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.tensor.biases.iter().map(|b| b.len()).sum::<usize>();
        if i < tensor_n {
            return self.tensor.get_param(i);
        }
        i -= tensor_n;
        for g in &self.maps {
            let n: usize = g.weights.iter().map(|w| w.len()).sum::<usize>()
                + g.biases.iter().map(|b| b.len()).sum::<usize>();
            if i < n {
                return g.get_param(i);
            }
            i -= n;
        }
        panic!("gradient index {idx} out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ActivationDataset;
    use crate::eikonal::{rule_based_fibers, FiberRule};
    use crate::synth;

    fn small_problem(mode: Mode) -> (TriangleSurfaceMesh, Option<SpectralBasis>, ActivationDataset, TrainingConfig) {
        let mesh = synth::flat_sheet(4.0, 4.0, 7, 7).unwrap();
        let field =
            rule_based_fibers(&mesh, FiberRule::ConstantAngle { angle: 0.5 }, 0.06, 0.03).unwrap();
        let dataset = ActivationDataset::simulate(&mesh, &field, 2, 2.0, 0.1, 12).unwrap();
        let basis = match mode {
            Mode::Spectral => Some(SpectralBasis::compute(&mesh, 6).unwrap()),
            Mode::Cartesian => None,
        };
        let mut cfg = match mode {
            Mode::Spectral => TrainingConfig::spectral_defaults(31),
            Mode::Cartesian => TrainingConfig::cartesian_defaults(31),
        };
        cfg.n_modes = 6;
        cfg.ensemble_size = 2;
        cfg.batch = 8;
        (mesh, basis, dataset, cfg)
    }

    fn fd_check(mode: Mode, term: &str, probes: usize) {
        let (mesh, basis, dataset, cfg) = small_problem(mode);
        let state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let batch: Vec<usize> = (0..8).map(|i| i * 7 % state.ctx.n_elems()).collect();
        let weights = LossWeights::one_hot(term);
        let (_, grads) = state.member_grads(0, &batch, &weights).unwrap();

        let mut rng = crate::nn::seeded_rng(2024);
        let n = state.members[0].flat_param_count();
        let h = 1e-6;
        for _ in 0..probes {
            let idx = rng.random_range(0..n);
            let mut sp = state.clone();
            let v = sp.members[0].flat_get(idx);
            sp.members[0].flat_set(idx, v + h);
            let lp = sp.member_losses(0, &batch).unwrap();
            sp.members[0].flat_set(idx, v - h);
            let lm = sp.member_losses(0, &batch).unwrap();
            let pick = |l: &LossTerms| match term {
                "data" => l.data,
                "eiko" => l.eiko,
                "cv" => l.cv,
                "ang" => l.ang,
                _ => unreachable!(),
            };
            let fd = (pick(&lp) - pick(&lm)) / (2.0 * h);
            let an = grads.flat_get(idx);
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1e-7),
                "{mode:?}/{term} param {idx}: fd {fd:e} vs analytic {an:e}"
            );
        }
    }

    #[test]
    fn gradients_match_fd_spectral() {
        for term in ["data", "eiko", "cv", "ang"] {
            fd_check(Mode::Spectral, term, 12);
        }
    }

    #[test]
    fn gradients_match_fd_cartesian() {
        for term in ["data", "eiko", "cv", "ang"] {
            fd_check(Mode::Cartesian, term, 12);
        }
    }

    #[test]
    fn zero_activation_field_gives_unit_eikonal_residual() {
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.lambda_p = 0.0;
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        // zero the map nets: constant predictions, zero gradient field
        for p in &mut state.members[0].map_nets {
            p.trainable = crate::nn::Mlp::zeros(&p.trainable.dims());
        }
        let losses = state.member_losses(0, &[0, 1, 2, 3]).unwrap();
        assert!((losses.eiko - 1.0).abs() < 1e-12, "eiko {}", losses.eiko);
    }

    #[test]
    fn constant_head_has_zero_smoothness() {
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.lambda_p = 0.0;
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let dims = state.members[0].tensor_net.trainable.dims();
        state.members[0].tensor_net.trainable = crate::nn::Mlp::zeros(&dims);
        let losses = state.member_losses(0, &[0, 5, 9]).unwrap();
        // gradients of a constant field vanish up to the 1e-17 closure of the
        // FEM partition of unity; Huber is quadratic there
        assert!(losses.cv < 1e-25, "cv {}", losses.cv);
        assert!(losses.ang < 1e-25, "ang {}", losses.ang);
    }

    #[test]
    fn ground_truth_satisfies_eikonal_residual() {
        let mesh = synth::flat_sheet(10.0, 10.0, 41, 41).unwrap();
        let field = rule_based_fibers(
            &mesh,
            FiberRule::ConstantAngle { angle: 0.5235987755982988 },
            0.06,
            0.03,
        )
        .unwrap();
        let phi = crate::eikonal::fim_solve(&mesh, &field, &[0]).unwrap();
        let t_max = phi.iter().fold(0.0f64, |a, &b| a.max(b));
        let normalized: Vec<f64> = phi.iter().map(|t| t / t_max).collect();
        let msq = losses::eikonal_residual_msq(&mesh, &normalized, &field.element_tensors, t_max);
        assert!(msq < 0.05, "mean-square residual {msq}");
    }

    #[test]
    fn prediction_reduces_to_trainable_when_prior_scale_zero() {
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.lambda_p = 0.0;
        let state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let m = &state.members[0];
        let input: Vec<f64> = state.ctx.vert_inputs.column(3).to_vec();
        let direct = m.map_nets[0].trainable.forward(&input)[0];
        assert_eq!(state.predict_map(0, 0, PointRef::Vertex(3)), direct);
    }

    #[test]
    fn prediction_is_prior_when_trainable_zeroed() {
        let (mesh, basis, dataset, cfg) = small_problem(Mode::Spectral);
        let lam_p = cfg.lambda_p;
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let dims = state.members[0].map_nets[0].trainable.dims();
        state.members[0].map_nets[0].trainable = crate::nn::Mlp::zeros(&dims);
        let m = &state.members[0];
        let got = state.predict_map(0, 0, PointRef::Vertex(5));
        assert!((got - lam_p * m.prior_map_vert[0][5]).abs() < 1e-15);
    }

    #[test]
    fn members_differ_through_independent_priors() {
        let (mesh, basis, dataset, cfg) = small_problem(Mode::Spectral);
        let state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let a = state.predict_map(0, 0, PointRef::Vertex(7));
        let b = state.predict_map(1, 0, PointRef::Vertex(7));
        assert_ne!(a, b, "identical member outputs indicate a seeding bug");
    }

    #[test]
    fn zero_iterations_leaves_state_unchanged() {
        let (mesh, basis, dataset, cfg) = small_problem(Mode::Spectral);
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg.clone()).unwrap();
        let before = state.members[0].tensor_net.trainable.clone();
        state.train(0, Parallelism::Sequential, &mut |_| {}).unwrap();
        assert_eq!(state.members[0].tensor_net.trainable, before);
    }

    #[test]
    fn training_is_deterministic_and_parallelism_invariant() {
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.iterations = 30;
        let run = |par: Parallelism| {
            let mut state =
                EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg.clone()).unwrap();
            state.train(30, par, &mut |_| {}).unwrap();
            state
                .members
                .iter()
                .map(|m| crate::nn::params_checksum(&m.tensor_net.trainable))
                .collect::<Vec<_>>()
        };
        let seq = run(Parallelism::Sequential);
        let par = run(Parallelism::Rayon);
        assert_eq!(seq, par);
    }

    #[test]
    fn priors_stay_frozen_through_training() {
        let (mesh, basis, dataset, cfg) = small_problem(Mode::Spectral);
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg).unwrap();
        let before: Vec<String> = state
            .members
            .iter()
            .map(|m| crate::nn::params_checksum(&m.tensor_net.prior))
            .collect();
        state.train(25, Parallelism::Sequential, &mut |_| {}).unwrap();
        let after: Vec<String> = state
            .members
            .iter()
            .map(|m| crate::nn::params_checksum(&m.tensor_net.prior))
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn data_only_training_fits_dense_noiseless_samples() {
        let mesh = synth::flat_sheet(4.0, 4.0, 9, 9).unwrap();
        let field =
            rule_based_fibers(&mesh, FiberRule::ConstantAngle { angle: 0.4 }, 0.06, 0.03).unwrap();
        let dataset = ActivationDataset::simulate(&mesh, &field, 2, 4.0, 0.0, 5).unwrap();
        let basis = SpectralBasis::compute(&mesh, 6).unwrap();
        let mut cfg = TrainingConfig::spectral_defaults(77);
        cfg.n_modes = 6;
        cfg.ensemble_size = 1;
        cfg.lambda_data = 1.0;
        cfg.lambda_eiko = 0.0;
        cfg.lambda_cv = 0.0;
        cfg.lambda_ang = 0.0;
        let mut state = EnsembleState::init(&mesh, Some(&basis), &dataset, cfg).unwrap();
        let history = state
            .train(3000, Parallelism::Sequential, &mut |_| {})
            .unwrap();
        let last = history.last().unwrap().losses.data;
        assert!(last < 1e-4, "normalized data loss after 3000 iters: {last}");
    }

    #[test]
    fn checkpoint_roundtrip_and_resume() {
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.iterations = 20;
        let mut state = EnsembleState::init(&mesh, basis.as_ref(), &dataset, cfg.clone()).unwrap();
        state.train(10, Parallelism::Sequential, &mut |_| {}).unwrap();
        let dir = std::env::temp_dir().join("fiberflow-train-tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.json");
        state.save_checkpoint(&path).unwrap();

        let mut resumed =
            EnsembleState::load_checkpoint(&path, &mesh, basis.as_ref(), &dataset).unwrap();
        assert_eq!(resumed.iteration, 10);
        // continuing the loaded state matches continuing the original
        state.train(10, Parallelism::Sequential, &mut |_| {}).unwrap();
        resumed.train(10, Parallelism::Sequential, &mut |_| {}).unwrap();
        for (a, b) in state.members.iter().zip(&resumed.members) {
            assert_eq!(
                crate::nn::params_checksum(&a.tensor_net.trainable),
                crate::nn::params_checksum(&b.tensor_net.trainable)
            );
        }
    }

    #[test]
    fn huber_branch_values() {
        // continuity at the threshold and the linear branch
        let (mesh, basis, dataset, mut cfg) = small_problem(Mode::Spectral);
        cfg.delta_e = 2.0;
        let _ = (mesh, basis, dataset, cfg);
        let h = |g: [f64; 2], d: f64| {
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if n <= d {
                n * n / (2.0 * d)
            } else {
                n - 0.5 * d
            }
        };
        let delta = 0.8;
        assert!((h([delta, 0.0], delta) - delta / 2.0).abs() < 1e-15);
        assert!((h([2.0 * delta, 0.0], delta) - 1.5 * delta).abs() < 1e-12);
    }
}
