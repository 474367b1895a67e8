//! The joint distillation loop: optimize synthetic coordinates and
//! per-object rotation angles against the distribution-matching loss.
//!
//! Each iteration draws a fresh randomly initialized extractor, samples a
//! per-class batch of real clouds, computes one loss term per class on the
//! rotated synthetic objects of that class, sums the terms, and applies a
//! single momentum-SGD update to all coordinates and angles. Everything is
//! counter-seeded, so a run is a pure function of its configuration.

use crate::coreset::{pooled_embeddings, select_herding, select_kcenter, select_random};
use crate::diffgraph::Tape;
use crate::featnet::{init_weights, ExtractorConfig, NetworkWeights};
use crate::optim::{step_decay, SgdMomentum};
use crate::pcdata::{normalize_unit_sphere, LabeledDataset, PointCloud};
use crate::rotator::{apply_rotation, RotationParams};
use crate::sadmloss::{l_sadm, AlignmentStrategy, KernelConfig, LossWeights};
use crate::seeds::{rng_for, PURPOSE_BATCH, PURPOSE_INIT, PURPOSE_WEIGHTS};
use crate::{Error, Result};
use ndarray::{array, Array2};
use rand::Rng;
use rayon::prelude::*;
use std::str::FromStr;

/// How the synthetic coordinates start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Uniform noise in `[−1,1]³`, then unit-sphere normalized.
    Noise,
    /// Deep copies of uniformly selected originals.
    #[default]
    Random,
    /// Deep copies of the herding selection.
    Herding,
    /// Deep copies of the k-center selection.
    KCenter,
}

impl InitStrategy {
    /// Canonical lowercase name, matching the `FromStr` spelling.
    pub fn name(self) -> &'static str {
        match self {
            InitStrategy::Noise => "noise",
            InitStrategy::Random => "random",
            InitStrategy::Herding => "herding",
            InitStrategy::KCenter => "kcenter",
        }
    }
}

impl FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" => Ok(InitStrategy::Noise),
            "random" => Ok(InitStrategy::Random),
            "herding" => Ok(InitStrategy::Herding),
            "kcenter" => Ok(InitStrategy::KCenter),
            other => Err(Error::Config(format!(
                "unknown init strategy {other:?} (expected noise, random, herding, or kcenter)"
            ))),
        }
    }
}

/// Full configuration of one distillation run.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    /// Synthetic objects per class.
    pub ppc: usize,
    /// Optimization iterations.
    pub iterations: usize,
    /// Real clouds sampled per class per iteration (clamped to class size).
    pub t_batch_per_class: usize,
    /// Weights of the two loss terms.
    pub loss_weights: LossWeights,
    /// Learning rate on synthetic coordinates.
    pub lr_coords: f64,
    /// Momentum on synthetic coordinates.
    pub momentum_coords: f64,
    /// Weight decay on synthetic coordinates.
    pub weight_decay_coords: f64,
    /// Learning rate on the x rotation angle.
    pub lr_theta_x: f64,
    /// Learning rate on the y rotation angle.
    pub lr_theta_y: f64,
    /// Learning rate on the z rotation angle.
    pub lr_theta_z: f64,
    /// Momentum on the rotation angles.
    pub momentum_theta: f64,
    /// Iterations between each halving of the angle learning rates.
    pub theta_decay_step: usize,
    /// Multiplier applied to the angle learning rates at each schedule step.
    pub theta_decay_factor: f64,
    /// Coordinate initialization strategy.
    pub init: InitStrategy,
    /// Feature-alignment strategy inside the loss.
    pub alignment: AlignmentStrategy,
    /// Kernel bandwidth rule.
    pub kernel: KernelConfig,
    /// Architecture of the per-iteration random extractor.
    pub extractor: ExtractorConfig,
    /// Master seed; every stream in the run derives from it.
    pub seed: u64,
    /// Emit a checkpoint every this many iterations.
    pub eval_every: Option<usize>,
    /// Learn the rotation angles; when false the synthetic clouds enter the
    /// loss unrotated.
    pub optimize_rotation: bool,
    /// Update the synthetic coordinates.
    pub optimize_coords: bool,
}

impl DistillConfig {
    /// Defaults for a given per-class budget: 1500 iterations, batch 8,
    /// coordinate SGD 0.01/0.5, angle rates (0.5, 5.0, 0.5) halved every
    /// 100 iterations, budget-matched loss weights, random-copy init,
    /// channel sorting, median bandwidth.
    pub fn new(ppc: usize) -> Self {
        DistillConfig {
            ppc,
            iterations: 1500,
            t_batch_per_class: 8,
            loss_weights: LossWeights::for_ppc(ppc),
            lr_coords: 0.01,
            momentum_coords: 0.5,
            weight_decay_coords: 0.0,
            lr_theta_x: 0.5,
            lr_theta_y: 5.0,
            lr_theta_z: 0.5,
            momentum_theta: 0.5,
            theta_decay_step: 100,
            theta_decay_factor: 0.5,
            init: InitStrategy::Random,
            alignment: AlignmentStrategy::ChannelSorted,
            kernel: KernelConfig::MedianHeuristic,
            extractor: ExtractorConfig::desk_scale(64),
            seed: 0,
            eval_every: Some(250),
            optimize_rotation: true,
            optimize_coords: true,
        }
    }

    /// Checks every numeric field. Angle rates may be zero (frozen angles);
    /// the coordinate rate must be positive.
    pub fn validate(&self) -> Result<()> {
        if self.ppc == 0 {
            return Err(Error::Config("ppc must be at least 1".into()));
        }
        if self.t_batch_per_class == 0 {
            return Err(Error::Config("t_batch_per_class must be at least 1".into()));
        }
        if !(self.lr_coords > 0.0 && self.lr_coords.is_finite()) {
            return Err(Error::Config(format!("lr_coords must be positive, got {}", self.lr_coords)));
        }
        for (name, lr) in [
            ("lr_theta_x", self.lr_theta_x),
            ("lr_theta_y", self.lr_theta_y),
            ("lr_theta_z", self.lr_theta_z),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {lr}")));
            }
        }
        for (name, m) in [("momentum_coords", self.momentum_coords), ("momentum_theta", self.momentum_theta)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {m}")));
            }
        }
        if !(self.weight_decay_coords >= 0.0 && self.weight_decay_coords.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay_coords must be finite and nonnegative, got {}",
                self.weight_decay_coords
            )));
        }
        if self.theta_decay_step == 0 {
            return Err(Error::Config("theta_decay_step must be at least 1".into()));
        }
        if !(self.theta_decay_factor > 0.0 && self.theta_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "theta_decay_factor must lie in (0, 1], got {}",
                self.theta_decay_factor
            )));
        }
        if self.eval_every == Some(0) {
            return Err(Error::Config("eval_every must be at least 1 when set".into()));
        }
        Ok(())
    }
}

/// The learnable state: per-class synthetic clouds plus one rotation triple
/// per object. The label of `clouds[c][k]` is `c` and never changes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSet {
    clouds: Vec<Vec<Array2<f64>>>,
    thetas: Vec<Vec<RotationParams>>,
    class_names: Vec<String>,
}

impl SyntheticSet {
    fn new(clouds: Vec<Vec<Array2<f64>>>, class_names: Vec<String>) -> Self {
        assert_eq!(clouds.len(), class_names.len(), "one cloud list per class");
        assert!(!clouds.is_empty(), "need at least one class");
        let ppc = clouds[0].len();
        let n = clouds[0][0].nrows();
        for per_class in &clouds {
            assert_eq!(per_class.len(), ppc, "every class holds the same object count");
            for cloud in per_class {
                assert_eq!(cloud.dim(), (n, 3), "every synthetic cloud shares one N×3 shape");
            }
        }
        let thetas = vec![vec![RotationParams::ZERO; ppc]; clouds.len()];
        SyntheticSet { clouds, thetas, class_names }
    }

    /// Number of classes.
    pub fn num_classes(&self) -> usize {
        self.clouds.len()
    }

    /// Objects per class.
    pub fn ppc(&self) -> usize {
        self.clouds[0].len()
    }

    /// Points in each synthetic cloud.
    pub fn points_per_cloud(&self) -> usize {
        self.clouds[0][0].nrows()
    }

    /// Class names carried over from the source dataset.
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Coordinates of object `k` of class `c`.
    pub fn cloud(&self, c: usize, k: usize) -> &Array2<f64> {
        &self.clouds[c][k]
    }

    /// Rotation angles of object `k` of class `c`.
    pub fn theta(&self, c: usize, k: usize) -> RotationParams {
        self.thetas[c][k]
    }

    /// Applies every object's rotation to its coordinates, re-normalizes,
    /// and returns the result as an ordinary labeled dataset (class-major
    /// item order).
    pub fn bake(&self) -> LabeledDataset {
        let mut items = Vec::with_capacity(self.num_classes() * self.ppc());
        for (c, per_class) in self.clouds.iter().enumerate() {
            for (k, coords) in per_class.iter().enumerate() {
                let cloud = PointCloud::new(coords.clone()).expect("synthetic coordinates stay finite");
                let rotated = apply_rotation(&self.thetas[c][k], &cloud);
                items.push((normalize_unit_sphere(&rotated), c));
            }
        }
        LabeledDataset::new(items, self.class_names.clone()).expect("baked set is structurally valid")
    }
}

/// Builds the initial synthetic set for a run.
pub fn init_synthetic(ds: &LabeledDataset, cfg: &DistillConfig) -> Result<SyntheticSet> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Invalid("cannot initialize from an empty dataset".into()));
    }
    let n = ds.points_per_cloud();
    let clouds: Vec<Vec<Array2<f64>>> = match cfg.init {
        InitStrategy::Noise => (0..ds.num_classes())
            .map(|c| {
                (0..cfg.ppc)
                    .map(|k| {
                        let mut rng = rng_for(cfg.seed, &[PURPOSE_INIT, c as u64, k as u64]);
                        let raw = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
                        let cloud = PointCloud::new(raw).expect("noise coordinates are finite");
                        normalize_unit_sphere(&cloud).into_points()
                    })
                    .collect()
            })
            .collect(),
        InitStrategy::Random | InitStrategy::Herding | InitStrategy::KCenter => {
            let selection = match cfg.init {
                InitStrategy::Random => select_random(ds, cfg.ppc, cfg.seed)?,
                InitStrategy::Herding => {
                    let emb = pooled_embeddings(ds, &embedding_network(cfg));
                    select_herding(ds, cfg.ppc, &emb)?
                }
                _ => {
                    let emb = pooled_embeddings(ds, &embedding_network(cfg));
                    select_kcenter(ds, cfg.ppc, &emb)?
                }
            };
            selection
                .per_class()
                .iter()
                .map(|picks| picks.iter().map(|&i| ds.items()[i].0.points().clone()).collect())
                .collect()
        }
    };
    Ok(SyntheticSet::new(clouds, ds.class_names().to_vec()))
}

/// The extractor whose pooled features define the herding/k-center
/// embedding space for a run (a fixed derivation from the master seed,
/// distinct from every per-iteration network).
pub fn embedding_network(cfg: &DistillConfig) -> NetworkWeights {
    init_weights(&cfg.extractor, &mut rng_for(cfg.seed, &[PURPOSE_WEIGHTS]))
}

/// Momentum buffers and the iteration counter of one run.
#[derive(Debug, Clone)]
pub struct DistillState {
    coords: SgdMomentum,
    theta_velocity: Vec<[f64; 3]>,
    /// Next iteration index (drives seeds and the angle schedule).
    pub iteration: usize,
}

impl DistillState {
    /// Fresh zeroed state matching a synthetic set.
    pub fn new(synthetic: &SyntheticSet, cfg: &DistillConfig) -> Self {
        let n = synthetic.points_per_cloud();
        let slots = synthetic.num_classes() * synthetic.ppc();
        DistillState {
            coords: SgdMomentum::new(&vec![(n, 3); slots], cfg.momentum_coords),
            theta_velocity: vec![[0.0; 3]; slots],
            iteration: 0,
        }
    }
}

/// Per-class forward/backward result.
struct ClassPass {
    loss: f64,
    coord_grads: Vec<Array2<f64>>,
    theta_grads: Vec<[f64; 3]>,
}

fn class_pass(
    synthetic: &SyntheticSet,
    ds: &LabeledDataset,
    cfg: &DistillConfig,
    net: &NetworkWeights,
    iteration: usize,
    c: usize,
) -> Result<ClassPass> {
    let items = ds.indices_of_class(c);
    if items.is_empty() {
        return Err(Error::Invalid(format!(
            "class {:?} has no items to sample batches from",
            ds.class_names()[c]
        )));
    }
    let batch = cfg.t_batch_per_class.min(items.len());
    let mut rng = rng_for(cfg.seed, &[PURPOSE_BATCH, iteration as u64, c as u64]);
    let picks = rand::seq::index::sample(&mut rng, items.len(), batch);
    let t_clouds: Vec<Array2<f64>> = picks.iter().map(|i| ds.items()[items[i]].0.points().clone()).collect();

    let mut tape = Tape::new();
    let mut coord_ids = Vec::with_capacity(synthetic.ppc());
    let mut theta_ids = Vec::with_capacity(synthetic.ppc());
    let mut s_ids = Vec::with_capacity(synthetic.ppc());
    for k in 0..synthetic.ppc() {
        let x = tape.leaf(synthetic.cloud(c, k).clone());
        coord_ids.push(x);
        if cfg.optimize_rotation {
            let t = synthetic.theta(c, k);
            let theta = tape.leaf(array![[t.x, t.y, t.z]]);
            theta_ids.push(theta);
            s_ids.push(tape.rotate(theta, x));
        } else {
            s_ids.push(x);
        }
    }

    let loss = l_sadm(&mut tape, net, &t_clouds, &s_ids, cfg.alignment, &cfg.kernel, &cfg.loss_weights)
        .map_err(|e| match e {
            Error::Diverged(msg) => Error::Diverged(format!(
                "iteration {iteration}, class {:?}: {msg}",
                ds.class_names()[c]
            )),
            other => other,
        })?;
    tape.backward(loss);

    let mut coord_grads = Vec::with_capacity(synthetic.ppc());
    let mut theta_grads = Vec::with_capacity(synthetic.ppc());
    for k in 0..synthetic.ppc() {
        coord_grads.push(tape.grad(coord_ids[k]).clone());
        if cfg.optimize_rotation {
            let g = tape.grad(theta_ids[k]);
            theta_grads.push([g[[0, 0]], g[[0, 1]], g[[0, 2]]]);
        } else {
            theta_grads.push([0.0; 3]);
        }
    }
    Ok(ClassPass { loss: tape.data(loss)[[0, 0]], coord_grads, theta_grads })
}

/// Computes the current iteration's loss without touching any state — the
/// same network, batches, and graph that `distill_step` would use.
pub fn evaluate_loss(
    synthetic: &SyntheticSet,
    ds: &LabeledDataset,
    cfg: &DistillConfig,
    iteration: usize,
) -> Result<f64> {
    let net = init_weights(&cfg.extractor, &mut rng_for(cfg.seed, &[PURPOSE_WEIGHTS, iteration as u64]));
    let passes: Result<Vec<ClassPass>> = (0..synthetic.num_classes())
        .into_par_iter()
        .map(|c| class_pass(synthetic, ds, cfg, &net, iteration, c))
        .collect();
    Ok(passes?.iter().map(|p| p.loss).sum())
}

/// One optimization step: fresh network, per-class losses summed, one
/// momentum-SGD update. Returns the pre-update loss.
pub fn distill_step(
    synthetic: &mut SyntheticSet,
    ds: &LabeledDataset,
    cfg: &DistillConfig,
    state: &mut DistillState,
) -> Result<f64> {
    let iteration = state.iteration;
    let net = init_weights(&cfg.extractor, &mut rng_for(cfg.seed, &[PURPOSE_WEIGHTS, iteration as u64]));
    let passes: Result<Vec<ClassPass>> = (0..synthetic.num_classes())
        .into_par_iter()
        .map(|c| class_pass(synthetic, ds, cfg, &net, iteration, c))
        .collect();
    let passes = passes?;

    let mut total = 0.0;
    for (c, pass) in passes.iter().enumerate() {
        if !pass.loss.is_finite() {
            return Err(Error::Diverged(format!(
                "iteration {iteration}, class {:?}: loss is not finite",
                synthetic.class_names()[c]
            )));
        }
        let finite = pass.coord_grads.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && pass.theta_grads.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Diverged(format!(
                "iteration {iteration}, class {:?}: gradient is not finite",
                synthetic.class_names()[c]
            )));
        }
        total += pass.loss;
    }
    if total.abs() > 1e12 {
        return Err(Error::Diverged(format!("iteration {iteration}: loss magnitude {total} exceeds 1e12")));
    }

    let ppc = synthetic.ppc();
    if cfg.optimize_coords {
        for c in 0..synthetic.num_classes() {
            for k in 0..ppc {
                state.coords.step_at(
                    c * ppc + k,
                    &mut synthetic.clouds[c][k],
                    &passes[c].coord_grads[k],
                    cfg.lr_coords,
                    cfg.weight_decay_coords,
                );
            }
        }
    }
    if cfg.optimize_rotation {
        let lrs = [
            step_decay(cfg.lr_theta_x, cfg.theta_decay_factor, cfg.theta_decay_step, iteration),
            step_decay(cfg.lr_theta_y, cfg.theta_decay_factor, cfg.theta_decay_step, iteration),
            step_decay(cfg.lr_theta_z, cfg.theta_decay_factor, cfg.theta_decay_step, iteration),
        ];
        for c in 0..synthetic.num_classes() {
            for k in 0..ppc {
                let v = &mut state.theta_velocity[c * ppc + k];
                let g = passes[c].theta_grads[k];
                let theta = &mut synthetic.thetas[c][k];
                let angles = [&mut theta.x, &mut theta.y, &mut theta.z];
                for (axis, angle) in angles.into_iter().enumerate() {
                    v[axis] = cfg.momentum_theta * v[axis] + g[axis];
                    *angle -= lrs[axis] * v[axis];
                }
            }
        }
    }

    let params_finite = synthetic.clouds.iter().flatten().all(|c| c.iter().all(|v| v.is_finite()))
        && synthetic
            .thetas
            .iter()
            .flatten()
            .all(|t| t.x.is_finite() && t.y.is_finite() && t.z.is_finite());
    if !params_finite {
        return Err(Error::Diverged(format!(
            "iteration {iteration}: a parameter became non-finite after the update"
        )));
    }

    state.iteration += 1;
    Ok(total)
}

/// Runs the full loop. The checkpoint sink, when given, fires after every
/// `eval_every`-th iteration with the 1-based iteration number and the
/// current set.
pub fn run_distillation(
    ds: &LabeledDataset,
    cfg: &DistillConfig,
    mut checkpoint: Option<&mut dyn FnMut(usize, &SyntheticSet)>,
) -> Result<(SyntheticSet, Vec<f64>)> {
    let mut synthetic = init_synthetic(ds, cfg)?;
    let mut state = DistillState::new(&synthetic, cfg);
    let mut trace = Vec::with_capacity(cfg.iterations);
    for i in 0..cfg.iterations {
        trace.push(distill_step(&mut synthetic, ds, cfg, &mut state)?);
        if let Some(sink) = checkpoint.as_deref_mut() {
            if let Some(every) = cfg.eval_every {
                if (i + 1) % every == 0 {
                    sink(i + 1, &synthetic);
                }
            }
        }
    }
    Ok((synthetic, trace))
}
