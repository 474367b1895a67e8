//! Evaluation harness: trains a small point-cloud classifier on a candidate
//! training set and reports test accuracy statistics over repeated runs.
//!
//! Each repeat re-initializes the classifier from its own derived seed,
//! trains with momentum SGD under a step-decay schedule, and scores the
//! fixed test set. Repeats are independent, so they run in parallel and
//! aggregate in index order.

use crate::diffgraph::{Tape, ValueId};
use crate::featnet::{
    classifier_forward, init_classifier, load_classifier, ClassifierConfig, ClassifierWeights,
};
use crate::optim::{step_decay, SgdMomentum};
use crate::pcdata::{LabeledDataset, PointCloud};
use crate::rotator::{apply_rotation, RotationParams};
use crate::seeds::{rng_for, PURPOSE_BATCH, PURPOSE_EVAL, PURPOSE_ROTATION, PURPOSE_WEIGHTS};
use crate::{Error, Result};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::str::FromStr;
use std::time::Instant;

/// Training-time data augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Augmentation {
    /// Train on the clouds as given.
    #[default]
    None,
    /// Give every training cloud a fresh uniform rotation each epoch, all
    /// three angles drawn from `[0, 2π)`.
    RandomRotation,
}

impl Augmentation {
    /// Canonical lowercase name, matching the `FromStr` spelling.
    pub fn name(self) -> &'static str {
        match self {
            Augmentation::None => "none",
            Augmentation::RandomRotation => "random_rotation",
        }
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Augmentation::None),
            "random_rotation" => Ok(Augmentation::RandomRotation),
            other => Err(Error::Config(format!(
                "unknown augmentation {other:?} (expected none or random_rotation)"
            ))),
        }
    }
}

/// Full configuration of one evaluation.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Training epochs per repeat.
    pub epochs: usize,
    /// Objects per training batch.
    pub batch: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// Weight decay, added to each weight gradient as `λ·param` (biases
    /// excluded).
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_step: usize,
    /// Multiplier applied at each schedule step.
    pub lr_decay_factor: f64,
    /// Independent training runs to aggregate.
    pub repeats: usize,
    /// Classifier architecture.
    pub classifier: ClassifierConfig,
    /// Training-time augmentation.
    pub augmentation: Augmentation,
    /// Master seed; per-repeat seeds derive from it.
    pub seed: u64,
}

impl EvalConfig {
    /// Defaults for a given class count: 500 epochs, batch 8, SGD
    /// 0.01/0.9 with weight decay 5e-4, rate reduced tenfold every 250
    /// epochs, 10 repeats, desk-scale classifier, no augmentation.
    pub fn new(num_classes: usize) -> Self {
        EvalConfig {
            epochs: 500,
            batch: 8,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_decay_step: 250,
            lr_decay_factor: 0.1,
            repeats: 10,
            classifier: ClassifierConfig::desk_scale(num_classes),
            augmentation: Augmentation::None,
            seed: 0,
        }
    }

    /// Checks every numeric field.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be finite and nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.lr_decay_step == 0 {
            return Err(Error::Config("lr_decay_step must be at least 1".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must lie in (0, 1], got {}",
                self.lr_decay_factor
            )));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

/// Aggregated result of a repeated evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Test accuracy of each repeat, in repeat order.
    pub accuracies: Vec<f64>,
    /// Arithmetic mean of the repeat accuracies.
    pub mean: f64,
    /// Sample standard deviation of the repeat accuracies (0 for a single
    /// repeat).
    pub std: f64,
    /// Per-class test accuracy averaged over repeats; a class absent from
    /// the test set reports NaN.
    pub per_class: Vec<f64>,
    /// Wall-clock time of the whole evaluation in seconds.
    pub wall_seconds: f64,
}

/// Trains a classifier on the given set and returns its final weights.
pub fn train_classifier(train: &LabeledDataset, cfg: &EvalConfig, seed: u64) -> Result<ClassifierWeights> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("cannot train on an empty dataset".into()));
    }
    if train.num_classes() != cfg.classifier.num_classes {
        return Err(Error::Config(format!(
            "classifier expects {} classes but the dataset defines {}",
            cfg.classifier.num_classes,
            train.num_classes()
        )));
    }
    let mut weights = init_classifier(&cfg.classifier, &mut rng_for(seed, &[PURPOSE_WEIGHTS]));
    let mask = weights.bias_mask();
    let shapes: Vec<(usize, usize)> = weights.params_mut().iter().map(|p| p.dim()).collect();
    let mut opt = SgdMomentum::new(&shapes, cfg.momentum);

    for epoch in 0..cfg.epochs {
        let lr = step_decay(cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_step, epoch);
        // Rotations are drawn in dataset order before shuffling, so the
        // pairing of cloud and rotation does not depend on the batch order.
        let rotated: Option<Vec<Array2<f64>>> = match cfg.augmentation {
            Augmentation::None => None,
            Augmentation::RandomRotation => {
                let mut rng = rng_for(seed, &[PURPOSE_ROTATION, epoch as u64]);
                Some(
                    train
                        .items()
                        .iter()
                        .map(|(cloud, _)| {
                            let angles = RotationParams {
                                x: rng.gen::<f64>() * std::f64::consts::TAU,
                                y: rng.gen::<f64>() * std::f64::consts::TAU,
                                z: rng.gen::<f64>() * std::f64::consts::TAU,
                            };
                            apply_rotation(&angles, cloud).into_points()
                        })
                        .collect(),
                )
            }
        };
        let cloud_at = |i: usize| -> &Array2<f64> {
            match &rotated {
                Some(r) => &r[i],
                None => train.items()[i].0.points(),
            }
        };

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(seed, &[PURPOSE_BATCH, epoch as u64]));
        for batch in order.chunks(cfg.batch) {
            let mut tape = Tape::new();
            let tc = load_classifier(&mut tape, &weights);
            let mut acc: Option<ValueId> = None;
            for &i in batch {
                let x = tape.leaf(cloud_at(i).clone());
                let logits = classifier_forward(&mut tape, &tc, x);
                let ce = tape.cross_entropy(logits, &[train.items()[i].1]);
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, ce),
                    None => ce,
                });
            }
            let loss = tape.mul_scalar(acc.expect("batches are non-empty"), 1.0 / batch.len() as f64);
            let loss_val = tape.data(loss)[[0, 0]];
            if !loss_val.is_finite() {
                return Err(Error::Diverged(format!("epoch {epoch}: training loss is not finite")));
            }
            if loss_val.abs() > 1e12 {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}: training loss magnitude {loss_val} exceeds 1e12"
                )));
            }
            tape.backward(loss);

            let ids = tc.ids();
            for (slot, (param, id)) in weights.params_mut().into_iter().zip(ids).enumerate() {
                let wd = if mask[slot] { 0.0 } else { cfg.weight_decay };
                let grad = tape.grad(id).clone();
                opt.step_at(slot, param, &grad, lr, wd);
            }
            let finite = weights.params_mut().iter().all(|p| p.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Diverged(format!(
                    "epoch {epoch}: a parameter became non-finite after the update"
                )));
            }
        }
    }
    Ok(weights)
}

/// Predicted class of one cloud: argmax over logits, ties resolved to the
/// lowest class index.
pub fn predict(weights: &ClassifierWeights, cloud: &PointCloud) -> usize {
    let mut tape = Tape::new();
    let tc = load_classifier(&mut tape, weights);
    let x = tape.leaf(cloud.points().clone());
    let logits = classifier_forward(&mut tape, &tc, x);
    let row = tape.data(logits);
    let mut best = 0;
    for k in 1..row.ncols() {
        if row[[0, k]] > row[[0, best]] {
            best = k;
        }
    }
    best
}

/// Fraction of test items the classifier labels correctly.
pub fn evaluate_accuracy(weights: &ClassifierWeights, test: &LabeledDataset) -> f64 {
    assert!(!test.is_empty(), "cannot score an empty test set");
    let correct = test
        .items()
        .iter()
        .filter(|(cloud, label)| predict(weights, cloud) == *label)
        .count();
    correct as f64 / test.len() as f64
}

/// Per-repeat scoring detail: overall accuracy plus per-class counts.
struct RepeatScore {
    accuracy: f64,
    class_correct: Vec<usize>,
    class_total: Vec<usize>,
}

fn score_repeat(weights: &ClassifierWeights, test: &LabeledDataset) -> RepeatScore {
    let k = test.num_classes();
    let mut class_correct = vec![0usize; k];
    let mut class_total = vec![0usize; k];
    for (cloud, label) in test.items() {
        class_total[*label] += 1;
        if predict(weights, cloud) == *label {
            class_correct[*label] += 1;
        }
    }
    let correct: usize = class_correct.iter().sum();
    RepeatScore { accuracy: correct as f64 / test.len() as f64, class_correct, class_total }
}

/// Runs `cfg.repeats` independent train-and-score cycles and aggregates
/// their accuracies. Repeats run concurrently; results aggregate in repeat
/// order, so the report does not depend on the thread count.
pub fn repeated_eval(train: &LabeledDataset, test: &LabeledDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::Invalid("cannot evaluate against an empty test set".into()));
    }
    let start = Instant::now();
    let scores: Result<Vec<RepeatScore>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let repeat_seed = rng_for(cfg.seed, &[PURPOSE_EVAL, r as u64]).gen::<u64>();
            let weights = train_classifier(train, cfg, repeat_seed)?;
            Ok(score_repeat(&weights, test))
        })
        .collect();
    let scores = scores?;

    let accuracies: Vec<f64> = scores.iter().map(|s| s.accuracy).collect();
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let std = if accuracies.len() < 2 {
        0.0
    } else {
        let var = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
            / (accuracies.len() - 1) as f64;
        var.sqrt()
    };
    let k = test.num_classes();
    let per_class: Vec<f64> = (0..k)
        .map(|c| {
            let per_repeat: Vec<f64> = scores
                .iter()
                .map(|s| s.class_correct[c] as f64 / s.class_total[c] as f64)
                .collect();
            per_repeat.iter().sum::<f64>() / per_repeat.len() as f64
        })
        .collect();
    Ok(EvalReport { accuracies, mean, std, per_class, wall_seconds: start.elapsed().as_secs_f64() })
}
