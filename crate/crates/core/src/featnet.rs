//! Randomly initialized per-point feature extractor and the classifier
//! built on top of it.
//!
//! The extractor is a shared MLP: every point passes through the same
//! affine/relu stack, giving an N×C feature matrix whose row j depends only
//! on point j (permutation equivariance). The final layer is linear — no
//! closing relu — so features carry sign information and channel sorting
//! does not collapse onto plateaus of tied zeros. Max-pooling the channels
//! yields the permutation-invariant pooled vector.
//!
//! An optional input-transform stage (shared MLP → max pool → affine head
//! reshaped to 3×3) multiplies the coordinates by a data-dependent matrix
//! before the main stack, mirroring the alignment sub-network of the usual
//! point-cloud backbone at a desk-friendly size.

use crate::diffgraph::{Tape, ValueId};
use crate::{Error, Result};
use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha8Rng;

/// Architecture of the shared-MLP extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    /// Layer widths from input to output: `[3, hidden…, C]`.
    pub widths: Vec<usize>,
    /// Prepend the 3×3 input-transform stage.
    pub include_input_transform: bool,
}

/// Fixed architecture of the input-transform sub-network.
const TRANSFORM_WIDTHS: [usize; 3] = [3, 32, 64];

impl ExtractorConfig {
    /// Validates and builds a config without the input transform.
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Invalid("extractor needs at least input and output widths".into()));
        }
        if widths[0] != 3 {
            return Err(Error::Invalid(format!("extractor input width must be 3, got {}", widths[0])));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Invalid("extractor widths must all be ≥ 1".into()));
        }
        Ok(ExtractorConfig { widths, include_input_transform: false })
    }

    /// Desk-scale default: `3 → 64 → 128 → c` without the input transform.
    pub fn desk_scale(c: usize) -> Self {
        ExtractorConfig { widths: vec![3, 64, 128, c], include_input_transform: false }
    }

    /// Output channel count C.
    pub fn channels(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Dense weights of one affine stack: `(W: in×out, b: 1×out)` per layer.
type Layers = Vec<(Array2<f64>, Array2<f64>)>;

/// Materialized extractor weights.
#[derive(Debug, Clone)]
pub struct NetworkWeights {
    layers: Layers,
    /// `(mlp layers, head)` of the input transform, when enabled.
    transform: Option<(Layers, (Array2<f64>, Array2<f64>))>,
}

fn init_layer(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> (Array2<f64>, Array2<f64>) {
    let bound = (1.0 / fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let w = Array2::from_shape_fn((fan_in, fan_out), |_| dist.sample(rng));
    (w, Array2::zeros((1, fan_out)))
}

fn init_stack(rng: &mut ChaCha8Rng, widths: &[usize]) -> Layers {
    widths.windows(2).map(|w| init_layer(rng, w[0], w[1])).collect()
}

/// Draws fresh weights: each entry uniform in `[−√(1/fan_in), +√(1/fan_in)]`,
/// biases zero. Deterministic in the RNG stream.
pub fn init_weights(cfg: &ExtractorConfig, rng: &mut ChaCha8Rng) -> NetworkWeights {
    let transform = cfg.include_input_transform.then(|| {
        let mlp = init_stack(rng, &TRANSFORM_WIDTHS);
        let head = init_layer(rng, TRANSFORM_WIDTHS[TRANSFORM_WIDTHS.len() - 1], 9);
        (mlp, head)
    });
    NetworkWeights { layers: init_stack(rng, &cfg.widths), transform }
}

impl NetworkWeights {
    /// Mutable views of every parameter array, in a fixed traversal order
    /// (transform stack first, then the main stack; weights before biases).
    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        if let Some((mlp, (hw, hb))) = &mut self.transform {
            for (w, b) in mlp {
                out.push(w);
                out.push(b);
            }
            out.push(hw);
            out.push(hb);
        }
        for (w, b) in &mut self.layers {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Output channel count C.
    pub fn channels(&self) -> usize {
        self.layers.last().unwrap().0.ncols()
    }

    /// The main affine stack as `(weight, bias)` pairs, input to output.
    pub fn layers(&self) -> &[(Array2<f64>, Array2<f64>)] {
        &self.layers
    }
}

/// Per-point features (N×C) computed outside any gradient tape.
pub fn extract_prepool_array(weights: &NetworkWeights, points: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let tw = load_weights(&mut tape, weights);
    let x = tape.leaf(points.clone());
    let f = extract_prepool(&mut tape, &tw, x);
    tape.data(f).clone()
}

/// Pooled feature row (1×C) computed outside any gradient tape.
pub fn extract_pooled_array(weights: &NetworkWeights, points: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let tw = load_weights(&mut tape, weights);
    let x = tape.leaf(points.clone());
    let p = extract_pooled(&mut tape, &tw, x);
    tape.data(p).clone()
}

/// Tape handles for loaded weights, in the same traversal order as
/// [`NetworkWeights::params_mut`].
#[derive(Debug, Clone)]
pub struct TapeWeights {
    layers: Vec<(ValueId, ValueId)>,
    transform: Option<(Vec<(ValueId, ValueId)>, (ValueId, ValueId))>,
}

impl TapeWeights {
    /// Every parameter's node id, matching `params_mut` order.
    pub fn ids(&self) -> Vec<ValueId> {
        let mut out = Vec::new();
        if let Some((mlp, (hw, hb))) = &self.transform {
            for (w, b) in mlp {
                out.push(*w);
                out.push(*b);
            }
            out.push(*hw);
            out.push(*hb);
        }
        for (w, b) in &self.layers {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

/// Copies weights onto a tape as leaves so extraction can run (and, when
/// training, so gradients can be read back per parameter).
pub fn load_weights(tape: &mut Tape, weights: &NetworkWeights) -> TapeWeights {
    let transform = weights.transform.as_ref().map(|(mlp, (hw, hb))| {
        let ids: Vec<_> = mlp
            .iter()
            .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
            .collect();
        (ids, (tape.leaf(hw.clone()), tape.leaf(hb.clone())))
    });
    let layers = weights
        .layers
        .iter()
        .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
        .collect();
    TapeWeights { layers, transform }
}

/// Runs an affine/relu stack with a linear (relu-free) last layer.
fn run_stack(tape: &mut Tape, layers: &[(ValueId, ValueId)], mut h: ValueId) -> ValueId {
    for (i, (w, b)) in layers.iter().enumerate() {
        h = tape.affine_map(h, *w, *b);
        if i + 1 < layers.len() {
            h = tape.relu(h);
        }
    }
    h
}

/// Per-point features (N×C) of a cloud already on the tape as an N×3 node.
/// Differentiable with respect to the cloud coordinates (and the weights).
pub fn extract_prepool(tape: &mut Tape, weights: &TapeWeights, cloud: ValueId) -> ValueId {
    let mut x = cloud;
    if let Some((mlp, (hw, hb))) = &weights.transform {
        let feat = run_stack(tape, mlp, x);
        let feat = tape.relu(feat);
        let pooled = tape.channelwise_max(feat);
        let tvec = tape.affine_map(pooled, *hw, *hb);
        let tmat = tape.reshape(tvec, 3, 3);
        x = tape.matmul(x, tmat);
    }
    run_stack(tape, &weights.layers, x)
}

/// Pooled feature row (1×C): channel-wise maximum of the per-point features.
pub fn extract_pooled(tape: &mut Tape, weights: &TapeWeights, cloud: ValueId) -> ValueId {
    let prepool = extract_prepool(tape, weights, cloud);
    tape.channelwise_max(prepool)
}

// ----- classifier ------------------------------------------------------------

/// Classifier = trainable extractor trunk + a one-hidden-layer head on the
/// pooled features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Trunk architecture (shared-MLP extractor).
    pub trunk: ExtractorConfig,
    /// Hidden width of the classification head.
    pub hidden: usize,
    /// Number of classes K.
    pub num_classes: usize,
}

impl ClassifierConfig {
    /// Validates and builds.
    pub fn new(trunk: ExtractorConfig, hidden: usize, num_classes: usize) -> Result<Self> {
        if hidden == 0 || num_classes == 0 {
            return Err(Error::Invalid("classifier hidden width and class count must be ≥ 1".into()));
        }
        Ok(ClassifierConfig { trunk, hidden, num_classes })
    }

    /// Desk-scale default: trunk 3→64→128, head 128→64→K.
    pub fn desk_scale(num_classes: usize) -> Self {
        ClassifierConfig {
            trunk: ExtractorConfig { widths: vec![3, 64, 128], include_input_transform: false },
            hidden: 64,
            num_classes,
        }
    }
}

/// Materialized classifier weights.
#[derive(Debug, Clone)]
pub struct ClassifierWeights {
    /// Extractor trunk.
    pub trunk: NetworkWeights,
    /// Head layers: pooled C → hidden → K.
    head: Layers,
}

/// Draws fresh classifier weights with the same uniform fan-in rule.
pub fn init_classifier(cfg: &ClassifierConfig, rng: &mut ChaCha8Rng) -> ClassifierWeights {
    let trunk = init_weights(&cfg.trunk, rng);
    let c = cfg.trunk.channels();
    let head = init_stack(rng, &[c, cfg.hidden, cfg.num_classes]);
    ClassifierWeights { trunk, head }
}

impl ClassifierWeights {
    /// Mutable views of every parameter (trunk first, then head), for the
    /// optimizer.
    pub fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = self.trunk.params_mut();
        for (w, b) in &mut self.head {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Immutable views in the same order as [`ClassifierWeights::params_mut`].
    pub fn params_ref(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        if let Some((mlp, head)) = &self.trunk.transform {
            for (w, b) in mlp {
                out.push(w);
                out.push(b);
            }
            out.push(&head.0);
            out.push(&head.1);
        }
        for (w, b) in &self.trunk.layers {
            out.push(w);
            out.push(b);
        }
        for (w, b) in &self.head {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Which parameters are biases (same order as `params_mut`); used to
    /// exempt biases from weight decay.
    pub fn bias_mask(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if self.trunk.transform.is_some() {
            let (mlp, _) = self.trunk.transform.as_ref().unwrap();
            for _ in mlp {
                out.extend([false, true]);
            }
            out.extend([false, true]); // head of the transform
        }
        for _ in &self.trunk.layers {
            out.extend([false, true]);
        }
        for _ in &self.head {
            out.extend([false, true]);
        }
        out
    }
}

/// Classifier weights loaded on a tape.
#[derive(Debug, Clone)]
pub struct TapeClassifier {
    /// Trunk handles.
    pub trunk: TapeWeights,
    head: Vec<(ValueId, ValueId)>,
}

impl TapeClassifier {
    /// Every parameter's node id, matching [`ClassifierWeights::params_mut`].
    pub fn ids(&self) -> Vec<ValueId> {
        let mut out = self.trunk.ids();
        for (w, b) in &self.head {
            out.push(*w);
            out.push(*b);
        }
        out
    }
}

/// Copies classifier weights onto a tape.
pub fn load_classifier(tape: &mut Tape, weights: &ClassifierWeights) -> TapeClassifier {
    let trunk = load_weights(tape, &weights.trunk);
    let head = weights
        .head
        .iter()
        .map(|(w, b)| (tape.leaf(w.clone()), tape.leaf(b.clone())))
        .collect();
    TapeClassifier { trunk, head }
}

/// Logits (1×K) for one cloud node: pooled trunk features through the head.
pub fn classifier_forward(tape: &mut Tape, weights: &TapeClassifier, cloud: ValueId) -> ValueId {
    let pooled = extract_pooled(tape, &weights.trunk, cloud);
    run_stack(tape, &weights.head, pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffgraph::finite_diff_check;
    use crate::seeds::rng_for;
    use ndarray::array;
    use rand::Rng;

    fn random_cloud(rng: &mut impl Rng, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn same_stream_gives_identical_weights() {
        let cfg = ExtractorConfig::desk_scale(16);
        let a = init_weights(&cfg, &mut rng_for(9, &[1]));
        let b = init_weights(&cfg, &mut rng_for(9, &[1]));
        for ((wa, ba), (wb, bb)) in a.layers.iter().zip(&b.layers) {
            assert_eq!(wa, wb);
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn weight_entries_respect_the_fan_in_bound() {
        let cfg = ExtractorConfig::new(vec![3, 64]).unwrap();
        let w = init_weights(&cfg, &mut rng_for(10, &[1]));
        let bound = (1.0f64 / 3.0).sqrt();
        for &v in w.layers[0].0.iter() {
            assert!(v.abs() <= bound, "|{v}| exceeds √(1/3)");
        }
        assert!(w.layers[0].1.iter().all(|&b| b == 0.0), "biases start at zero");
    }

    #[test]
    fn weight_stddev_matches_the_uniform_law() {
        // Uniform on [−a, a] with a = √(1/3) has stddev a/√3 = √(1/9).
        let cfg = ExtractorConfig::new(vec![3, 256]).unwrap();
        let w = init_weights(&cfg, &mut rng_for(11, &[1]));
        let flat: Vec<f64> = w.layers[0].0.iter().copied().collect();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / flat.len() as f64;
        let expect = (1.0f64 / 9.0).sqrt();
        assert!(
            (var.sqrt() - expect).abs() / expect < 0.1,
            "stddev {} deviates more than 10% from {expect}",
            var.sqrt()
        );
    }

    #[test]
    fn prepool_is_permutation_equivariant_bitwise() {
        let mut rng = rng_for(12, &[1]);
        let cfg = ExtractorConfig::desk_scale(8);
        let weights = init_weights(&cfg, &mut rng);
        let cloud = random_cloud(&mut rng, 10);
        let perm: Vec<usize> = vec![7, 3, 0, 9, 1, 2, 8, 4, 6, 5];
        let permuted = {
            let mut p = cloud.clone();
            for (dst, &src) in perm.iter().enumerate() {
                p.row_mut(dst).assign(&cloud.row(src));
            }
            p
        };

        let features = |data: &Array2<f64>| {
            let mut tape = Tape::new();
            let tw = load_weights(&mut tape, &weights);
            let x = tape.leaf(data.clone());
            let f = extract_prepool(&mut tape, &tw, x);
            tape.data(f).clone()
        };
        let base = features(&cloud);
        let shuffled = features(&permuted);
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(shuffled.row(dst), base.row(src), "row {dst} should be input row {src}'s image");
        }
    }

    #[test]
    fn pooled_is_permutation_invariant_bitwise() {
        let mut rng = rng_for(13, &[1]);
        let cfg = ExtractorConfig::desk_scale(8);
        let weights = init_weights(&cfg, &mut rng);
        let cloud = random_cloud(&mut rng, 12);
        let mut reversed = cloud.clone();
        for (dst, src) in (0..12).rev().enumerate() {
            reversed.row_mut(dst).assign(&cloud.row(src));
        }
        let pooled = |data: &Array2<f64>| {
            let mut tape = Tape::new();
            let tw = load_weights(&mut tape, &weights);
            let x = tape.leaf(data.clone());
            let p = extract_pooled(&mut tape, &tw, x);
            tape.data(p).clone()
        };
        assert_eq!(pooled(&cloud), pooled(&reversed));
    }

    #[test]
    fn single_point_cloud_yields_one_feature_row() {
        let mut rng = rng_for(14, &[1]);
        let weights = init_weights(&ExtractorConfig::desk_scale(5), &mut rng);
        let mut tape = Tape::new();
        let tw = load_weights(&mut tape, &weights);
        let x = tape.leaf(array![[0.1, -0.2, 0.3]]);
        let f = extract_prepool(&mut tape, &tw, x);
        assert_eq!(tape.data(f).dim(), (1, 5));
    }

    #[test]
    fn pooled_equals_top_row_of_sorted_features() {
        let mut rng = rng_for(15, &[1]);
        let weights = init_weights(&ExtractorConfig::desk_scale(6), &mut rng);
        let cloud = random_cloud(&mut rng, 9);
        let mut tape = Tape::new();
        let tw = load_weights(&mut tape, &weights);
        let x = tape.leaf(cloud);
        let pre = extract_prepool(&mut tape, &tw, x);
        let sorted = tape.channelwise_sort_desc(pre);
        let top = tape.row_select(sorted, &[0]);
        let pooled = tape.channelwise_max(pre);
        assert_eq!(tape.data(top), tape.data(pooled));
    }

    #[test]
    fn prepool_gradient_matches_finite_differences() {
        let mut rng = rng_for(16, &[1]);
        let weights = init_weights(&ExtractorConfig::new(vec![3, 16, 8]).unwrap(), &mut rng);
        let cloud = random_cloud(&mut rng, 6);
        let forward = |data: &Array2<f64>| {
            let mut tape = Tape::new();
            let tw = load_weights(&mut tape, &weights);
            let x = tape.leaf(data.clone());
            let f = extract_prepool(&mut tape, &tw, x);
            let s = tape.sum(f);
            tape.backward(s);
            (tape.data(s)[[0, 0]], tape.grad(x).clone())
        };
        let (_, g) = forward(&cloud);
        let rel = finite_diff_check(|p| forward(p).0, &cloud, &g, 1e-5);
        assert!(rel <= 1e-5, "rel err {rel}");
    }

    #[test]
    fn pooled_gradient_reaches_only_argmax_points() {
        let mut rng = rng_for(17, &[1]);
        let weights = init_weights(&ExtractorConfig::desk_scale(8), &mut rng);
        let cloud = random_cloud(&mut rng, 10);
        let mut tape = Tape::new();
        let tw = load_weights(&mut tape, &weights);
        let x = tape.leaf(cloud);
        let pre = extract_prepool(&mut tape, &tw, x);
        let pooled = tape.channelwise_max(pre);
        let loss = tape.sum(pooled);
        tape.backward(loss);

        // Rows the analytic gradient touched…
        let touched: Vec<usize> = tape
            .grad(x)
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
            .map(|(i, _)| i)
            .collect();
        // …must be within the per-channel argmax rows of the features.
        let feats = tape.data(pre);
        let mut argmax_rows: Vec<usize> = (0..feats.ncols())
            .map(|c| {
                let col = feats.column(c);
                let mut best = 0;
                for r in 1..col.len() {
                    if col[r] > col[best] {
                        best = r;
                    }
                }
                best
            })
            .collect();
        argmax_rows.sort_unstable();
        argmax_rows.dedup();
        for row in &touched {
            assert!(argmax_rows.contains(row), "gradient leaked into non-argmax row {row}");
        }
    }

    #[test]
    fn doubling_input_scale_never_shrinks_layer_one_preactivations() {
        // With zero-initialized biases, |(2x)·W| = 2|x·W| ≥ |x·W| per entry.
        let mut rng = rng_for(18, &[1]);
        let weights = init_weights(&ExtractorConfig::desk_scale(8), &mut rng);
        let cloud = random_cloud(&mut rng, 10);
        let pre1 = cloud.dot(&weights.layers[0].0);
        let pre2 = (&cloud * 2.0).dot(&weights.layers[0].0);
        for (a, b) in pre1.iter().zip(pre2.iter()) {
            assert!(b.abs() >= a.abs() - 1e-15, "|{b}| < |{a}| after doubling the input");
        }
    }

    #[test]
    fn input_transform_keeps_equivariance_and_differentiability() {
        let mut rng = rng_for(19, &[1]);
        let cfg = ExtractorConfig {
            widths: vec![3, 16, 8],
            include_input_transform: true,
        };
        let weights = init_weights(&cfg, &mut rng);
        let cloud = random_cloud(&mut rng, 7);

        let forward = |data: &Array2<f64>| {
            let mut tape = Tape::new();
            let tw = load_weights(&mut tape, &weights);
            let x = tape.leaf(data.clone());
            let f = extract_prepool(&mut tape, &tw, x);
            let s = tape.sum(f);
            tape.backward(s);
            (tape.data(s)[[0, 0]], tape.data(f).clone(), tape.grad(x).clone())
        };
        let (_, base, g) = forward(&cloud);
        assert_eq!(base.dim(), (7, 8));

        // Reversing the points reverses the feature rows bitwise: the
        // transform matrix pools over all points, so it is unchanged.
        let mut reversed = cloud.clone();
        for (dst, src) in (0..7).rev().enumerate() {
            reversed.row_mut(dst).assign(&cloud.row(src));
        }
        let (_, rev, _) = forward(&reversed);
        for dst in 0..7 {
            assert_eq!(rev.row(dst), base.row(6 - dst));
        }

        let rel = finite_diff_check(|p| forward(p).0, &cloud, &g, 1e-5);
        assert!(rel <= 1e-4, "rel err {rel}");
    }

    #[test]
    fn classifier_forward_produces_finite_logits() {
        let mut rng = rng_for(20, &[1]);
        let cfg = ClassifierConfig::desk_scale(4);
        let weights = init_classifier(&cfg, &mut rng);
        let mut tape = Tape::new();
        let tc = load_classifier(&mut tape, &weights);
        let x = tape.leaf(random_cloud(&mut rng, 16));
        let logits = classifier_forward(&mut tape, &tc, x);
        assert_eq!(tape.data(logits).dim(), (1, 4));
        assert!(tape.data(logits).iter().all(|v| v.is_finite()));
    }

    /// Smallest margin protecting the piecewise structure of the forward
    /// pass: relu preactivation magnitudes in the trunk and head hidden
    /// layers, and top-2 gaps in each max-pooled channel. Finite differences
    /// stay on one linear piece only while the probe step is well below this.
    fn piecewise_margin(weights: &ClassifierWeights, cloud: &Array2<f64>) -> f64 {
        let mut margin = f64::INFINITY;
        let pre1 = cloud.dot(&weights.trunk.layers[0].0) + &weights.trunk.layers[0].1;
        for &v in pre1.iter() {
            margin = margin.min(v.abs());
        }
        let h1 = pre1.mapv(|v| v.max(0.0));
        let feats = h1.dot(&weights.trunk.layers[1].0) + &weights.trunk.layers[1].1;
        let mut pooled = Array2::zeros((1, feats.ncols()));
        for c in 0..feats.ncols() {
            let mut col: Vec<f64> = feats.column(c).to_vec();
            col.sort_by(|a, b| b.partial_cmp(a).unwrap());
            margin = margin.min(col[0] - col[1]);
            pooled[[0, c]] = col[0];
        }
        let hid_pre = pooled.dot(&weights.head[0].0) + &weights.head[0].1;
        for &v in hid_pre.iter() {
            margin = margin.min(v.abs());
        }
        margin
    }

    #[test]
    fn classifier_gradient_matches_finite_differences() {
        let mut rng = rng_for(21, &[1]);
        let cfg = ClassifierConfig {
            trunk: ExtractorConfig::new(vec![3, 12, 6]).unwrap(),
            hidden: 10,
            num_classes: 3,
        };
        let weights = init_classifier(&cfg, &mut rng);
        // Resample deterministically until every relu unit and pooled
        // channel has a gap far above the probe step, so the finite
        // difference never crosses a kink or flips an argmax.
        let cloud = loop {
            let c = random_cloud(&mut rng, 8);
            if piecewise_margin(&weights, &c) > 1e-3 {
                break c;
            }
        };

        // Check the full loss gradient with respect to one trunk weight
        // matrix and one head matrix through cross-entropy.
        let forward = |probe: &Array2<f64>, which: usize| {
            let mut w = weights.clone();
            if which == 0 {
                w.trunk.layers[0].0 = probe.clone();
            } else {
                w.head[1].0 = probe.clone();
            }
            let mut tape = Tape::new();
            let tc = load_classifier(&mut tape, &w);
            let x = tape.leaf(cloud.clone());
            let logits = classifier_forward(&mut tape, &tc, x);
            let ce = tape.cross_entropy(logits, &[2]);
            tape.backward(ce);
            let ids = tc.ids();
            // params_mut order: trunk layers (w,b)…, then head (w,b)….
            let grad_idx = if which == 0 { 0 } else { ids.len() - 2 };
            (tape.data(ce)[[0, 0]], tape.grad(ids[grad_idx]).clone())
        };

        let (_, g0) = forward(&weights.trunk.layers[0].0.clone(), 0);
        let rel0 = finite_diff_check(|p| forward(p, 0).0, &weights.trunk.layers[0].0.clone(), &g0, 1e-5);
        assert!(rel0 <= 1e-4, "trunk rel err {rel0}");

        let (_, g1) = forward(&weights.head[1].0.clone(), 1);
        let rel1 = finite_diff_check(|p| forward(p, 1).0, &weights.head[1].0.clone(), &g1, 1e-5);
        assert!(rel1 <= 1e-4, "head rel err {rel1}");
    }

    #[test]
    fn config_validation_rejects_bad_widths() {
        assert!(ExtractorConfig::new(vec![3]).is_err());
        assert!(ExtractorConfig::new(vec![2, 8]).is_err());
        assert!(ExtractorConfig::new(vec![3, 0, 8]).is_err());
        assert!(ClassifierConfig::new(ExtractorConfig::desk_scale(8), 0, 3).is_err());
        assert!(ClassifierConfig::new(ExtractorConfig::desk_scale(8), 16, 0).is_err());
    }

    #[test]
    fn params_and_ids_walk_the_same_order() {
        let mut rng = rng_for(22, &[1]);
        let cfg = ClassifierConfig::desk_scale(3);
        let mut weights = init_classifier(&cfg, &mut rng);
        let mut tape = Tape::new();
        let tc = load_classifier(&mut tape, &weights);
        let ids = tc.ids();
        let mask = weights.bias_mask();
        let params = weights.params_mut();
        assert_eq!(ids.len(), params.len());
        assert_eq!(mask.len(), params.len());
        for (i, p) in params.iter().enumerate() {
            assert_eq!(tape.data(ids[i]), *p, "parameter {i} mismatch");
            // Parameters alternate weight, bias throughout the traversal.
            assert_eq!(mask[i], i % 2 == 1);
        }
    }
}
