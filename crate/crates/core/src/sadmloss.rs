//! Feature-alignment strategies and the distribution-matching losses built
//! on them.
//!
//! A batch of real clouds is compared against a batch of synthetic clouds
//! through one randomly initialized extractor: per-point features are
//! aligned (channel-wise descending sort by default), the aligned matrices
//! feed a Gaussian mean kernel, and squared-MMD terms on the full matrices
//! and on the per-channel maxima combine into the final weighted loss.
//! Real-side features are computed off the gradient tape; only the
//! synthetic clouds (and any rotation upstream of them) receive gradients.

use crate::diffgraph::{Tape, ValueId};
use crate::featnet::{extract_prepool, load_weights, NetworkWeights};
use crate::{Error, Result};
use ndarray::Array2;
use std::str::FromStr;

/// How per-point feature rows are matched up before the kernel comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlignmentStrategy {
    /// Leave rows in input order (order-sensitive; the failure mode the
    /// sorting strategies exist to fix).
    Unsorted,
    /// Reorder whole rows by the point's ascending z coordinate.
    AxisZ,
    /// Reorder whole rows by ascending 30-bit Morton code of the
    /// box-quantized coordinates.
    Morton,
    /// Sort each feature channel independently in descending order.
    #[default]
    ChannelSorted,
}

impl AlignmentStrategy {
    /// Canonical lowercase name, matching the `FromStr` spelling.
    pub fn name(self) -> &'static str {
        match self {
            AlignmentStrategy::Unsorted => "unsorted",
            AlignmentStrategy::AxisZ => "axis_z",
            AlignmentStrategy::Morton => "morton",
            AlignmentStrategy::ChannelSorted => "channel_sorted",
        }
    }
}

impl FromStr for AlignmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unsorted" => Ok(AlignmentStrategy::Unsorted),
            "axis_z" => Ok(AlignmentStrategy::AxisZ),
            "morton" => Ok(AlignmentStrategy::Morton),
            "channel_sorted" => Ok(AlignmentStrategy::ChannelSorted),
            other => Err(Error::Config(format!(
                "unknown alignment strategy {other:?} (expected unsorted, axis_z, morton, or channel_sorted)"
            ))),
        }
    }
}

/// Bandwidth rule for the Gaussian kernel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelConfig {
    /// Use the given σ for every call. Must be positive.
    Fixed(f64),
    /// Per call, set σ so the median pairwise squared distance maps to a
    /// kernel value of one half.
    #[default]
    MedianHeuristic,
}

/// Weights of the two loss terms: full sorted-matrix MMD and channel-maxima
/// MMD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight on the full-matrix term.
    pub lambda_alpha: f64,
    /// Weight on the channel-maxima term.
    pub lambda_beta: f64,
}

impl LossWeights {
    /// Validates and builds: both weights finite and ≥ 0, not both zero.
    pub fn new(lambda_alpha: f64, lambda_beta: f64) -> Result<Self> {
        if !lambda_alpha.is_finite() || !lambda_beta.is_finite() || lambda_alpha < 0.0 || lambda_beta < 0.0
        {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got ({lambda_alpha}, {lambda_beta})"
            )));
        }
        if lambda_alpha == 0.0 && lambda_beta == 0.0 {
            return Err(Error::Config("loss weights must not both be zero".into()));
        }
        Ok(LossWeights { lambda_alpha, lambda_beta })
    }

    /// Tuned weights per points-per-class budget: (0.002, 0.001) at 1,
    /// (0.006, 0.003) at 3, (0.02, 0.01) at 10, and the same linear rule
    /// λ = ppc·(0.002, 0.001) for any other budget.
    pub fn for_ppc(ppc: usize) -> Self {
        match ppc {
            1 => LossWeights { lambda_alpha: 0.002, lambda_beta: 0.001 },
            3 => LossWeights { lambda_alpha: 0.006, lambda_beta: 0.003 },
            10 => LossWeights { lambda_alpha: 0.02, lambda_beta: 0.01 },
            n => LossWeights { lambda_alpha: 0.002 * n as f64, lambda_beta: 0.001 * n as f64 },
        }
    }
}

// ----- row orderings ---------------------------------------------------------

/// Row order sorting points by ascending z, ties by original index.
pub fn axis_z_order(points: &Array2<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.nrows()).collect();
    idx.sort_by(|&a, &b| {
        points[[a, 2]]
            .partial_cmp(&points[[b, 2]])
            .expect("point coordinates must not contain NaN")
            .then(a.cmp(&b))
    });
    idx
}

/// Interleaves three 10-bit coordinates into a 30-bit code: bit i of x lands
/// at position 3i, of y at 3i+1, of z at 3i+2.
pub fn morton_code(ix: u32, iy: u32, iz: u32) -> u32 {
    assert!(ix < 1024 && iy < 1024 && iz < 1024, "morton inputs must be 10-bit");
    let mut code = 0u32;
    for bit in 0..10 {
        code |= ((ix >> bit) & 1) << (3 * bit);
        code |= ((iy >> bit) & 1) << (3 * bit + 1);
        code |= ((iz >> bit) & 1) << (3 * bit + 2);
    }
    code
}

/// Quantizes each coordinate to 10 bits over the cloud's own bounding box
/// (degenerate axes map to 0, the top edge clamps to 1023) and interleaves.
pub fn morton_codes(points: &Array2<f64>) -> Vec<u32> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for row in points.rows() {
        for a in 0..3 {
            lo[a] = lo[a].min(row[a]);
            hi[a] = hi[a].max(row[a]);
        }
    }
    let quant = |v: f64, a: usize| -> u32 {
        if hi[a] > lo[a] {
            (((v - lo[a]) / (hi[a] - lo[a]) * 1024.0) as u32).min(1023)
        } else {
            0
        }
    };
    points
        .rows()
        .into_iter()
        .map(|row| morton_code(quant(row[0], 0), quant(row[1], 1), quant(row[2], 2)))
        .collect()
}

/// Row order sorting points along the Morton curve, ties by original index.
pub fn morton_order(points: &Array2<f64>) -> Vec<usize> {
    let codes = morton_codes(points);
    let mut idx: Vec<usize> = (0..points.nrows()).collect();
    idx.sort_by_key(|&i| (codes[i], i));
    idx
}

/// Reorders a feature matrix per the chosen strategy. Row orders come from
/// the point coordinates (taken as plain data, outside the gradient), while
/// the reordering itself stays differentiable.
pub fn align_features(
    tape: &mut Tape,
    features: ValueId,
    points: &Array2<f64>,
    strategy: AlignmentStrategy,
) -> ValueId {
    assert_eq!(
        tape.data(features).nrows(),
        points.nrows(),
        "align_features: features and points must have one row per point"
    );
    match strategy {
        AlignmentStrategy::Unsorted => features,
        AlignmentStrategy::ChannelSorted => tape.channelwise_sort_desc(features),
        AlignmentStrategy::AxisZ => {
            let order = axis_z_order(points);
            tape.row_select(features, &order)
        }
        AlignmentStrategy::Morton => {
            let order = morton_order(points);
            tape.row_select(features, &order)
        }
    }
}

// ----- kernel and MMD --------------------------------------------------------

/// Median of the values (mean of the middle two for even counts).
fn median(mut values: Vec<f64>) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    values.sort_by(|a, b| a.partial_cmp(b).expect("distances must not contain NaN"));
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

fn squared_frobenius_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Resolves the kernel bandwidth for one call over the union of both
/// matrix sets. The median heuristic divides the median pairwise squared
/// distance by 2·ln 2 so the median pair gets kernel value 0.5, and falls
/// back to 1.0 when every pair coincides. Distances that overflow to
/// non-finite values report divergence.
pub fn resolve_sigma(cfg: &KernelConfig, union: &[&Array2<f64>]) -> Result<f64> {
    match *cfg {
        KernelConfig::Fixed(sigma) => {
            if !sigma.is_finite() || sigma <= 0.0 {
                Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")))
            } else {
                Ok(sigma)
            }
        }
        KernelConfig::MedianHeuristic => {
            let mut dists = Vec::new();
            for i in 0..union.len() {
                for j in i + 1..union.len() {
                    dists.push(squared_frobenius_distance(union[i], union[j]));
                }
            }
            if dists.is_empty() {
                return Ok(1.0);
            }
            if !dists.iter().all(|d| d.is_finite()) {
                return Err(Error::Diverged(
                    "feature distances overflowed while resolving the kernel bandwidth".into(),
                ));
            }
            let med = median(dists);
            if med > 0.0 {
                Ok(med / (2.0 * std::f64::consts::LN_2))
            } else {
                Ok(1.0)
            }
        }
    }
}

/// Mean Gaussian kernel between two sets of equally shaped matrices:
/// average over all cross pairs of `exp(−‖a−b‖²_F / (2σ))`.
pub fn gaussian_mean_kernel(tape: &mut Tape, a: &[ValueId], b: &[ValueId], sigma: f64) -> ValueId {
    assert!(!a.is_empty() && !b.is_empty(), "kernel sets must be non-empty");
    assert!(sigma.is_finite() && sigma > 0.0, "kernel bandwidth must be positive");
    let mut acc: Option<ValueId> = None;
    for &x in a {
        for &y in b {
            let diff = tape.sub(x, y);
            let sq = tape.square(diff);
            let dist = tape.sum(sq);
            let scaled = tape.mul_scalar(dist, -1.0 / (2.0 * sigma));
            let k = tape.exp(scaled);
            acc = Some(match acc {
                Some(prev) => tape.add(prev, k),
                None => k,
            });
        }
    }
    let total = acc.unwrap();
    tape.mul_scalar(total, 1.0 / (a.len() * b.len()) as f64)
}

/// Biased squared-MMD estimate: `K(A,A) + K(B,B) − 2·K(A,B)`.
pub fn mmd_loss(tape: &mut Tape, a: &[ValueId], b: &[ValueId], sigma: f64) -> ValueId {
    let kaa = gaussian_mean_kernel(tape, a, a, sigma);
    let kbb = gaussian_mean_kernel(tape, b, b, sigma);
    let kab = gaussian_mean_kernel(tape, a, b, sigma);
    let within = tape.add(kaa, kbb);
    let cross = tape.mul_scalar(kab, -2.0);
    tape.add(within, cross)
}

// ----- cloud-level losses ----------------------------------------------------

/// Aligned and pooled feature nodes for the real and synthetic batches.
struct PreparedFeatures {
    t_aligned: Vec<ValueId>,
    t_pooled: Vec<ValueId>,
    s_aligned: Vec<ValueId>,
    s_pooled: Vec<ValueId>,
}

/// Extracts features for both batches: the real side on a throwaway tape
/// (so no gradient reaches it), the synthetic side on the caller's tape.
fn prepare_features(
    tape: &mut Tape,
    net: &NetworkWeights,
    t_clouds: &[Array2<f64>],
    s_clouds: &[ValueId],
    strategy: AlignmentStrategy,
) -> PreparedFeatures {
    assert!(!t_clouds.is_empty() && !s_clouds.is_empty(), "loss batches must be non-empty");
    let n = t_clouds[0].nrows();
    let s_points: Vec<Array2<f64>> = s_clouds.iter().map(|&id| tape.data(id).clone()).collect();
    for c in t_clouds.iter().chain(s_points.iter()) {
        assert_eq!(c.ncols(), 3, "clouds must be N×3");
        assert_eq!(c.nrows(), n, "all clouds in a loss call must share a point count");
    }

    let mut side = Tape::new();
    let side_weights = load_weights(&mut side, net);
    let mut t_aligned = Vec::with_capacity(t_clouds.len());
    let mut t_pooled = Vec::with_capacity(t_clouds.len());
    for cloud in t_clouds {
        let x = side.leaf(cloud.clone());
        let pre = extract_prepool(&mut side, &side_weights, x);
        let aligned = align_features(&mut side, pre, cloud, strategy);
        let pooled = side.channelwise_max(pre);
        t_aligned.push(tape.leaf(side.data(aligned).clone()));
        t_pooled.push(tape.leaf(side.data(pooled).clone()));
    }

    let weights = load_weights(tape, net);
    let mut s_aligned = Vec::with_capacity(s_clouds.len());
    let mut s_pooled = Vec::with_capacity(s_clouds.len());
    for (&id, points) in s_clouds.iter().zip(&s_points) {
        let pre = extract_prepool(tape, &weights, id);
        s_aligned.push(align_features(tape, pre, points, strategy));
        s_pooled.push(tape.channelwise_max(pre));
    }

    PreparedFeatures { t_aligned, t_pooled, s_aligned, s_pooled }
}

fn sigma_over(tape: &Tape, cfg: &KernelConfig, a: &[ValueId], b: &[ValueId]) -> Result<f64> {
    let union: Vec<&Array2<f64>> = a.iter().chain(b).map(|&id| tape.data(id)).collect();
    resolve_sigma(cfg, &union)
}

/// Full-matrix distribution-matching term: squared MMD between the aligned
/// per-point feature matrices of the two batches.
pub fn l_alpha(
    tape: &mut Tape,
    net: &NetworkWeights,
    t_clouds: &[Array2<f64>],
    s_clouds: &[ValueId],
    strategy: AlignmentStrategy,
    kernel: &KernelConfig,
) -> Result<ValueId> {
    let f = prepare_features(tape, net, t_clouds, s_clouds, strategy);
    let sigma = sigma_over(tape, kernel, &f.t_aligned, &f.s_aligned)?;
    Ok(mmd_loss(tape, &f.t_aligned, &f.s_aligned, sigma))
}

/// Channel-maxima term: squared MMD between the pooled feature rows
/// (equivalently the top row of each channel-sorted matrix).
pub fn l_beta(
    tape: &mut Tape,
    net: &NetworkWeights,
    t_clouds: &[Array2<f64>],
    s_clouds: &[ValueId],
    kernel: &KernelConfig,
) -> Result<ValueId> {
    let f = prepare_features(tape, net, t_clouds, s_clouds, AlignmentStrategy::Unsorted);
    let sigma = sigma_over(tape, kernel, &f.t_pooled, &f.s_pooled)?;
    Ok(mmd_loss(tape, &f.t_pooled, &f.s_pooled, sigma))
}

/// The combined loss: `λ_α · full-matrix term + λ_β · channel-maxima term`,
/// with an independently resolved bandwidth per term.
pub fn l_sadm(
    tape: &mut Tape,
    net: &NetworkWeights,
    t_clouds: &[Array2<f64>],
    s_clouds: &[ValueId],
    strategy: AlignmentStrategy,
    kernel: &KernelConfig,
    weights: &LossWeights,
) -> Result<ValueId> {
    let f = prepare_features(tape, net, t_clouds, s_clouds, strategy);
    let sigma_a = sigma_over(tape, kernel, &f.t_aligned, &f.s_aligned)?;
    let sigma_b = sigma_over(tape, kernel, &f.t_pooled, &f.s_pooled)?;
    let alpha = mmd_loss(tape, &f.t_aligned, &f.s_aligned, sigma_a);
    let beta = mmd_loss(tape, &f.t_pooled, &f.s_pooled, sigma_b);
    let wa = tape.mul_scalar(alpha, weights.lambda_alpha);
    let wb = tape.mul_scalar(beta, weights.lambda_beta);
    Ok(tape.add(wa, wb))
}

/// Pooled-feature matching baseline; by construction the same computation
/// as the channel-maxima term alone.
pub fn dm_baseline_loss(
    tape: &mut Tape,
    net: &NetworkWeights,
    t_clouds: &[Array2<f64>],
    s_clouds: &[ValueId],
    kernel: &KernelConfig,
) -> Result<ValueId> {
    l_beta(tape, net, t_clouds, s_clouds, kernel)
}
