//! Synthetic toy datasets: analytic shapes sampled on their surfaces, with
//! optional Gaussian jitter and per-object random poses.
//!
//! Each class is one shape kind. The vertical axis is y. Objects are
//! generated as surface samples → jitter → pose rotation → unit-sphere
//! normalization, with independent derived RNG streams for each stage so
//! that, for a fixed seed, the aligned and rotated regimes share base
//! geometry and differ only by the pose.

use super::{normalize_unit_sphere, LabeledDataset, PointCloud};
use crate::rotator::{apply_rotation, RotationParams};
use crate::seeds::{self, rng_for};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::TAU;

/// Analytic shape kinds available to the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ToyShape {
    /// Unit sphere centered at the origin.
    Sphere,
    /// Axis-aligned cube with side 2.
    Cube,
    /// Cone with base radius 1 at y = −1/2 and apex at y = +1/2.
    Cone,
    /// Cylinder with radius 1 and height 1 (caps at y = ±1/2).
    Cylinder,
    /// Torus in the x–z plane, major radius 0.7, minor radius 0.3.
    Torus,
    /// Flat square [−1,1]² in the x–z plane at y = 0.
    Plane,
}

impl ToyShape {
    /// Stable lowercase name, used for class-name tables and the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            ToyShape::Sphere => "sphere",
            ToyShape::Cube => "cube",
            ToyShape::Cone => "cone",
            ToyShape::Cylinder => "cylinder",
            ToyShape::Torus => "torus",
            ToyShape::Plane => "plane",
        }
    }
}

impl std::str::FromStr for ToyShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ToyShape::Sphere),
            "cube" => Ok(ToyShape::Cube),
            "cone" => Ok(ToyShape::Cone),
            "cylinder" => Ok(ToyShape::Cylinder),
            "torus" => Ok(ToyShape::Torus),
            "plane" => Ok(ToyShape::Plane),
            other => Err(Error::Config(format!(
                "unknown shape {other:?}; expected sphere|cube|cone|cylinder|torus|plane"
            ))),
        }
    }
}

/// Pose assignment across classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationRegime {
    /// Identity pose for every object.
    Aligned,
    /// Random pose for the first ⌈K/2⌉ classes, identity for the rest.
    Mixed,
    /// Independent random pose for every object.
    Rotated,
}

impl std::str::FromStr for RotationRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(RotationRegime::Aligned),
            "mixed" => Ok(RotationRegime::Mixed),
            "rotated" => Ok(RotationRegime::Rotated),
            other => Err(Error::Config(format!(
                "unknown rotation regime {other:?}; expected aligned|mixed|rotated"
            ))),
        }
    }
}

impl RotationRegime {
    /// Stable lowercase name.
    pub fn name(&self) -> &'static str {
        match self {
            RotationRegime::Aligned => "aligned",
            RotationRegime::Mixed => "mixed",
            RotationRegime::Rotated => "rotated",
        }
    }
}

/// Full recipe for one generated train/test pair.
#[derive(Debug, Clone)]
pub struct ToySpec {
    /// One class per shape, in order (labels follow this order).
    pub shapes: Vec<ToyShape>,
    /// Training objects per class.
    pub train_per_class: usize,
    /// Test objects per class.
    pub test_per_class: usize,
    /// Pose assignment.
    pub regime: RotationRegime,
    /// Standard deviation of isotropic Gaussian coordinate noise.
    pub jitter_std: f64,
    /// Points per cloud.
    pub points_per_cloud: usize,
    /// Master seed; the generator is a pure function of the spec.
    pub seed: u64,
}

impl ToySpec {
    fn validate(&self) -> Result<()> {
        if self.shapes.is_empty() {
            return Err(Error::Invalid("toy spec needs at least one shape".into()));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            if self.shapes[..i].contains(s) {
                return Err(Error::Invalid(format!("duplicate shape {:?} in toy spec", s.name())));
            }
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Invalid("per-class train/test counts must be ≥ 1".into()));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::Invalid("jitter stddev must be finite and ≥ 0".into()));
        }
        if self.points_per_cloud == 0 {
            return Err(Error::Invalid("points per cloud must be ≥ 1".into()));
        }
        Ok(())
    }
}

fn unit_disk(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let r = rng.gen::<f64>().sqrt();
    let phi = rng.gen::<f64>() * TAU;
    (r * phi.cos(), r * phi.sin())
}

/// Draws `n` exact surface samples of `shape` (no jitter, no pose, no
/// normalization). Exposed so tests can check the analytic geometry.
pub fn sample_surface(shape: ToyShape, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 3));
    match shape {
        ToyShape::Sphere => {
            let normal = Normal::new(0.0, 1.0).unwrap();
            for i in 0..n {
                // Normalized Gaussian triple: uniform on the sphere.
                loop {
                    let v: [f64; 3] = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if norm > 1e-12 {
                        for k in 0..3 {
                            pts[[i, k]] = v[k] / norm;
                        }
                        break;
                    }
                }
            }
        }
        ToyShape::Cube => {
            for i in 0..n {
                // Six faces of equal area: pick one, then uniform in it.
                let face = rng.gen_range(0..6usize);
                let (u, v) = (rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0);
                let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
                pts[[i, axis]] = sign;
                pts[[i, (axis + 1) % 3]] = u;
                pts[[i, (axis + 2) % 3]] = v;
            }
        }
        ToyShape::Cone => {
            // Base radius 1 at y=−1/2, apex (0, 1/2, 0), height 1.
            // Lateral area π·√2, base area π.
            let lateral_frac = (2.0f64).sqrt() / (1.0 + (2.0f64).sqrt());
            for i in 0..n {
                if rng.gen::<f64>() < lateral_frac {
                    // Uniform on the lateral surface: slant position √u.
                    let f = rng.gen::<f64>().sqrt();
                    let phi = rng.gen::<f64>() * TAU;
                    pts[[i, 0]] = f * phi.cos();
                    pts[[i, 1]] = 0.5 - f;
                    pts[[i, 2]] = f * phi.sin();
                } else {
                    let (x, z) = unit_disk(rng);
                    pts[[i, 0]] = x;
                    pts[[i, 1]] = -0.5;
                    pts[[i, 2]] = z;
                }
            }
        }
        ToyShape::Cylinder => {
            // Lateral area 2π, caps π each.
            for i in 0..n {
                let u = rng.gen::<f64>() * 4.0;
                if u < 2.0 {
                    let phi = rng.gen::<f64>() * TAU;
                    pts[[i, 0]] = phi.cos();
                    pts[[i, 1]] = rng.gen::<f64>() - 0.5;
                    pts[[i, 2]] = phi.sin();
                } else {
                    let (x, z) = unit_disk(rng);
                    pts[[i, 0]] = x;
                    pts[[i, 1]] = if u < 3.0 { 0.5 } else { -0.5 };
                    pts[[i, 2]] = z;
                }
            }
        }
        ToyShape::Torus => {
            let (major, minor) = (0.7, 0.3);
            for i in 0..n {
                let u = rng.gen::<f64>() * TAU;
                // Tube angle v has density ∝ (major + minor·cos v):
                // rejection-sample against the uniform envelope.
                let v = loop {
                    let cand = rng.gen::<f64>() * TAU;
                    let accept = (major + minor * cand.cos()) / (major + minor);
                    if rng.gen::<f64>() < accept {
                        break cand;
                    }
                };
                let ring = major + minor * v.cos();
                pts[[i, 0]] = ring * u.cos();
                pts[[i, 1]] = minor * v.sin();
                pts[[i, 2]] = ring * u.sin();
            }
        }
        ToyShape::Plane => {
            for i in 0..n {
                pts[[i, 0]] = rng.gen::<f64>() * 2.0 - 1.0;
                pts[[i, 2]] = rng.gen::<f64>() * 2.0 - 1.0;
            }
        }
    }
    pts
}

/// Whether a class index receives random poses under `regime`.
fn class_is_rotated(regime: RotationRegime, class: usize, num_classes: usize) -> bool {
    match regime {
        RotationRegime::Aligned => false,
        RotationRegime::Rotated => true,
        RotationRegime::Mixed => class < num_classes.div_ceil(2),
    }
}

/// Split tags for RNG stream derivation.
const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

fn gen_object(spec: &ToySpec, split: u64, class: usize, obj: usize) -> PointCloud {
    let shape = spec.shapes[class];
    let tags = [split, class as u64, obj as u64];

    let mut point_rng = rng_for(spec.seed, &[seeds::PURPOSE_POINTS, tags[0], tags[1], tags[2]]);
    let mut pts = sample_surface(shape, spec.points_per_cloud, &mut point_rng);

    if spec.jitter_std > 0.0 {
        let mut jitter_rng = rng_for(spec.seed, &[seeds::PURPOSE_JITTER, tags[0], tags[1], tags[2]]);
        let noise = Normal::new(0.0, spec.jitter_std).unwrap();
        for v in pts.iter_mut() {
            *v += noise.sample(&mut jitter_rng);
        }
    }

    let cloud = PointCloud::new(pts).expect("generated coordinates are finite");
    let posed = if class_is_rotated(spec.regime, class, spec.shapes.len()) {
        let mut rot_rng = rng_for(spec.seed, &[seeds::PURPOSE_ROTATION, tags[0], tags[1], tags[2]]);
        let theta = RotationParams {
            x: rot_rng.gen::<f64>() * TAU,
            y: rot_rng.gen::<f64>() * TAU,
            z: rot_rng.gen::<f64>() * TAU,
        };
        apply_rotation(&theta, &cloud)
    } else {
        cloud
    };
    normalize_unit_sphere(&posed)
}

/// Generates the train/test pair described by `spec`. Pure in the spec:
/// identical specs produce bit-identical datasets.
pub fn gen_toy(spec: &ToySpec) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let class_names: Vec<String> = spec.shapes.iter().map(|s| s.name().to_string()).collect();
    let split_items = |split: u64, per_class: usize| {
        let mut items = Vec::with_capacity(spec.shapes.len() * per_class);
        for class in 0..spec.shapes.len() {
            for obj in 0..per_class {
                items.push((gen_object(spec, split, class, obj), class));
            }
        }
        items
    };
    let train = LabeledDataset::new(split_items(SPLIT_TRAIN, spec.train_per_class), class_names.clone())?;
    let test = LabeledDataset::new(split_items(SPLIT_TEST, spec.test_per_class), class_names)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn base_spec() -> ToySpec {
        ToySpec {
            shapes: vec![ToyShape::Sphere, ToyShape::Cube, ToyShape::Cone],
            train_per_class: 4,
            test_per_class: 2,
            regime: RotationRegime::Aligned,
            jitter_std: 0.0,
            points_per_cloud: 64,
            seed: 77,
        }
    }

    #[test]
    fn sphere_samples_have_unit_norm() {
        let mut rng = rng_for(1, &[0]);
        let pts = sample_surface(ToyShape::Sphere, 500, &mut rng);
        for p in pts.rows() {
            assert_abs_diff_eq!(p.dot(&p).sqrt(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cube_samples_lie_on_faces() {
        let mut rng = rng_for(2, &[0]);
        let pts = sample_surface(ToyShape::Cube, 500, &mut rng);
        for p in pts.rows() {
            let max_abs = p.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert_abs_diff_eq!(max_abs, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn cone_samples_satisfy_the_cone_equation() {
        let mut rng = rng_for(3, &[0]);
        let pts = sample_surface(ToyShape::Cone, 500, &mut rng);
        for p in pts.rows() {
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            if p[1] > -0.5 + 1e-12 {
                // Lateral surface: radius shrinks linearly toward the apex.
                assert_abs_diff_eq!(radial, 0.5 - p[1], epsilon = 1e-12);
            } else {
                assert!(radial <= 1.0 + 1e-12, "base sample outside the rim");
            }
        }
    }

    #[test]
    fn cylinder_samples_lie_on_wall_or_caps() {
        let mut rng = rng_for(4, &[0]);
        let pts = sample_surface(ToyShape::Cylinder, 500, &mut rng);
        let (mut wall, mut caps) = (0, 0);
        for p in pts.rows() {
            let radial = (p[0] * p[0] + p[2] * p[2]).sqrt();
            if (p[1].abs() - 0.5).abs() < 1e-12 {
                caps += 1;
                assert!(radial <= 1.0 + 1e-12);
            } else {
                wall += 1;
                assert_abs_diff_eq!(radial, 1.0, epsilon = 1e-12);
                assert!(p[1].abs() <= 0.5 + 1e-12);
            }
        }
        assert!(wall > 0 && caps > 0, "both regions should be hit at n=500");
    }

    #[test]
    fn torus_samples_satisfy_the_torus_equation() {
        let mut rng = rng_for(5, &[0]);
        let pts = sample_surface(ToyShape::Torus, 500, &mut rng);
        for p in pts.rows() {
            let ring = (p[0] * p[0] + p[2] * p[2]).sqrt();
            let tube = ((ring - 0.7).powi(2) + p[1] * p[1]).sqrt();
            assert_abs_diff_eq!(tube, 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn torus_tube_angle_is_area_weighted() {
        // Surface area element ∝ (R + r·cos v), so E[cos v] = r/(2R) = 3/14.
        let mut rng = rng_for(6, &[0]);
        let pts = sample_surface(ToyShape::Torus, 100_000, &mut rng);
        let mean_cos: f64 = pts
            .rows()
            .into_iter()
            .map(|p| {
                let ring = (p[0] * p[0] + p[2] * p[2]).sqrt();
                (ring - 0.7) / 0.3
            })
            .sum::<f64>()
            / 100_000.0;
        assert!(
            (mean_cos - 3.0 / 14.0).abs() < 0.01,
            "E[cos v] = {mean_cos}, expected ≈ {}",
            3.0 / 14.0
        );
    }

    #[test]
    fn plane_samples_are_flat_and_bounded() {
        let mut rng = rng_for(7, &[0]);
        let pts = sample_surface(ToyShape::Plane, 500, &mut rng);
        for p in pts.rows() {
            assert_eq!(p[1], 0.0);
            assert!(p[0].abs() <= 1.0 && p[2].abs() <= 1.0);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ToySpec { regime: RotationRegime::Rotated, jitter_std: 0.02, ..base_spec() };
        let (tr1, te1) = gen_toy(&spec).unwrap();
        let (tr2, te2) = gen_toy(&spec).unwrap();
        for ((a, la), (b, lb)) in tr1.items().iter().zip(tr2.items()) {
            assert_eq!(la, lb);
            assert_eq!(a.points(), b.points());
        }
        for ((a, _), (b, _)) in te1.items().iter().zip(te2.items()) {
            assert_eq!(a.points(), b.points());
        }
    }

    #[test]
    fn train_and_test_objects_are_distinct() {
        let (train, test) = gen_toy(&base_spec()).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(test.len(), 6);
        let (a, _) = &train.items()[0];
        let (b, _) = &test.items()[0];
        assert_ne!(a.points(), b.points(), "train/test streams must differ");
    }

    #[test]
    fn labels_do_not_depend_on_pose() {
        let aligned = gen_toy(&base_spec()).unwrap().0;
        let rotated = gen_toy(&ToySpec { regime: RotationRegime::Rotated, ..base_spec() }).unwrap().0;
        let la: Vec<usize> = aligned.items().iter().map(|(_, l)| *l).collect();
        let lr: Vec<usize> = rotated.items().iter().map(|(_, l)| *l).collect();
        assert_eq!(la, lr);
        assert_eq!(aligned.class_names(), rotated.class_names());
    }

    #[test]
    fn global_rotation_of_aligned_set_keeps_labels() {
        let (train, _) = gen_toy(&base_spec()).unwrap();
        let theta = RotationParams { x: 0.3, y: 1.1, z: -0.4 };
        let rotated_items: Vec<_> = train
            .items()
            .iter()
            .map(|(c, l)| (apply_rotation(&theta, c), *l))
            .collect();
        let rotated = LabeledDataset::new(rotated_items, train.class_names().to_vec()).unwrap();
        for ((_, la), (_, lb)) in train.items().iter().zip(rotated.items()) {
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn mixed_regime_rotates_exactly_the_first_half_of_classes() {
        // 3 classes → ⌈3/2⌉ = 2 rotated, class 2 aligned.
        let aligned = gen_toy(&base_spec()).unwrap().0;
        let mixed = gen_toy(&ToySpec { regime: RotationRegime::Mixed, ..base_spec() }).unwrap().0;
        let rotated = gen_toy(&ToySpec { regime: RotationRegime::Rotated, ..base_spec() }).unwrap().0;
        for i in 0..aligned.len() {
            let label = aligned.items()[i].1;
            let m = mixed.items()[i].0.points();
            if label < 2 {
                assert_eq!(m, rotated.items()[i].0.points(), "class {label} should be posed");
            } else {
                assert_eq!(m, aligned.items()[i].0.points(), "class {label} should be aligned");
            }
        }
    }

    #[test]
    fn rotated_regime_gives_objects_distinct_recoverable_poses() {
        // With jitter, pose rotation, and normalization all commuting as
        // rotations, the rotated object equals its aligned twin times a
        // rotation; recover it by orthogonal Procrustes and check both the
        // fit quality and that two objects drew different poses.
        let spec = ToySpec { jitter_std: 0.01, ..base_spec() };
        let aligned = gen_toy(&spec).unwrap().0;
        let rotated = gen_toy(&ToySpec { regime: RotationRegime::Rotated, ..spec }).unwrap().0;
        let fit = |i: usize| -> nalgebra::Matrix3<f64> {
            let p = aligned.items()[i].0.points();
            let q = rotated.items()[i].0.points();
            let mut h = nalgebra::Matrix3::<f64>::zeros();
            for (pr, qr) in p.rows().into_iter().zip(q.rows()) {
                for a in 0..3 {
                    for b in 0..3 {
                        h[(a, b)] += pr[a] * qr[b];
                    }
                }
            }
            let svd = h.svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let d = (vt.transpose() * u.transpose()).determinant();
            let fix = nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, d.signum()));
            let r = vt.transpose() * fix * u.transpose();
            // Verify the fit actually explains the rotated cloud.
            let mut max_resid = 0.0f64;
            for (pr, qr) in p.rows().into_iter().zip(q.rows()) {
                for a in 0..3 {
                    let pred: f64 = (0..3).map(|b| r[(a, b)] * pr[b]).sum();
                    max_resid = max_resid.max((pred - qr[a]).abs());
                }
            }
            assert!(max_resid < 1e-9, "Procrustes residual {max_resid}");
            r
        };
        let r0 = fit(0);
        let r1 = fit(1);
        let diff = (r0 - r1).abs().max();
        assert!(diff > 0.01, "two objects drew near-identical poses (diff {diff})");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(gen_toy(&ToySpec { shapes: vec![], ..base_spec() }).is_err());
        assert!(gen_toy(&ToySpec { train_per_class: 0, ..base_spec() }).is_err());
        assert!(gen_toy(&ToySpec { jitter_std: -0.1, ..base_spec() }).is_err());
        assert!(gen_toy(&ToySpec { points_per_cloud: 0, ..base_spec() }).is_err());
        assert!(gen_toy(&ToySpec {
            shapes: vec![ToyShape::Cube, ToyShape::Cube],
            ..base_spec()
        })
        .is_err());
    }

    #[test]
    fn shape_names_round_trip_through_fromstr() {
        for s in [
            ToyShape::Sphere,
            ToyShape::Cube,
            ToyShape::Cone,
            ToyShape::Cylinder,
            ToyShape::Torus,
            ToyShape::Plane,
        ] {
            assert_eq!(s.name().parse::<ToyShape>().unwrap(), s);
        }
        assert!("pyramid".parse::<ToyShape>().is_err());
    }
}
