//! Per-object rotation parameterization θ = (θx, θy, θz) and its analytic
//! derivatives.
//!
//! The rotation operator is `R = Rz(θz)·Ry(θy)·Rx(θx)` with right-handed
//! single-axis matrices acting on column vectors. The composition order is a
//! documented convention (the y factor is the vertical axis, which carries
//! the dominant pose variation and the largest learning rate). Gradient flow
//! through rotations is provided by the computation tape; this module owns
//! the matrix algebra.

use crate::pcdata::PointCloud;
use ndarray::{array, Array2};

/// Learnable Euler angles in radians. Unbounded: angle wrap happens
/// naturally inside the trigonometry.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationParams {
    /// Rotation about the x axis.
    pub x: f64,
    /// Rotation about the y (vertical) axis.
    pub y: f64,
    /// Rotation about the z axis.
    pub z: f64,
}

impl RotationParams {
    /// All-zero angles (identity rotation).
    pub const ZERO: RotationParams = RotationParams { x: 0.0, y: 0.0, z: 0.0 };

    /// Packs the angles as `[x, y, z]`.
    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Single-axis rotation about x.
pub fn rot_x(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Single-axis rotation about y.
pub fn rot_y(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

/// Single-axis rotation about z.
pub fn rot_z(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// The composite rotation `R = Rz·Ry·Rx` in closed form.
///
/// At θ = 0 this returns the exact identity matrix.
pub fn rotation_matrix(theta: &RotationParams) -> Array2<f64> {
    let (sa, ca) = theta.x.sin_cos();
    let (sb, cb) = theta.y.sin_cos();
    let (sc, cc) = theta.z.sin_cos();
    array![
        [cc * cb, cc * sb * sa - sc * ca, cc * sb * ca + sc * sa],
        [sc * cb, sc * sb * sa + cc * ca, sc * sb * ca - cc * sa],
        [-sb, cb * sa, cb * ca]
    ]
}

fn d_rot_x(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]]
}

fn d_rot_y(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]]
}

fn d_rot_z(a: f64) -> Array2<f64> {
    let (s, c) = a.sin_cos();
    array![[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
}

/// Analytic `[∂R/∂θx, ∂R/∂θy, ∂R/∂θz]` via the product rule on the three
/// single-axis factors.
pub fn d_rotation_d_theta(theta: &RotationParams) -> [Array2<f64>; 3] {
    let rx = rot_x(theta.x);
    let ry = rot_y(theta.y);
    let rz = rot_z(theta.z);
    let zy = rz.dot(&ry);
    [
        zy.dot(&d_rot_x(theta.x)),
        rz.dot(&d_rot_y(theta.y).dot(&rx)),
        d_rot_z(theta.z).dot(&ry.dot(&rx)),
    ]
}

/// Rotates every point of a cloud by `R(θ)` (points as columns: `p ↦ R·p`,
/// i.e. `X ↦ X·Rᵀ` on row-major clouds). Norms are preserved.
pub fn apply_rotation(theta: &RotationParams, cloud: &PointCloud) -> PointCloud {
    let r = rotation_matrix(theta);
    let rotated = cloud.points().dot(&r.t());
    PointCloud::new(rotated).expect("rotation of a valid cloud stays valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pcdata::PointCloud;
    use crate::seeds::rng_for;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn det3(m: &Array2<f64>) -> f64 {
        m[[0, 0]] * (m[[1, 1]] * m[[2, 2]] - m[[1, 2]] * m[[2, 1]])
            - m[[0, 1]] * (m[[1, 0]] * m[[2, 2]] - m[[1, 2]] * m[[2, 0]])
            + m[[0, 2]] * (m[[1, 0]] * m[[2, 1]] - m[[1, 1]] * m[[2, 0]])
    }

    fn random_theta(rng: &mut impl Rng) -> RotationParams {
        RotationParams {
            x: rng.gen::<f64>() * 20.0 - 10.0,
            y: rng.gen::<f64>() * 20.0 - 10.0,
            z: rng.gen::<f64>() * 20.0 - 10.0,
        }
    }

    #[test]
    fn zero_angles_give_exact_identity() {
        let r = rotation_matrix(&RotationParams::ZERO);
        assert_eq!(r, ndarray::Array2::eye(3));
    }

    #[test]
    fn quarter_turn_about_y_sends_x_to_minus_z() {
        let r = rotation_matrix(&RotationParams { x: 0.0, y: std::f64::consts::FRAC_PI_2, z: 0.0 });
        let p = r.dot(&ndarray::arr1(&[1.0, 0.0, 0.0]));
        assert_abs_diff_eq!(p[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_product_of_single_axis_factors() {
        let mut rng = rng_for(21, &[0]);
        for _ in 0..200 {
            let t = random_theta(&mut rng);
            let oracle = rot_z(t.z).dot(&rot_y(t.y)).dot(&rot_x(t.x));
            let r = rotation_matrix(&t);
            for (a, b) in r.iter().zip(oracle.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn rotation_is_orthogonal_with_unit_determinant() {
        let mut rng = rng_for(22, &[0]);
        for _ in 0..300 {
            let t = random_theta(&mut rng);
            let r = rotation_matrix(&t);
            let gram = r.t().dot(&r);
            let eye: Array2<f64> = Array2::eye(3);
            let max_dev = gram.iter().zip(eye.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(max_dev <= 1e-12, "RᵀR deviates from I by {max_dev}");
            assert!((det3(&r) - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn angle_derivative_at_zero_is_the_skew_generator() {
        let d = d_rotation_d_theta(&RotationParams::ZERO);
        let gen_x = array![[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]];
        assert_eq!(d[0], gen_x);
    }

    #[test]
    fn angle_derivatives_match_central_differences() {
        let mut rng = rng_for(23, &[0]);
        let h = 1e-5;
        for _ in 0..50 {
            let t = random_theta(&mut rng);
            let d = d_rotation_d_theta(&t);
            for axis in 0..3 {
                let mut plus = t;
                let mut minus = t;
                match axis {
                    0 => {
                        plus.x += h;
                        minus.x -= h;
                    }
                    1 => {
                        plus.y += h;
                        minus.y -= h;
                    }
                    _ => {
                        plus.z += h;
                        minus.z -= h;
                    }
                }
                let fd = (rotation_matrix(&plus) - rotation_matrix(&minus)) / (2.0 * h);
                for (a, b) in d[axis].iter().zip(fd.iter()) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn angle_derivatives_live_in_the_rotation_tangent_space() {
        // RᵀdR must be skew-symmetric, so its trace vanishes.
        let mut rng = rng_for(24, &[0]);
        for _ in 0..100 {
            let t = random_theta(&mut rng);
            let r = rotation_matrix(&t);
            for d in d_rotation_d_theta(&t) {
                let m = r.t().dot(&d);
                let trace = m[[0, 0]] + m[[1, 1]] + m[[2, 2]];
                assert!(trace.abs() <= 1e-10, "trace(RᵀdR) = {trace}");
            }
        }
    }

    #[test]
    fn apply_rotation_preserves_norms_and_distances() {
        let mut rng = rng_for(25, &[0]);
        let rows: Vec<[f64; 3]> = (0..24)
            .map(|_| [rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5])
            .collect();
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let t = random_theta(&mut rng);
        let rotated = apply_rotation(&t, &cloud);
        for (p, q) in cloud.points().rows().into_iter().zip(rotated.points().rows()) {
            assert_abs_diff_eq!(p.dot(&p).sqrt(), q.dot(&q).sqrt(), epsilon = 1e-12);
        }
        // Pairwise distances survive too.
        for i in 0..4 {
            for j in (i + 1)..4 {
                let a = &cloud.points().row(i) - &cloud.points().row(j);
                let b = &rotated.points().row(i) - &rotated.points().row(j);
                assert_abs_diff_eq!(a.dot(&a).sqrt(), b.dot(&b).sqrt(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn zero_rotation_leaves_cloud_bitwise_unchanged() {
        let cloud = PointCloud::from_rows(&[[0.3, -0.7, 0.2], [1.0, 2.0, -3.0]]).unwrap();
        let out = apply_rotation(&RotationParams::ZERO, &cloud);
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn composition_matches_matrix_product() {
        let mut rng = rng_for(26, &[0]);
        let rows: Vec<[f64; 3]> = (0..8).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let cloud = PointCloud::from_rows(&rows).unwrap();
        let t1 = random_theta(&mut rng);
        let t2 = random_theta(&mut rng);
        let seq = apply_rotation(&t1, &apply_rotation(&t2, &cloud));
        let prod = rotation_matrix(&t1).dot(&rotation_matrix(&t2));
        let direct = cloud.points().dot(&prod.t());
        for (a, b) in seq.points().iter().zip(direct.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
