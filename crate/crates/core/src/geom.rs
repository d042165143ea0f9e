//! Rigid-body algebra on SE(3) and the gravity-aligned frame construction.
//!
//! Rotations are kept as plain 3x3 matrices so that the gravity alignment
//! can be written column by column. Tangent vectors use the
//! `(rotation, translation)` split with the left Jacobian coupling the two.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this rotation angle exp/log switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;
/// Log is rejected when the rotation angle is this close to pi.
const PI_MARGIN: f64 = 1e-6;
/// `(theta - sin theta) / theta^3` and the `V^-1` coefficient cancel badly
/// well above `SMALL_ANGLE`, so they use series up to this angle.
const SERIES_ANGLE: f64 = 1e-2;
/// Minimum norm of the horizontal viewing direction for gravity alignment.
const MIN_HORIZONTAL_NORM: f64 = 1e-6;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[inline]
fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Checked constructor: the matrix must be orthonormal with determinant +1
    /// within `1e-9`.
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let err = (m.transpose() * m - Mat3::identity()).abs().max();
        let det = m.determinant();
        if err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("not a rotation matrix (orthonormality error {err:e}, det {det})")));
        }
        Ok(Rotation(m))
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Self {
        Rotation(Mat3::from_columns(&[c0, c1, c2]))
    }

    /// Rotation of `yaw` radians about the world z axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn from_axis_angle(axis_angle: &Vec3) -> Self {
        so3_exp(axis_angle)
    }

    /// Quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = nalgebra::UnitQuaternion::from_matrix_eps(&self.0, 1e-15, 100, nalgebra::UnitQuaternion::identity());
        let mut c = [q.w, q.i, q.j, q.k];
        if c[0] < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        c
    }

    pub fn from_quaternion(wxyz: [f64; 4]) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::InvalidArgument("zero-norm quaternion".into()));
        }
        let uq = nalgebra::UnitQuaternion::from_quaternion(q);
        Ok(Rotation(*uq.to_rotation_matrix().matrix()))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.0.column(i).into_owned()
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let s = 0.5 * vee(&(self.0 - self.0.transpose())).norm();
        let c = 0.5 * (self.0.trace() - 1.0);
        s.atan2(c)
    }

    /// Re-orthonormalize with Gram-Schmidt on the first two columns.
    pub fn renormalized(&self) -> Self {
        let c0 = self.column(0).normalize();
        let c1 = self.column(1);
        let c1 = (c1 - c0 * c0.dot(&c1)).normalize();
        let c2 = c0.cross(&c1);
        Rotation::from_columns(c0, c1, c2)
    }
}

fn so3_exp(w: &Vec3) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let h = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * h * h / theta2)
    };
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Axis-angle of `r`. Fails within `1e-6` of a half turn.
fn so3_log(r: &Rotation) -> Result<Vec3> {
    let m = r.matrix();
    let axis_sin = vee(&(m - m.transpose())) * 0.5;
    let s = axis_sin.norm();
    let c = 0.5 * (m.trace() - 1.0);
    let theta = s.atan2(c);
    if theta > std::f64::consts::PI - PI_MARGIN {
        return Err(Error::NearPiRotation);
    }
    if theta < SMALL_ANGLE {
        Ok(axis_sin * (1.0 + theta * theta / 6.0))
    } else {
        Ok(axis_sin * (theta / s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Pose { rotation, translation }
    }

    pub fn identity() -> Self {
        Pose::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose { rotation: self.rotation.compose(&other.rotation), translation: self.rotation.apply(&other.translation) + self.translation }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose { rotation: r_inv, translation: -r_inv.apply(&self.translation) }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.apply(v)
    }

    pub fn renormalized(&self) -> Pose {
        Pose::new(self.rotation.renormalized(), self.translation)
    }
}

/// Element of se(3): axis-angle rotation part and translation part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub rot_part: Vec3,
    pub trans_part: Vec3,
}

impl Tangent {
    pub fn new(rot_part: Vec3, trans_part: Vec3) -> Self {
        Tangent { rot_part, trans_part }
    }

    pub fn zero() -> Self {
        Tangent::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn scaled(&self, s: f64) -> Tangent {
        Tangent::new(self.rot_part * s, self.trans_part * s)
    }

    pub fn norm(&self) -> f64 {
        (self.rot_part.norm_squared() + self.trans_part.norm_squared()).sqrt()
    }
}

/// Left Jacobian coefficients `(A, B, C)` of SO(3) at angle `theta`.
fn jacobian_coeffs(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let h = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * h * h / t2)
    };
    let c = if theta < SERIES_ANGLE {
        1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0 - t2 * t2 * t2 / 362_880.0
    } else {
        (theta - theta.sin()) / (t2 * theta)
    };
    (a, b, c)
}

pub fn se3_exp(xi: &Tangent) -> Pose {
    let w = &xi.rot_part;
    let theta = w.norm();
    let k = skew(w);
    let (a, b, c) = jacobian_coeffs(theta);
    let rotation = Rotation(Mat3::identity() + k * a + k * k * b);
    let v = Mat3::identity() + k * b + k * k * c;
    Pose::new(rotation, v * xi.trans_part)
}

pub fn se3_log(pose: &Pose) -> Result<Tangent> {
    let w = so3_log(&pose.rotation)?;
    let theta = w.norm();
    let k = skew(&w);
    // V^-1 = I - K/2 + d K^2
    let t2 = theta * theta;
    let d = if theta < SERIES_ANGLE {
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30_240.0 + t2 * t2 * t2 / 1_209_600.0
    } else {
        let (a, b, _) = jacobian_coeffs(theta);
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let v_inv = Mat3::identity() - k * 0.5 + k * k * d;
    Ok(Tangent::new(w, v_inv * pose.translation))
}

/// `log(a^-1 * b)`: the tangent that carries `a` onto `b`.
pub fn pose_boxminus(a: &Pose, b: &Pose) -> Result<Tangent> {
    se3_log(&a.inverse().compose(b))
}

/// Unit gravity direction in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityDir(Vec3);

impl GravityDir {
    /// Normalizes `g`; rejects zero or non-finite input.
    pub fn new(g: Vec3) -> Result<Self> {
        let n = g.norm();
        if !(n.is_finite() && n > 1e-12) {
            return Err(Error::InvalidArgument(format!("gravity direction {g:?} has no length")));
        }
        Ok(GravityDir(g / n))
    }

    /// Gravity along world -z.
    pub fn down() -> Self {
        GravityDir(Vec3::new(0.0, 0.0, -1.0))
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }
}

impl Default for GravityDir {
    fn default() -> Self {
        GravityDir::down()
    }
}

/// Rotation whose first column is gravity and whose third column is the
/// camera viewing axis with its gravity component removed.
pub fn gravity_align(r_wc: &Rotation, g: &GravityDir) -> Result<Rotation> {
    let g = g.vector();
    let r_z = r_wc.column(2);
    let d_z = r_z - g * g.dot(&r_z);
    let norm = d_z.norm();
    if norm <= MIN_HORIZONTAL_NORM {
        return Err(Error::DegenerateGravityAlignment { norm });
    }
    let c1 = d_z.cross(g).normalize();
    let c2 = d_z / norm;
    Ok(Rotation::from_columns(*g, c1, c2))
}

/// Wrap an angle to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    fn random_tangent(rng: &mut ChaCha8Rng, max_angle: f64) -> Tangent {
        let angle = rng.random_range(0.0..max_angle);
        Tangent::new(
            random_unit(rng) * angle,
            Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        )
    }

    fn max_pose_diff(a: &Pose, b: &Pose) -> f64 {
        let dr = (a.rotation.matrix() - b.rotation.matrix()).abs().max();
        let dt = (a.translation - b.translation).abs().max();
        dr.max(dt)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = se3_exp(&Tangent::zero());
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let p = se3_exp(&Tangent::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::zeros()));
        let y = p.rotation.apply(&Vec3::x());
        assert_abs_diff_eq!(y, Vec3::y(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.translation, Vec3::zeros(), epsilon = 0.0);
    }

    #[test]
    fn log_of_identity_and_pure_translation() {
        let t = se3_log(&Pose::identity()).unwrap();
        assert_eq!(t, Tangent::zero());
        let t = se3_log(&Pose::from_translation(Vec3::new(0.0, 0.0, 1.0))).unwrap();
        assert_abs_diff_eq!(t.rot_part, Vec3::zeros(), epsilon = 0.0);
        assert_abs_diff_eq!(t.trans_part, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn log_exp_round_trip_at_angle_1_3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut xi = random_tangent(&mut rng, 1.0);
            xi.rot_part = xi.rot_part.normalize() * 1.3;
            let back = se3_log(&se3_exp(&xi)).unwrap();
            assert_abs_diff_eq!(back.rot_part, xi.rot_part, epsilon = 1e-9);
            assert_abs_diff_eq!(back.trans_part, xi.trans_part, epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_log_round_trip_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let xi = random_tangent(&mut rng, PI - 1e-3);
            let pose = se3_exp(&xi);
            let again = se3_exp(&se3_log(&pose).unwrap());
            assert!(max_pose_diff(&pose, &again) < 1e-9);
        }
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        for &theta in &[1e-12, 1e-9, 0.99e-8, 1.01e-8, 1e-7, 1e-5] {
            let xi = Tangent::new(Vec3::new(theta, -0.5 * theta, 0.25 * theta), Vec3::new(1.0, 2.0, -1.0));
            let back = se3_log(&se3_exp(&xi)).unwrap();
            assert_abs_diff_eq!(back.rot_part, xi.rot_part, epsilon = 1e-15);
            assert_abs_diff_eq!(back.trans_part, xi.trans_part, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let p = Pose::new(Rotation::from_axis_angle(&Vec3::new(0.0, PI, 0.0)), Vec3::zeros());
        assert!(matches!(se3_log(&p), Err(Error::NearPiRotation)));
        let p = Pose::new(Rotation::from_axis_angle(&Vec3::new(0.0, PI - 1e-4, 0.0)), Vec3::zeros());
        assert!(se3_log(&p).is_ok());
    }

    #[test]
    fn group_axioms_on_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = se3_exp(&random_tangent(&mut rng, 3.0));
            let b = se3_exp(&random_tangent(&mut rng, 3.0));
            let c = se3_exp(&random_tangent(&mut rng, 3.0));
            assert!(max_pose_diff(&a.compose(&Pose::identity()), &a) < 1e-12);
            assert!(max_pose_diff(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c))) < 1e-9);
            assert!(max_pose_diff(&a.compose(&b).inverse(), &b.inverse().compose(&a.inverse())) < 1e-9);
            assert!(max_pose_diff(&a.compose(&a.inverse()), &Pose::identity()) < 1e-12);
        }
    }

    #[test]
    fn boxminus_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = se3_exp(&random_tangent(&mut rng, 2.0));
        let d = pose_boxminus(&a, &a).unwrap();
        assert!(d.norm() < 1e-12);

        let d = pose_boxminus(&Pose::identity(), &Pose::from_translation(Vec3::x())).unwrap();
        assert_abs_diff_eq!(d.trans_part, Vec3::x(), epsilon = 1e-15);

        for _ in 0..200 {
            let a = se3_exp(&random_tangent(&mut rng, 3.0));
            let b = se3_exp(&random_tangent(&mut rng, 3.0));
            if let Ok(d) = pose_boxminus(&a, &b) {
                assert!(max_pose_diff(&a.compose(&se3_exp(&d)), &b) < 1e-9);
            }
        }
    }

    #[test]
    fn gravity_align_hand_example() {
        // r_z = x, gravity = -z: d_z = x, d_z x g = (0,1,0)
        let r_wc = Rotation::from_columns(Vec3::y(), -Vec3::z(), Vec3::x());
        let g = GravityDir::down();
        let r = gravity_align(&r_wc, &g).unwrap();
        assert_abs_diff_eq!(r.column(0), Vec3::new(0.0, 0.0, -1.0), epsilon = 0.0);
        assert_abs_diff_eq!(r.column(1), Vec3::new(0.0, 1.0, 0.0), epsilon = 0.0);
        assert_abs_diff_eq!(r.column(2), Vec3::new(1.0, 0.0, 0.0), epsilon = 0.0);
        assert_abs_diff_eq!(r.matrix().determinant(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn gravity_align_is_a_rotation_with_gravity_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let r_wc = Rotation::from_axis_angle(&(random_unit(&mut rng) * rng.random_range(0.0..PI)));
            let g = GravityDir::new(random_unit(&mut rng)).unwrap();
            let Ok(r) = gravity_align(&r_wc, &g) else { continue };
            assert_abs_diff_eq!(r.column(0), *g.vector(), epsilon = 1e-9);
            assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        }
    }

    #[test]
    fn gravity_align_degenerate_when_looking_along_gravity() {
        let g = GravityDir::down();
        let down = Rotation::from_columns(Vec3::x(), Vec3::y(), Vec3::z()).compose(&Rotation::from_axis_angle(&Vec3::new(PI, 0.0, 0.0)));
        assert_abs_diff_eq!(down.column(2), -Vec3::z(), epsilon = 1e-12);
        assert!(matches!(gravity_align(&down, &g), Err(Error::DegenerateGravityAlignment { .. })));
        assert!(matches!(gravity_align(&Rotation::identity(), &g), Err(Error::DegenerateGravityAlignment { .. })));
    }

    #[test]
    fn quaternion_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let r = Rotation::from_axis_angle(&(random_unit(&mut rng) * rng.random_range(0.0..PI)));
            let back = Rotation::from_quaternion(r.to_quaternion()).unwrap();
            assert!((r.matrix() - back.matrix()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn renormalize_long_compose_chain() {
        let step = Rotation::from_axis_angle(&Vec3::new(0.013, -0.021, 0.007));
        let mut r = Rotation::identity();
        for _ in 0..5000 {
            r = r.compose(&step);
        }
        let r = r.renormalized();
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
    }

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(PI), -PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.3), -0.3, epsilon = 1e-15);
        for i in -100..100 {
            let w = wrap_angle(i as f64 * 0.37);
            assert!((-PI..PI).contains(&w));
        }
    }
}
