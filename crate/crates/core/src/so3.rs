//! Rotation geometry on SO(3) in the axis-angle parameterization.
//!
//! A rotation by angle `θ` about the unit axis `v` is stored as the 3-vector
//! `y = θ v`. The exponential map (Rodrigues' formula) takes `y` to a rotation
//! matrix and the logarithm map inverts it on the open ball `‖y‖ < π`. At
//! `‖y‖ = π` the axis sign is ambiguous: `log_map` returns a vector of norm `π`
//! whose sign is chosen from the (numerically tiny) antisymmetric part, and is
//! otherwise arbitrary.
//!
//! Small-angle branches use 4th-order Taylor expansions below [`SMALL_ANGLE`];
//! near `π` the axis is recovered from the symmetric part of the matrix.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the trigonometric coefficients switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Orthonormality tolerance accepted by [`RotationMatrix::new`].
pub const ORTHO_TOL: f64 = 1e-9;

/// Axis-angle vector `y = θ v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisAngle(pub Vec3);

impl AxisAngle {
    pub const IDENTITY: AxisAngle = AxisAngle(Vector3::new(0.0, 0.0, 0.0));

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vec3::new(x, y, z))
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        AxisAngle(Vec3::new(a[0], a[1], a[2]))
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    /// Rotation angle `θ = ‖y‖`.
    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }
}

impl fmt::Display for AxisAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.6}, {:.6}, {:.6})", self.0.x, self.0.y, self.0.z)
    }
}

/// A proper orthonormal 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Mat3::identity())
    }

    /// Validates `‖mᵀm − I‖_∞ ≤ 1e-9` and `|det m − 1| ≤ 1e-9`.
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(invalid("rotation matrix has non-finite entries"));
        }
        let err = orthonormality_error(&m);
        if err > ORTHO_TOL {
            return Err(invalid(format!(
                "matrix is not orthonormal (‖RᵀR − I‖∞ = {err:.3e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(invalid(format!("determinant {det} is not +1")));
        }
        Ok(RotationMatrix(m))
    }

    /// Projects an approximately orthonormal matrix onto SO(3) via SVD.
    pub fn orthonormalize(m: Mat3) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(invalid("rotation matrix has non-finite entries"));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(invalid("SVD failed during re-orthonormalization")),
        };
        let mut d = Mat3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(RotationMatrix(u * d * v_t))
    }

    pub(crate) fn from_raw(m: Mat3) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Row-major flattening `vec(R)`.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }
}

fn orthonormality_error(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).amax()
}

/// Skew-symmetric matrix `[w]×` with `[w]× u = w × u`.
#[rustfmt::skip]
pub fn hat(w: &Vec3) -> Mat3 {
    Mat3::new(
         0.0, -w.z,  w.y,
         w.z,  0.0, -w.x,
        -w.y,  w.x,  0.0,
    )
}

/// Inverse of [`hat`] applied to the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// `sin θ / θ` and `(1 − cos θ) / θ²`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (1.0 - t2 / 6.0 + t4 / 120.0, 0.5 - t2 / 24.0 + t4 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rodrigues' formula without input validation.
pub(crate) fn rodrigues(y: &Vec3) -> Mat3 {
    let theta = y.norm();
    let (a, b) = rodrigues_coefficients(theta);
    let k = hat(y);
    Mat3::identity() + k * a + k * k * b
}

/// Exponential map `y ↦ exp([y]×)`.
pub fn exp_map(y: &AxisAngle) -> Result<RotationMatrix> {
    if !y.is_finite() {
        return Err(invalid(format!("axis-angle vector {y} is not finite")));
    }
    Ok(RotationMatrix(rodrigues(&y.0)))
}

/// Logarithm map, returning `y` with `‖y‖ ∈ [0, π]`.
pub fn log_map(r: &RotationMatrix) -> AxisAngle {
    AxisAngle(log_raw(&r.0))
}

pub(crate) fn log_raw(m: &Mat3) -> Vec3 {
    // axial = sin(θ) v
    let axial = vee(m);
    let s = axial.norm();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);

    if theta < SMALL_ANGLE {
        // θ / sin θ = 1 + θ²/6 + 7θ⁴/360
        let t2 = theta * theta;
        return axial * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }
    if theta > PI - SMALL_ANGLE {
        return near_pi_log(m, &axial, theta);
    }
    axial * (theta / theta.sin())
}

/// Axis from the symmetric part `(R + Rᵀ)/2 = cos θ I + (1 − cos θ) v vᵀ`.
fn near_pi_log(m: &Mat3, axial: &Vec3, theta: f64) -> Vec3 {
    let sym = (m + m.transpose()) * 0.5;
    let cos_t = theta.cos();
    let one_minus = 1.0 - cos_t;
    let diag = sym.diagonal();
    let i = diag.imax();
    let vi = ((diag[i] - cos_t) / one_minus).max(0.0).sqrt();
    let mut v = Vec3::zeros();
    for j in 0..3 {
        v[j] = if j == i {
            vi
        } else {
            sym[(i, j)] / (one_minus * vi)
        };
    }
    let v = v.normalize();
    let v = if v.dot(axial) < 0.0 { -v } else { v };
    v * theta
}

/// Geodesic distance `arccos((tr(R1ᵀR2) − 1)/2)` in radians, in `[0, π]`.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    let t = (r1.0.transpose() * r2.0).trace();
    ((t - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Right Jacobian `J_r(y)` of the exponential map:
/// `exp(y + ε) ≈ exp(y) · exp(J_r(y) ε)`.
pub fn exp_jacobian(y: &AxisAngle) -> Mat3 {
    let theta = y.angle();
    let k = hat(&y.0);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Mat3::identity() - k * b + k * k * c
}

/// Maps `y` to the principal branch: `log_map(exp_map(y))`.
pub fn canonicalize(y: &AxisAngle) -> AxisAngle {
    AxisAngle(log_raw(&rodrigues(&y.0)))
}

/// Haar-uniform rotation from a uniformly sampled unit quaternion
/// (Shoemake's subgroup algorithm).
pub fn sample_uniform_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (s2, c2) = (2.0 * PI * u2).sin_cos();
    let (s3, c3) = (2.0 * PI * u3).sin_cos();
    let (w, x, y, z) = (b * c3, a * s2, a * c2, b * s3);
    RotationMatrix(quaternion_to_matrix(w, x, y, z))
}

#[rustfmt::skip]
fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Mat3 {
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z),       2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),       1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),       2.0 * (y * z + w * x),       1.0 - 2.0 * (x * x + y * y),
    )
}

/// Euler angles azimuth, elevation and camera tilt (radians).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerPose {
    pub az: f64,
    pub el: f64,
    pub ct: f64,
}

impl EulerPose {
    pub fn new(az: f64, el: f64, ct: f64) -> Self {
        EulerPose { az, el, ct }
    }

    /// Wraps every angle into `(−π, π]`.
    pub fn normalized(&self) -> Self {
        EulerPose {
            az: wrap_angle(self.az),
            el: wrap_angle(self.el),
            ct: wrap_angle(self.ct),
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Intrinsic Euler axis order. Every elemental rotation is counter-clockwise
/// (right-handed) about its axis with sign +1, so `(az, 0, 0)` is
/// `exp_map((0, 0, az))` in both conventions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EulerConvention {
    /// `Rz(az) · Rx(el) · Rz(ct)`
    #[default]
    Zxz,
    /// `Rz(az) · Ry(el) · Rz(ct)`
    Zyz,
}

impl FromStr for EulerConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "ZXZ" => Ok(EulerConvention::Zxz),
            "ZYZ" => Ok(EulerConvention::Zyz),
            other => Err(invalid(format!("unknown Euler convention '{other}'"))),
        }
    }
}

impl fmt::Display for EulerConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EulerConvention::Zxz => f.write_str("ZXZ"),
            EulerConvention::Zyz => f.write_str("ZYZ"),
        }
    }
}

pub fn euler_to_rotation(e: &EulerPose, convention: EulerConvention) -> Result<RotationMatrix> {
    if !(e.az.is_finite() && e.el.is_finite() && e.ct.is_finite()) {
        return Err(invalid("Euler angles must be finite"));
    }
    let z = Vec3::z();
    let middle = match convention {
        EulerConvention::Zxz => Vec3::x(),
        EulerConvention::Zyz => Vec3::y(),
    };
    let m = rodrigues(&(z * e.az)) * rodrigues(&(middle * e.el)) * rodrigues(&(z * e.ct));
    Ok(RotationMatrix(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_mat_close(a: &Mat3, b: &Mat3, tol: f64) {
        let d = (a - b).amax();
        assert!(d <= tol, "matrices differ by {d:e}\n{a}\n{b}");
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = exp_map(&AxisAngle::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Mat3::identity());
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = exp_map(&AxisAngle::new(0.0, 0.0, PI / 2.0)).unwrap();
        #[rustfmt::skip]
        let expected = Mat3::new(
            0.0, -1.0, 0.0,
            1.0,  0.0, 0.0,
            0.0,  0.0, 1.0,
        );
        assert_mat_close(r.matrix(), &expected, 1e-15);
    }

    #[test]
    fn exp_rejects_non_finite() {
        assert!(matches!(
            exp_map(&AxisAngle::new(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
        assert!(exp_map(&AxisAngle::new(0.0, f64::INFINITY, 0.0)).is_err());
    }

    #[test]
    fn log_of_identity_and_quarter_turn() {
        assert_eq!(log_map(&RotationMatrix::identity()), AxisAngle::IDENTITY);
        #[rustfmt::skip]
        let m = Mat3::new(
            0.0, -1.0, 0.0,
            1.0,  0.0, 0.0,
            0.0,  0.0, 1.0,
        );
        let y = log_map(&RotationMatrix::new(m).unwrap());
        assert!((y.0 - Vec3::new(0.0, 0.0, PI / 2.0)).amax() < 1e-15);
    }

    #[test]
    fn rotation_constructor_rejects_bad_matrices() {
        let skewed = Mat3::new(1.0, 1e-6, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RotationMatrix::new(skewed).is_err());
        let reflection = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RotationMatrix::new(reflection).is_err());
        let fixed = RotationMatrix::orthonormalize(skewed).unwrap();
        assert!(RotationMatrix::new(*fixed.matrix()).is_ok());
    }

    #[test]
    fn log_near_identity_uses_series() {
        let y = AxisAngle::new(1e-7, -2e-7, 3e-8);
        let back = log_map(&exp_map(&y).unwrap());
        assert!((back.0 - y.0).amax() < 1e-20);
    }

    #[test]
    fn log_at_exactly_pi() {
        for axis in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 2.0, -2.0) / 3.0] {
            let r = exp_map(&AxisAngle(axis * PI)).unwrap();
            let y = log_map(&r);
            assert!((y.angle() - PI).abs() < 1e-12);
            // either sign is a valid logarithm at θ = π
            let d = (y.0 - axis * PI).amax().min((y.0 + axis * PI).amax());
            assert!(d < 1e-7, "{y} vs {axis}");
            assert_mat_close(exp_map(&y).unwrap().matrix(), r.matrix(), 1e-12);
        }
    }

    #[test]
    fn canonicalize_examples() {
        let c = canonicalize(&AxisAngle::new(0.0, 0.0, 0.5));
        assert!((c.0 - Vec3::new(0.0, 0.0, 0.5)).amax() < 1e-15);
        let c = canonicalize(&AxisAngle::new(0.0, 0.0, 1.5 * PI));
        assert!((c.0 - Vec3::new(0.0, 0.0, -PI / 2.0)).amax() < 1e-12);
        let c = canonicalize(&AxisAngle::new(0.0, 0.0, 2.0 * PI));
        assert!(c.0.amax() < 1e-12);
    }

    #[test]
    fn jacobian_at_zero_is_identity() {
        assert_eq!(exp_jacobian(&AxisAngle::IDENTITY), Mat3::identity());
    }

    #[test]
    fn geodesic_distance_same_axis() {
        for theta in [0.1, 1.0, 2.5, 3.1] {
            let r = exp_map(&AxisAngle::new(0.0, 0.0, theta)).unwrap();
            let d = geodesic_distance(&RotationMatrix::identity(), &r);
            assert!((d - theta).abs() < 1e-12);
        }
        // arccos is ill-conditioned at 1, so exact agreement shows up as ~1e-8
        let r = exp_map(&AxisAngle::new(0.3, 0.2, 0.1)).unwrap();
        assert!(geodesic_distance(&r, &r) < 1e-7);
    }

    #[test]
    fn euler_identity_and_single_axis() {
        for conv in [EulerConvention::Zxz, EulerConvention::Zyz] {
            let r = euler_to_rotation(&EulerPose::new(0.0, 0.0, 0.0), conv).unwrap();
            assert_eq!(*r.matrix(), Mat3::identity());
            let r = euler_to_rotation(&EulerPose::new(PI / 2.0, 0.0, 0.0), conv).unwrap();
            let z = exp_map(&AxisAngle::new(0.0, 0.0, PI / 2.0)).unwrap();
            assert_mat_close(r.matrix(), z.matrix(), 1e-15);
        }
    }

    #[test]
    fn euler_convention_parsing() {
        assert_eq!("zxz".parse::<EulerConvention>().unwrap(), EulerConvention::Zxz);
        assert_eq!("ZYZ".parse::<EulerConvention>().unwrap(), EulerConvention::Zyz);
        assert!("XYZ".parse::<EulerConvention>().is_err());
    }

    #[test]
    fn euler_normalization() {
        let e = EulerPose::new(3.0 * PI, -PI, 0.5).normalized();
        assert!((e.az - PI).abs() < 1e-12);
        assert!((e.el - PI).abs() < 1e-12);
        assert_eq!(e.ct, 0.5);
    }
}
