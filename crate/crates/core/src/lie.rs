//! Rotation-matrix primitives for SO(3)/so(3) and planar poses on SE(2).
//!
//! Rotations are stored as plain 3x3 matrices (no quaternions), so group
//! membership is an explicit numerical invariant: every constructor checks
//! orthonormality and orientation against [`ROTATION_TOLERANCE`]. Elements
//! of the Lie algebra so(3) are carried as axis vectors with the usual hat
//! map providing the skew-symmetric matrix view.
//!
//! All types are immutable values and all operations are pure functions.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Global validity tolerance for rotation matrices: elementwise bound on
/// `R^T R - I` and on `|det R - 1|`. Re-asserted after integration steps.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Below this angle the exponential/logarithm coefficients switch to their
/// second-order series; the closed-form `sin`/`cos` ratios are 0/0 there.
const SMALL_ANGLE: f64 = 1e-7;

/// Skew-symmetry tolerance for the vee map.
const SKEW_TOLERANCE: f64 = 1e-9;

/// Trace margin that keeps the logarithm away from the branch point at pi.
const LOG_TRACE_MARGIN: f64 = 1e-9;

/// Hat map: the skew-symmetric matrix `X(n)` with `X(n) w = n x w`.
#[rustfmt::skip]
pub fn hat(n: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -n.z,  n.y,
        n.z,  0.0, -n.x,
       -n.y,  n.x,  0.0,
    )
}

/// Vee map, inverse of [`hat`]. Fails if the input is not skew-symmetric
/// within `1e-9` (elementwise on `X + X^T`).
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let defect = (m + m.transpose()).abs().max();
    if defect > SKEW_TOLERANCE {
        return Err(Error::NotSkewSymmetric { defect });
    }
    Ok(Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]))
}

/// Lie bracket `[A, B] = AB - BA` on 3x3 matrices.
pub fn lie_bracket(a: &Mat3, b: &Mat3) -> Mat3 {
    a * b - b * a
}

/// Element of so(3), stored as the axis vector of its infinitesimal
/// generator. The hat map provides the matrix view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist3 {
    axis: Vec3,
}

impl Twist3 {
    pub fn new(n1: f64, n2: f64, n3: f64) -> Self {
        Twist3 {
            axis: Vec3::new(n1, n2, n3),
        }
    }

    pub fn from_vector(axis: Vec3) -> Self {
        Twist3 { axis }
    }

    pub fn zero() -> Self {
        Twist3 { axis: Vec3::zeros() }
    }

    pub fn vector(&self) -> Vec3 {
        self.axis
    }

    /// Matrix view through the hat map.
    pub fn matrix(&self) -> Mat3 {
        hat(&self.axis)
    }

    /// Recover the axis coordinates from a skew-symmetric matrix.
    pub fn from_matrix(m: &Mat3) -> Result<Self> {
        Ok(Twist3 { axis: vee(m)? })
    }

    pub fn norm(&self) -> f64 {
        self.axis.norm()
    }
}

impl std::ops::Mul<f64> for Twist3 {
    type Output = Twist3;
    fn mul(self, s: f64) -> Twist3 {
        Twist3 { axis: self.axis * s }
    }
}

impl std::ops::Add for Twist3 {
    type Output = Twist3;
    fn add(self, other: Twist3) -> Twist3 {
        Twist3 {
            axis: self.axis + other.axis,
        }
    }
}

/// A 3x3 orthogonal matrix with unit determinant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation3 {
    m: Mat3,
}

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3 { m: Mat3::identity() }
    }

    /// Validating constructor; rejects matrices whose orthonormality defect
    /// or determinant error exceeds [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Mat3) -> Result<Self> {
        let defect = rotation_defect(&m);
        if defect > ROTATION_TOLERANCE {
            return Err(Error::InvalidRotation { defect });
        }
        Ok(Rotation3 { m })
    }

    /// Wrap a matrix that is known to be a rotation (e.g. a product of
    /// validated rotations). Debug builds still assert validity.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        debug_assert!(
            rotation_defect(&m) <= ROTATION_TOLERANCE,
            "matrix fails the rotation check"
        );
        Rotation3 { m }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn into_matrix(self) -> Mat3 {
        self.m
    }

    pub fn column(&self, i: usize) -> Vec3 {
        self.m.column(i).into_owned()
    }

    /// Inverse, computed as the transpose.
    pub fn transpose(&self) -> Rotation3 {
        Rotation3 { m: self.m.transpose() }
    }

    /// Elementwise orthonormality defect combined with the determinant error.
    pub fn defect(&self) -> f64 {
        rotation_defect(&self.m)
    }

    pub fn is_valid(&self) -> bool {
        self.defect() <= ROTATION_TOLERANCE
    }

    /// Nearest rotation matrix (polar projection through the SVD). Used to
    /// strip accumulated round-off from long integrations.
    pub fn renormalized(&self) -> Rotation3 {
        let svd = self.m.svd(true, true);
        let u = svd.u.expect("svd of a finite 3x3 matrix");
        let v_t = svd.v_t.expect("svd of a finite 3x3 matrix");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Not reachable from near-rotation inputs, but keep the
            // projection well-defined for any full-rank matrix.
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation3 { m: r }
    }

    /// Axis-angle logarithm. The returned angle lies in `[0, pi)`; the axis
    /// convention at zero angle is `e3`.
    pub fn log(&self) -> Result<(Vec3, f64)> {
        log_so3(self)
    }

    /// Rotation vector (axis times angle).
    pub fn rotation_vector(&self) -> Result<Vec3> {
        let (axis, angle) = self.log()?;
        Ok(axis * angle)
    }
}

impl std::ops::Mul for Rotation3 {
    type Output = Rotation3;
    fn mul(self, other: Rotation3) -> Rotation3 {
        Rotation3 { m: self.m * other.m }
    }
}

impl std::ops::Mul<Vec3> for Rotation3 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        self.m * v
    }
}

fn rotation_defect(m: &Mat3) -> f64 {
    let orth = (m.transpose() * m - Mat3::identity()).abs().max();
    let det = (m.determinant() - 1.0).abs();
    orth.max(det)
}

/// Rotation by `angle` about the unit axis `n`, through the closed-form
/// rotation (Rodrigues) formula. A non-unit axis is rejected unless the
/// angle is exactly zero.
pub fn exp_so3(n: &Vec3, angle: f64) -> Result<Rotation3> {
    let norm = n.norm();
    if angle == 0.0 {
        return Ok(Rotation3::identity());
    }
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NonUnitAxis { norm });
    }
    Ok(exp_so3_vector(&(n * angle)))
}

/// Exponential of the rotation vector `w` (axis times angle). Always a
/// valid rotation; switches to the series coefficients below the small
/// angle threshold.
pub fn exp_so3_vector(w: &Vec3) -> Rotation3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2 to second order.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(w);
    let m = Mat3::identity() + k * a + k * k * b;
    Rotation3::from_matrix_unchecked(m)
}

/// Axis-angle logarithm on SO(3). Defined for angles bounded away from pi
/// (`trace > -1 + 1e-9`); the observer and error maps only ever use it in a
/// neighbourhood of the identity.
pub fn log_so3(r: &Rotation3) -> Result<(Vec3, f64)> {
    let m = r.matrix();
    let trace = m.trace();
    if trace <= -1.0 + LOG_TRACE_MARGIN {
        return Err(Error::LogBranchPoint { trace });
    }
    // w has norm sin(theta); the trace gives cos(theta).
    let w = Vec3::new(
        (m[(2, 1)] - m[(1, 2)]) / 2.0,
        (m[(0, 2)] - m[(2, 0)]) / 2.0,
        (m[(1, 0)] - m[(0, 1)]) / 2.0,
    );
    let s = w.norm();
    let c = (trace - 1.0) / 2.0;
    let angle = s.atan2(c);
    if s == 0.0 {
        // Identity (or numerically indistinguishable from it).
        return Ok((Vec3::new(0.0, 0.0, 1.0), angle));
    }
    Ok((w / s, angle))
}

/// Planar pose: rear-axle position and heading, an element of SE(2).
///
/// The matrix view is the homogeneous 3x3 form with the rotation block in
/// the upper left; composition and inversion agree with the matrix product.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarPose {
    pub position: Vector2<f64>,
    pub heading: f64,
}

impl PlanarPose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        PlanarPose {
            position: Vector2::new(x, y),
            heading,
        }
    }

    pub fn identity() -> Self {
        PlanarPose::new(0.0, 0.0, 0.0)
    }

    #[rustfmt::skip]
    pub fn matrix(&self) -> Mat3 {
        let (s, c) = self.heading.sin_cos();
        Mat3::new(
            c,  -s,  self.position.x,
            s,   c,  self.position.y,
            0.0, 0.0, 1.0,
        )
    }

    /// Recover the pose fields from a homogeneous SE(2) matrix.
    pub fn from_matrix(m: &Mat3) -> PlanarPose {
        PlanarPose {
            position: Vector2::new(m[(0, 2)], m[(1, 2)]),
            heading: m[(1, 0)].atan2(m[(0, 0)]),
        }
    }

    /// Group law: `self` followed by `other` in the frame of `self`.
    pub fn compose(&self, other: &PlanarPose) -> PlanarPose {
        let (s, c) = self.heading.sin_cos();
        let rotated = Vector2::new(
            c * other.position.x - s * other.position.y,
            s * other.position.x + c * other.position.y,
        );
        PlanarPose {
            position: self.position + rotated,
            heading: self.heading + other.heading,
        }
    }

    pub fn inverse(&self) -> PlanarPose {
        let (s, c) = self.heading.sin_cos();
        let p = Vector2::new(
            -(c * self.position.x + s * self.position.y),
            -(-s * self.position.x + c * self.position.y),
        );
        PlanarPose {
            position: p,
            heading: -self.heading,
        }
    }
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = a % two_pi;
    if w <= -std::f64::consts::PI {
        w += two_pi;
    } else if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}
