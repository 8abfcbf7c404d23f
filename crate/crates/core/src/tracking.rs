//! Invariant tracking errors.
//!
//! In the plane the tracking error is the group element `g_e = g_d^{-1} g`;
//! its translation block is the usual position error expressed in the
//! moving frame of the reference. On the sphere the error is carried by the
//! orthodrome (shortest great-circle arc) between the actual and desired
//! rear-axle positions: its central angle `sigma` measures the distance and
//! the angle `delta` measures how the orthodrome is tilted against the
//! desired rear-axle great circle. Both constructions are unchanged when
//! vehicle and reference are moved by the same group element, which is what
//! makes feedback laws built from them invariant.

use crate::car::SphericalConfig;
use crate::error::{Error, Result};
use crate::lie::{wrap_angle, PlanarPose, Rotation3};
use nalgebra::Vector2;

/// Below this central angle the misalignment `delta` is geometrically
/// undefined and reported as zero.
pub const SIGMA_EPSILON: f64 = 1e-10;

/// Central angles beyond `pi - ANTIPODAL_MARGIN` leave no well-defined
/// error axis.
const ANTIPODAL_MARGIN: f64 = 1e-6;

/// Left-invariant SE(2) tracking error `g_e = g_d^{-1} g`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se2Error {
    /// Relative heading `theta - theta_d`, wrapped into `(-pi, pi]`.
    pub heading: f64,
    /// Position error expressed in the reference frame:
    /// `R_{theta_d}^T (y - y_d)`.
    pub position: Vector2<f64>,
}

/// Planar tracking error of `pose` with respect to `reference`.
pub fn se2_error(pose: &PlanarPose, reference: &PlanarPose) -> Se2Error {
    let relative = reference.inverse().compose(pose);
    Se2Error {
        heading: wrap_angle(relative.heading),
        position: relative.position,
    }
}

/// Orthodrome parametrization of the spherical tracking error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorAngles {
    /// Central angle of the orthodrome between `beta` and `beta_d`,
    /// in `[0, pi)`.
    pub sigma: f64,
    /// Misalignment of the orthodrome against the desired rear-axle great
    /// circle, in `(-pi, pi]`; zero when the vehicle sits behind the
    /// reference on its own great circle.
    pub delta: f64,
}

/// Invariant error angles between two spherical configurations.
///
/// `sigma` comes from `<beta, beta_d> = cos(sigma)`. For `sigma > 0` the
/// unit axis `n = (beta x beta_d) / sin(sigma)` of the error great circle
/// is decomposed in the reference tangent frame,
/// `n = cos(delta) nu_d + sin(delta) tau_d`, fixing `delta` up to the sign
/// convention validated by the closed-loop derivative checks.
pub fn error_angles(config: &SphericalConfig, reference: &SphericalConfig) -> Result<ErrorAngles> {
    let beta = config.beta();
    let beta_d = reference.beta();
    let cross = beta.cross(&beta_d);
    let cos_sigma = beta.dot(&beta_d).clamp(-1.0, 1.0);
    let sin_sigma = cross.norm();
    let sigma = sin_sigma.atan2(cos_sigma);
    if sigma >= std::f64::consts::PI - ANTIPODAL_MARGIN {
        return Err(Error::Antipodal);
    }
    if sigma <= SIGMA_EPSILON {
        return Ok(ErrorAngles { sigma, delta: 0.0 });
    }
    let delta = cross.dot(&reference.tau()).atan2(cross.dot(&reference.nu()));
    Ok(ErrorAngles { sigma, delta })
}

/// Deviation of the error angles under a common left action `h`, a direct
/// numerical check of their invariance. Returns `(|d sigma|, |d delta|)`.
pub fn error_angles_invariance_check(
    config: &SphericalConfig,
    reference: &SphericalConfig,
    action: &Rotation3,
) -> Result<(f64, f64)> {
    let base = error_angles(config, reference)?;
    let moved = error_angles(&(*action * *config), &(*action * *reference))?;
    Ok((
        (moved.sigma - base.sigma).abs(),
        (wrap_angle(moved.delta - base.delta)).abs(),
    ))
}
