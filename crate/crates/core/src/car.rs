//! Kinematic car models: the familiar planar car and its left-invariant
//! counterpart on the sphere.
//!
//! On a sphere of radius `rho` the configuration is a rotation matrix
//! `g = (tau, nu, beta)` whose columns are the tangent, normal and outward
//! binormal of the rear-axle curve; the rear-axle position is recovered as
//! `y = rho * beta`. Driving forward rotates the frame about the body `e2`
//! axis at rate `v / rho`, steering rotates it about the body `e3` axis at
//! rate `v tan(phi) / ell`, where `ell` is the effective wheelbase produced
//! by the curvature of the surface.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::lie::{exp_so3, Mat3, Rotation3, Twist3, Vec3};

/// Relative tolerance for "point lies on the sphere" checks.
const SPHERE_TOLERANCE: f64 = 1e-9;

/// Physical dimensions of the car together with the sphere it drives on.
///
/// The derived quantities are the central angle `lambda = l / (rho + r)`
/// subtended by the wheelbase (wheel contact points sit at radius
/// `rho + r` from the sphere center... the wheel axles do; `r` is the wheel
/// radius) and the effective wheelbase `ell = rho sin(lambda)` that
/// replaces `l` in the steering kinematics.
#[derive(Clone, Copy, Debug)]
pub struct CarGeometry {
    wheelbase: f64,
    wheel_radius: f64,
    sphere_radius: f64,
    central_angle: f64,
    effective_wheelbase: f64,
}

impl CarGeometry {
    pub fn new(wheelbase: f64, wheel_radius: f64, sphere_radius: f64) -> Result<Self> {
        if wheelbase.is_nan() || wheelbase <= 0.0 {
            return Err(Error::ConfigValidation {
                field: "geometry.l".into(),
                reason: format!("wheelbase must be positive (got {wheelbase})"),
            });
        }
        if wheel_radius.is_nan() || wheel_radius < 0.0 {
            return Err(Error::ConfigValidation {
                field: "geometry.r".into(),
                reason: format!("wheel radius must be non-negative (got {wheel_radius})"),
            });
        }
        if sphere_radius.is_nan() || sphere_radius <= 0.0 {
            return Err(Error::ConfigValidation {
                field: "geometry.rho".into(),
                reason: format!("sphere radius must be positive (got {sphere_radius})"),
            });
        }
        let central_angle = wheelbase / (sphere_radius + wheel_radius);
        if central_angle >= std::f64::consts::PI {
            return Err(Error::ConfigValidation {
                field: "geometry".into(),
                reason: format!(
                    "central angle l/(rho+r) = {central_angle} must be below pi"
                ),
            });
        }
        Ok(CarGeometry {
            wheelbase,
            wheel_radius,
            sphere_radius,
            central_angle,
            effective_wheelbase: sphere_radius * central_angle.sin(),
        })
    }

    pub fn wheelbase(&self) -> f64 {
        self.wheelbase
    }

    pub fn wheel_radius(&self) -> f64 {
        self.wheel_radius
    }

    pub fn sphere_radius(&self) -> f64 {
        self.sphere_radius
    }

    /// Central angle `lambda = l / (rho + r)`.
    pub fn central_angle(&self) -> f64 {
        self.central_angle
    }

    /// Effective wheelbase `ell = rho sin(lambda)`; tends to `l` as the
    /// sphere flattens out.
    pub fn effective_wheelbase(&self) -> f64 {
        self.effective_wheelbase
    }
}

/// Driving speed and steering angle.
#[derive(Clone, Copy, Debug)]
pub struct ControlInput {
    /// Driving speed `v`, or the normalized speed `u = v / v_d` in
    /// arc-length parametrizations.
    pub speed: f64,
    /// Steering angle, `|phi| < pi/2`.
    pub steering: f64,
}

impl ControlInput {
    pub fn new(speed: f64, steering: f64) -> Result<Self> {
        check_steering(steering)?;
        Ok(ControlInput { speed, steering })
    }
}

fn check_steering(phi: f64) -> Result<()> {
    if phi.is_nan() || phi.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(Error::SteeringLimit { phi });
    }
    Ok(())
}

/// Planar rear-axle state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarCarState {
    pub position: Vector2<f64>,
    pub heading: f64,
}

impl PlanarCarState {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        PlanarCarState {
            position: Vector2::new(x, y),
            heading,
        }
    }
}

/// Time (or arc-length) derivative of a planar state.
#[derive(Clone, Copy, Debug)]
pub struct PlanarRate {
    pub velocity: Vector2<f64>,
    pub heading_rate: f64,
}

/// Rolling-without-slipping planar model: `y' = v tau`,
/// `theta' = (v / l) tan(phi)`.
pub fn planar_rate(state: &PlanarCarState, speed: f64, steering: f64, wheelbase: f64) -> Result<PlanarRate> {
    check_steering(steering)?;
    let (s, c) = state.heading.sin_cos();
    Ok(PlanarRate {
        velocity: Vector2::new(c, s) * speed,
        heading_rate: speed / wheelbase * steering.tan(),
    })
}

/// Planar model in arc length: the heading rate is the curvature
/// `kappa = tan(phi) / l`.
pub fn planar_arclength_rate(state: &PlanarCarState, steering: f64, wheelbase: f64) -> Result<PlanarRate> {
    planar_rate(state, 1.0, steering, wheelbase)
}

/// Configuration of the spherical car: a rotation whose columns are the
/// tangent, normal and outward binormal frame at the rear axle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalConfig {
    g: Rotation3,
}

impl SphericalConfig {
    pub fn identity() -> Self {
        SphericalConfig {
            g: Rotation3::identity(),
        }
    }

    pub fn new(g: Rotation3) -> Self {
        SphericalConfig { g }
    }

    pub fn rotation(&self) -> &Rotation3 {
        &self.g
    }

    /// Tangent direction of motion.
    pub fn tau(&self) -> Vec3 {
        self.g.column(0)
    }

    /// In-surface normal (left of the direction of motion).
    pub fn nu(&self) -> Vec3 {
        self.g.column(1)
    }

    /// Outward binormal; the rear-axle position is `rho * beta`.
    pub fn beta(&self) -> Vec3 {
        self.g.column(2)
    }

    pub fn position(&self, sphere_radius: f64) -> Vec3 {
        self.beta() * sphere_radius
    }

    /// Assemble a configuration from an explicit orthonormal frame.
    pub fn from_frames(tau: Vec3, nu: Vec3, beta: Vec3) -> Result<Self> {
        let m = Mat3::from_columns(&[tau, nu, beta]);
        Ok(SphericalConfig {
            g: Rotation3::from_matrix(m)?,
        })
    }

    /// Configuration at rear-axle position `y` with heading `theta`.
    ///
    /// The heading-zero frame is the rotation carrying the north pole to
    /// `y` along the connecting orthodrome; a second rotation about `y/rho`
    /// applies the heading. The construction degenerates at the south pole,
    /// where no preferred meridian exists.
    pub fn from_position(y: &Vec3, heading: f64, sphere_radius: f64) -> Result<Self> {
        let norm = y.norm();
        if (norm - sphere_radius).abs() > SPHERE_TOLERANCE * sphere_radius.max(1.0) {
            return Err(Error::OffSphere {
                norm,
                radius: sphere_radius,
            });
        }
        let unit = y / norm;
        let e3 = Vec3::new(0.0, 0.0, 1.0);
        let axis = e3.cross(&unit);
        let s = axis.norm();
        let r_y = if s < 1e-12 {
            if unit.z > 0.0 {
                Rotation3::identity()
            } else {
                return Err(Error::PoleSingularity);
            }
        } else {
            exp_so3(&(axis / s), unit.z.clamp(-1.0, 1.0).acos())?
        };
        let r_heading = exp_so3(&unit, heading)?;
        Ok(SphericalConfig {
            g: r_heading * r_y,
        })
    }
}

impl std::ops::Mul<SphericalConfig> for Rotation3 {
    type Output = SphericalConfig;
    fn mul(self, g: SphericalConfig) -> SphericalConfig {
        SphericalConfig { g: self * g.g }
    }
}

/// Body velocity of the spherical car: rotation about `e2` at `v / rho`
/// plus rotation about `e3` at the heading rate `(v / ell) tan(phi)`.
pub fn spherical_body_velocity(speed: f64, steering: f64, geometry: &CarGeometry) -> Result<Twist3> {
    check_steering(steering)?;
    Ok(Twist3::new(
        0.0,
        speed / geometry.sphere_radius(),
        speed / geometry.effective_wheelbase() * steering.tan(),
    ))
}

/// Left-invariant model on SO(3): `g' = g * hat(body velocity)`.
pub fn spherical_rate(config: &SphericalConfig, input: &ControlInput, geometry: &CarGeometry) -> Result<Mat3> {
    let body = spherical_body_velocity(input.speed, input.steering, geometry)?;
    Ok(config.rotation().matrix() * body.matrix())
}

/// Arc-length model: identical to [`spherical_rate`] with the dimensionless
/// speed `u = v / v_d` in place of `v`.
pub fn arclength_rate(config: &SphericalConfig, normalized_speed: f64, steering: f64, geometry: &CarGeometry) -> Result<Mat3> {
    let input = ControlInput {
        speed: normalized_speed,
        steering,
    };
    spherical_rate(config, &input, geometry)
}

/// Moving frame of an on-sphere curve from its position and velocity:
/// `tau = ydot/v`, `nu = (y/rho) x tau`, `beta = y/rho`. Returns the frame
/// and the speed `v = |ydot|`.
pub fn frames_from_curve(y: &Vec3, ydot: &Vec3, sphere_radius: f64) -> Result<(SphericalConfig, f64)> {
    let norm = y.norm();
    if (norm - sphere_radius).abs() > SPHERE_TOLERANCE * sphere_radius.max(1.0) {
        return Err(Error::OffSphere {
            norm,
            radius: sphere_radius,
        });
    }
    let speed = ydot.norm();
    if speed <= 0.0 {
        return Err(Error::ZeroSpeed);
    }
    let inner = y.dot(ydot) / (norm * speed);
    if inner.abs() > 1e-8 {
        return Err(Error::NotTangent { inner });
    }
    let beta = y / norm;
    let tau = ydot / speed;
    let nu = beta.cross(&tau);
    Ok((SphericalConfig::from_frames(tau, nu, beta)?, speed))
}

/// Geodesic curvature commanded by the steering angle:
/// `kappa_g = tan(phi) / ell`.
pub fn geodesic_curvature(steering: f64, geometry: &CarGeometry) -> Result<f64> {
    check_steering(steering)?;
    Ok(steering.tan() / geometry.effective_wheelbase())
}

/// Steering angle realizing a geodesic curvature, the inverse of
/// [`geodesic_curvature`] on `(-pi/2, pi/2)`.
pub fn steering_for_curvature(kappa_g: f64, geometry: &CarGeometry) -> f64 {
    (geometry.effective_wheelbase() * kappa_g).atan()
}

/// Curvature data recovered from one interior sample of an arc-length
/// parametrized curve.
#[derive(Clone, Copy, Debug)]
pub struct CurvatureSample {
    /// Total space-curve curvature `|y''|`.
    pub kappa: f64,
    /// Geodesic component `<y'', nu>`.
    pub kappa_g: f64,
    /// Defect of the split `kappa^2 = kappa_g^2 + 1/rho^2`.
    pub residual: f64,
}

/// Finite-difference check of the curvature split along uniformly spaced,
/// unit-speed samples of an on-sphere curve. The residual is reported, not
/// judged: a coarse step shows up as a large residual at the call site.
pub fn curvature_split_check(samples: &[Vec3], step: f64, sphere_radius: f64) -> Result<Vec<CurvatureSample>> {
    if samples.len() < 3 {
        return Err(Error::ConfigValidation {
            field: "samples".into(),
            reason: "need at least three samples for central differences".into(),
        });
    }
    let mut out = Vec::with_capacity(samples.len() - 2);
    for i in 1..samples.len() - 1 {
        let y = samples[i];
        let first = (samples[i + 1] - samples[i - 1]) / (2.0 * step);
        let second = (samples[i + 1] - y * 2.0 + samples[i - 1]) / (step * step);
        let (frame, _) = frames_from_curve(&y, &first, sphere_radius)?;
        let kappa = second.norm();
        let kappa_g = second.dot(&frame.nu());
        let residual =
            (kappa * kappa - kappa_g * kappa_g - 1.0 / (sphere_radius * sphere_radius)).abs();
        out.push(CurvatureSample {
            kappa,
            kappa_g,
            residual,
        });
    }
    Ok(out)
}

/// State and inputs recovered from the flat output at one curve point.
#[derive(Clone, Copy, Debug)]
pub struct FlatMotion {
    pub config: SphericalConfig,
    pub speed: f64,
    pub kappa_g: f64,
    pub steering: f64,
}

/// Flatness parametrization: recover configuration, speed and steering from
/// the rear-axle curve and its first two arc-length derivatives.
pub fn flat_parametrization(y: &Vec3, y_prime: &Vec3, y_second: &Vec3, geometry: &CarGeometry) -> Result<FlatMotion> {
    let (config, speed) = frames_from_curve(y, y_prime, geometry.sphere_radius())?;
    let kappa_g = y_second.dot(&config.nu());
    Ok(FlatMotion {
        config,
        speed,
        kappa_g,
        steering: steering_for_curvature(kappa_g, geometry),
    })
}

/// Convert time derivatives of a curve into arc-length derivatives:
/// returns `(v, y', y'')` with `v = |ydot|`.
pub fn arclength_derivatives(ydot: &Vec3, yddot: &Vec3) -> Result<(f64, Vec3, Vec3)> {
    let v = ydot.norm();
    if v <= 0.0 {
        return Err(Error::ZeroSpeed);
    }
    let tau = ydot / v;
    let vdot = tau.dot(yddot);
    let y_second = (yddot - tau * vdot) / (v * v);
    Ok((v, tau, y_second))
}

/// Azimuthal equidistant chart about the north pole, scaled so that
/// geodesics through the pole have unit speed: short spherical trajectories
/// map onto their planar counterparts up to first order in `1/rho`.
pub fn azimuthal_chart(y: &Vec3, sphere_radius: f64) -> Vector2<f64> {
    let horizontal = (y.x * y.x + y.y * y.y).sqrt();
    let central = horizontal.atan2(y.z);
    if horizontal == 0.0 {
        return Vector2::zeros();
    }
    let scale = sphere_radius * central / horizontal;
    Vector2::new(y.x * scale, y.y * scale)
}

/// Inverse of [`azimuthal_chart`].
pub fn chart_to_sphere(chart: &Vector2<f64>, sphere_radius: f64) -> Vec3 {
    let radius = chart.norm();
    if radius == 0.0 {
        return Vec3::new(0.0, 0.0, sphere_radius);
    }
    let central = radius / sphere_radius;
    let direction = chart / radius;
    Vec3::new(
        sphere_radius * central.sin() * direction.x,
        sphere_radius * central.sin() * direction.y,
        sphere_radius * central.cos(),
    )
}

/// Body rate for the arc-length model, shared by the simulators.
pub fn body_rate(normalized_speed: f64, kappa_g: f64, sphere_radius: f64) -> Twist3 {
    Twist3::new(
        0.0,
        normalized_speed / sphere_radius,
        normalized_speed * kappa_g,
    )
}

/// Skewness defect of `g^T g'` for a claimed tangent matrix at `g`.
pub fn tangent_defect(config: &SphericalConfig, rate: &Mat3) -> f64 {
    let body = config.rotation().matrix().transpose() * rate;
    (body + body.transpose()).abs().max()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::hat;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn geometry(l: f64, r: f64, rho: f64) -> CarGeometry {
        CarGeometry::new(l, r, rho).unwrap()
    }

    #[test]
    #[allow(clippy::excessive_precision)] // frozen high-precision oracle values
    fn effective_wheelbase_matches_closed_form() {
        let g = geometry(1.0, 0.5, 10.0);
        // Frozen from a high-precision evaluation of lambda = l/(rho+r),
        // ell = rho sin(lambda).
        assert!((g.central_angle() - 0.095238095238095238).abs() < 1e-15);
        assert!((g.effective_wheelbase() - 0.95094187584754821).abs() < 1e-13);
    }

    #[test]
    fn effective_wheelbase_planar_limit() {
        let g = geometry(1.0, 0.0, 1e6);
        assert!((g.effective_wheelbase() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn effective_wheelbase_quarter_sphere() {
        let rho = 2.0 / PI;
        let g = geometry(1.0, 0.0, rho);
        assert!((g.central_angle() - FRAC_PI_2).abs() < 1e-15);
        assert!((g.effective_wheelbase() - rho).abs() < 1e-15);
    }

    #[test]
    fn geometry_rejects_bad_dimensions() {
        assert!(CarGeometry::new(0.0, 0.0, 1.0).is_err());
        assert!(CarGeometry::new(1.0, -0.1, 1.0).is_err());
        assert!(CarGeometry::new(1.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn planar_rate_standard_cases() {
        let state = PlanarCarState::new(0.0, 0.0, 0.0);
        let rate = planar_rate(&state, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(rate.velocity, Vector2::new(1.0, 0.0));
        assert_eq!(rate.heading_rate, 0.0);

        let state = PlanarCarState::new(0.0, 0.0, FRAC_PI_2);
        let rate = planar_rate(&state, 2.0, FRAC_PI_4, 1.0).unwrap();
        assert!(rate.velocity.x.abs() < 1e-15);
        assert!((rate.velocity.y - 2.0).abs() < 1e-12);
        assert!((rate.heading_rate - 2.0).abs() < 1e-12);

        let rate = planar_rate(&state, 0.0, 0.3, 1.0).unwrap();
        assert_eq!(rate.velocity, Vector2::zeros());
        assert_eq!(rate.heading_rate, 0.0);
    }

    #[test]
    fn planar_rate_rejects_steering_limit() {
        let state = PlanarCarState::new(0.0, 0.0, 0.0);
        assert!(planar_rate(&state, 1.0, FRAC_PI_2, 1.0).is_err());
    }

    #[test]
    fn arclength_rate_is_rate_over_speed() {
        let state = PlanarCarState::new(0.3, -0.2, 0.7);
        let v = 1.7;
        let timed = planar_rate(&state, v, 0.4, 2.0).unwrap();
        let arc = planar_arclength_rate(&state, 0.4, 2.0).unwrap();
        assert!((timed.velocity / v - arc.velocity).abs().max() < 1e-15);
        assert!((timed.heading_rate / v - arc.heading_rate).abs() < 1e-15);
    }

    #[test]
    fn arclength_curvature_values() {
        let state = PlanarCarState::new(0.0, 0.0, 0.0);
        assert_eq!(planar_arclength_rate(&state, 0.0, 1.0).unwrap().heading_rate, 0.0);
        let k = planar_arclength_rate(&state, FRAC_PI_4, 1.0).unwrap().heading_rate;
        assert!((k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn config_from_north_pole_is_identity() {
        let g = SphericalConfig::from_position(&Vec3::new(0.0, 0.0, 2.0), 0.0, 2.0).unwrap();
        assert!((g.rotation().matrix() - Mat3::identity()).abs().max() < 1e-15);

        let g = SphericalConfig::from_position(&Vec3::new(0.0, 0.0, 2.0), FRAC_PI_2, 2.0).unwrap();
        let expected = exp_so3(&Vec3::new(0.0, 0.0, 1.0), FRAC_PI_2).unwrap();
        assert!((g.rotation().matrix() - expected.matrix()).abs().max() < 1e-15);
    }

    #[test]
    fn config_from_equator_point() {
        let rho = 1.0;
        let g = SphericalConfig::from_position(&Vec3::new(rho, 0.0, 0.0), 0.0, rho).unwrap();
        assert!((g.beta() - Vec3::new(1.0, 0.0, 0.0)).abs().max() < 1e-12);
        // Heading-zero frame comes from rotating about e3 x e1 = e2 by pi/2.
        let expected = exp_so3(&Vec3::new(0.0, 1.0, 0.0), FRAC_PI_2).unwrap();
        assert!((g.rotation().matrix() - expected.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn config_recovers_position_for_random_points() {
        let mut state = 3u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let rho = 3.0;
        for _ in 0..50 {
            let mut y = Vec3::new(next(), next(), next());
            if y.norm() < 1e-2 {
                continue;
            }
            y = y.normalize() * rho;
            if y.z < -rho * 0.99 {
                continue;
            }
            let g = SphericalConfig::from_position(&y, next() * PI, rho).unwrap();
            assert!((g.position(rho) - y).abs().max() < 1e-12 * rho);
            assert!(g.rotation().is_valid());
        }
    }

    #[test]
    fn config_rejects_south_pole_and_off_sphere() {
        assert!(matches!(
            SphericalConfig::from_position(&Vec3::new(0.0, 0.0, -1.0), 0.0, 1.0),
            Err(Error::PoleSingularity)
        ));
        assert!(matches!(
            SphericalConfig::from_position(&Vec3::new(0.5, 0.0, 0.0), 0.0, 1.0),
            Err(Error::OffSphere { .. })
        ));
    }

    #[test]
    fn body_velocity_standard_cases() {
        let geom = geometry(1.0, 0.0, 1.0);
        let w = spherical_body_velocity(0.0, 0.2, &geom).unwrap();
        assert_eq!(w.vector(), Vec3::zeros());

        let w = spherical_body_velocity(1.0, 0.0, &geom).unwrap();
        assert_eq!(w.vector(), Vec3::new(0.0, 1.0, 0.0));

        let geom = geometry(1.0, 0.5, 10.0);
        let w = spherical_body_velocity(1.0, FRAC_PI_4, &geom).unwrap();
        // tan(pi/4) / ell, frozen from a high-precision evaluation.
        assert!((w.vector().y - 0.1).abs() < 1e-15);
        assert!((w.vector().z - 1.0515889828794506).abs() < 1e-12);
    }

    #[test]
    fn spherical_rate_at_identity_is_the_generator() {
        let geom = geometry(1.0, 0.0, 1.0);
        let g = SphericalConfig::identity();
        let input = ControlInput::new(1.0, 0.0).unwrap();
        let rate = spherical_rate(&g, &input, &geom).unwrap();
        assert!((rate - hat(&Vec3::new(0.0, 1.0, 0.0))).abs().max() < 1e-15);
    }

    #[test]
    fn spherical_rate_is_left_invariant_and_tangent() {
        let geom = geometry(1.0, 0.2, 2.0);
        let mut state = 11u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..100 {
            let g = SphericalConfig::new(
                crate::lie::exp_so3_vector(&Vec3::new(next(), next(), next())),
            );
            let input = ControlInput::new(next() * 2.0, next()).unwrap();
            let rate = spherical_rate(&g, &input, &geom).unwrap();
            assert!(tangent_defect(&g, &rate) < 1e-12);

            let h = crate::lie::exp_so3_vector(&Vec3::new(next(), next(), next()));
            let translated = spherical_rate(&(h * g), &input, &geom).unwrap();
            assert!((h.matrix() * rate - translated).abs().max() < 1e-12);
        }
    }

    #[test]
    fn arclength_rate_scaling() {
        let geom = geometry(1.0, 0.0, 1.0);
        let g = SphericalConfig::identity();
        let r1 = arclength_rate(&g, 1.0, 0.3, &geom).unwrap();
        let v1 = spherical_rate(&g, &ControlInput::new(1.0, 0.3).unwrap(), &geom).unwrap();
        assert_eq!(r1, v1);
        assert_eq!(arclength_rate(&g, 0.0, 0.3, &geom).unwrap(), Mat3::zeros());
        let r2 = arclength_rate(&g, 2.0, 0.3, &geom).unwrap();
        assert!((r2 - r1 * 2.0).abs().max() < 1e-15);
    }

    #[test]
    fn frames_on_the_equator() {
        let rho = 1.5;
        let y = Vec3::new(rho, 0.0, 0.0);
        let ydot = Vec3::new(0.0, 1.0, 0.0);
        let (g, v) = frames_from_curve(&y, &ydot, rho).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!((g.tau() - Vec3::new(0.0, 1.0, 0.0)).abs().max() < 1e-15);
        assert!((g.nu() - Vec3::new(0.0, 0.0, 1.0)).abs().max() < 1e-15);
        assert!((g.beta() - Vec3::new(1.0, 0.0, 0.0)).abs().max() < 1e-15);
    }

    #[test]
    fn frames_at_north_pole_crossing() {
        let (g, _) = frames_from_curve(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(2.0, 0.0, 0.0), 1.0).unwrap();
        assert!((g.rotation().matrix() - Mat3::identity()).abs().max() < 1e-15);
    }

    #[test]
    fn frames_reject_degenerate_input() {
        assert!(matches!(
            frames_from_curve(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), 1.0),
            Err(Error::ZeroSpeed)
        ));
        assert!(matches!(
            frames_from_curve(&Vec3::new(0.9, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0), 1.0),
            Err(Error::OffSphere { .. })
        ));
        assert!(matches!(
            frames_from_curve(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.5, 1.0, 0.0), 1.0),
            Err(Error::NotTangent { .. })
        ));
    }

    #[test]
    fn frames_are_orthonormal_for_random_tangents() {
        let mut state = 17u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let rho = 2.0;
        for _ in 0..100 {
            let y = Vec3::new(next(), next(), next());
            if y.norm() < 0.1 {
                continue;
            }
            let y = y.normalize() * rho;
            let raw = Vec3::new(next(), next(), next());
            let tangential = raw - y * (raw.dot(&y) / y.norm_squared());
            if tangential.norm() < 1e-3 {
                continue;
            }
            let (g, _) = frames_from_curve(&y, &tangential, rho).unwrap();
            assert!(g.rotation().defect() < 1e-12);
        }
    }

    #[test]
    fn geodesic_curvature_and_inverse() {
        let geom = geometry(1.0, 0.0, 1e6); // ell close to 1
        assert_eq!(geodesic_curvature(0.0, &geom).unwrap(), 0.0);
        let geom = geometry(1.0, 0.0, 2.0 / PI); // ell = rho; pick ell = 1 via scaling below
        let unit_ell = CarGeometry::new(1.0, 0.0, 1e9).unwrap();
        let k = geodesic_curvature(FRAC_PI_4, &unit_ell).unwrap();
        assert!((k - 1.0).abs() < 1e-8);
        for kappa in [-3.0, -0.4, 0.0, 0.7, 5.0] {
            let phi = steering_for_curvature(kappa, &geom);
            let back = geodesic_curvature(phi, &geom).unwrap();
            assert!((back - kappa).abs() < 1e-14 * kappa.abs().max(1.0));
        }
    }

    #[test]
    fn curvature_split_on_analytic_circles() {
        let rho = 1.0;
        let h = 1e-4;
        // Great circle: kappa_g = 0, kappa = 1/rho.
        let samples: Vec<Vec3> = (0..200)
            .map(|i| {
                let s = i as f64 * h;
                Vec3::new((s / rho).cos(), (s / rho).sin(), 0.0) * rho
            })
            .collect();
        for c in curvature_split_check(&samples, h, rho).unwrap() {
            assert!(c.kappa_g.abs() < 1e-6);
            assert!((c.kappa - 1.0 / rho).abs() < 1e-6);
            assert!(c.residual < 1e-6);
        }
        // Latitude circle at colatitude psi: kappa_g = cot(psi)/rho.
        let psi = FRAC_PI_4;
        let ring = rho * psi.sin();
        let samples: Vec<Vec3> = (0..200)
            .map(|i| {
                let a = i as f64 * h / ring;
                Vec3::new(psi.sin() * a.cos(), psi.sin() * a.sin(), psi.cos()) * rho
            })
            .collect();
        for c in curvature_split_check(&samples, h, rho).unwrap() {
            assert!((c.kappa_g - 1.0 / psi.tan() / rho).abs() < 1e-6);
            assert!(c.residual < 1e-6);
        }
    }

    #[test]
    fn flat_parametrization_on_circles() {
        let geom = geometry(0.1, 0.0, 1.0);
        // Equator at unit speed: straight driving.
        let y = Vec3::new(1.0, 0.0, 0.0);
        let yp = Vec3::new(0.0, 1.0, 0.0);
        let ypp = Vec3::new(-1.0, 0.0, 0.0);
        let m = flat_parametrization(&y, &yp, &ypp, &geom).unwrap();
        assert!(m.kappa_g.abs() < 1e-15);
        assert!(m.steering.abs() < 1e-15);
        assert!((m.speed - 1.0).abs() < 1e-15);

        // Latitude circle at psi = pi/4 on the unit sphere: kappa_g = 1.
        let psi = FRAC_PI_4;
        let ring = psi.sin();
        let a = 0.37 / ring; // arbitrary station
        let y = Vec3::new(psi.sin() * a.cos(), psi.sin() * a.sin(), psi.cos());
        let yp = Vec3::new(-a.sin(), a.cos(), 0.0);
        let ypp = Vec3::new(-a.cos() / ring, -a.sin() / ring, 0.0);
        let m = flat_parametrization(&y, &yp, &ypp, &geom).unwrap();
        assert!((m.kappa_g - 1.0).abs() < 1e-12);
        assert!((m.steering - geom.effective_wheelbase().atan()).abs() < 1e-12);
    }

    #[test]
    fn arclength_derivatives_agree_with_unit_speed() {
        // Equator traversed at speed 2: time derivatives scale.
        let a: f64 = 0.4;
        let v = 2.0;
        let ydot = Vec3::new(-a.sin(), a.cos(), 0.0) * v;
        let yddot = Vec3::new(-a.cos(), -a.sin(), 0.0) * v * v;
        let (speed, yp, ypp) = arclength_derivatives(&ydot, &yddot).unwrap();
        assert!((speed - v).abs() < 1e-15);
        assert!((yp - Vec3::new(-a.sin(), a.cos(), 0.0)).abs().max() < 1e-15);
        assert!((ypp - Vec3::new(-a.cos(), -a.sin(), 0.0)).abs().max() < 1e-14);
    }

    #[test]
    fn chart_round_trips() {
        let rho = 2.5;
        for xy in [
            Vector2::new(0.0, 0.0),
            Vector2::new(0.3, -0.1),
            Vector2::new(-1.0, 2.0),
        ] {
            let y = chart_to_sphere(&xy, rho);
            assert!((y.norm() - rho).abs() < 1e-12);
            let back = azimuthal_chart(&y, rho);
            assert!((back - xy).abs().max() < 1e-12);
        }
    }
}
