//! Reference trajectories on the sphere.
//!
//! The controller consumes, at every arc-length station, the reference
//! frame together with its geodesic curvature and the curvature's
//! arc-length derivative. Two analytic families cover the test matrix
//! (great circles and latitude circles); arbitrary smooth curves go
//! through the flat parametrization.

use crate::car::{flat_parametrization, CarGeometry, SphericalConfig};
use crate::error::{Error, Result};
use crate::lie::Vec3;

/// Everything the tracking loop needs to know about the reference at one
/// arc-length station.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceSample {
    pub s: f64,
    pub config: SphericalConfig,
    /// Speed of the underlying time parametrization, when one exists.
    pub speed: Option<f64>,
    /// Geodesic curvature of the reference curve.
    pub kappa_g: f64,
    /// Arc-length derivative of the geodesic curvature.
    pub kappa_g_prime: f64,
}

pub trait Reference {
    fn sample(&self, s: f64) -> Result<ReferenceSample>;

    /// Sphere radius the reference lives on.
    fn sphere_radius(&self) -> f64;
}

/// Smooth curve on the sphere given with its arc-length derivatives.
pub trait SphereCurve {
    fn position(&self, s: f64) -> Vec3;
    /// First arc-length derivative (the unit tangent for on-sphere curves).
    fn velocity(&self, s: f64) -> Vec3;
    /// Second arc-length derivative.
    fn acceleration(&self, s: f64) -> Vec3;
    /// Third arc-length derivative, when available analytically.
    fn jerk(&self, _s: f64) -> Option<Vec3> {
        None
    }
}

/// Great circle with unit normal `axis`, traversed at unit speed. The
/// start point is the normalized projection of `e1` (falling back to `e2`
/// near alignment), so the equator starts at `(rho, 0, 0)`.
#[derive(Clone, Copy, Debug)]
pub struct GreatCircleReference {
    axis: Vec3,
    start: Vec3,
    side: Vec3,
    rho: f64,
}

impl GreatCircleReference {
    pub fn new(axis: &Vec3, rho: f64) -> Result<Self> {
        let norm = axis.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::NonUnitAxis { norm });
        }
        let axis = axis / norm;
        let hint = if axis.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let start = (hint - axis * hint.dot(&axis)).normalize();
        let side = axis.cross(&start);
        Ok(GreatCircleReference {
            axis,
            start,
            side,
            rho,
        })
    }
}

impl SphereCurve for GreatCircleReference {
    fn position(&self, s: f64) -> Vec3 {
        let a = s / self.rho;
        (self.start * a.cos() + self.side * a.sin()) * self.rho
    }
    fn velocity(&self, s: f64) -> Vec3 {
        let a = s / self.rho;
        -self.start * a.sin() + self.side * a.cos()
    }
    fn acceleration(&self, s: f64) -> Vec3 {
        self.position(s) * (-1.0 / (self.rho * self.rho))
    }
    fn jerk(&self, s: f64) -> Option<Vec3> {
        Some(self.velocity(s) * (-1.0 / (self.rho * self.rho)))
    }
}

impl Reference for GreatCircleReference {
    fn sample(&self, s: f64) -> Result<ReferenceSample> {
        let a = s / self.rho;
        let beta = self.start * a.cos() + self.side * a.sin();
        let tau = self.velocity(s);
        let config = SphericalConfig::from_frames(tau, self.axis, beta)?;
        Ok(ReferenceSample {
            s,
            config,
            speed: Some(1.0),
            kappa_g: 0.0,
            kappa_g_prime: 0.0,
        })
    }

    fn sphere_radius(&self) -> f64 {
        self.rho
    }
}

/// Latitude circle at colatitude `psi` about the `e3` axis, traversed at
/// unit speed. A non-geodesic reference with constant geodesic curvature
/// `cot(psi) / rho`; `psi = pi/2` reduces to the equator.
#[derive(Clone, Copy, Debug)]
pub struct LatitudeCircleReference {
    colatitude: f64,
    rho: f64,
}

impl LatitudeCircleReference {
    pub fn new(colatitude: f64, rho: f64) -> Result<Self> {
        if colatitude.is_nan() || colatitude <= 0.0 || colatitude >= std::f64::consts::PI {
            return Err(Error::ConfigValidation {
                field: "reference.colatitude".into(),
                reason: format!("colatitude must lie strictly between 0 and pi (got {colatitude})"),
            });
        }
        Ok(LatitudeCircleReference { colatitude, rho })
    }

    /// Arc length of one full revolution, `2 pi rho sin(psi)`.
    pub fn circumference(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.rho * self.colatitude.sin()
    }

    fn ring_radius(&self) -> f64 {
        self.rho * self.colatitude.sin()
    }
}

impl SphereCurve for LatitudeCircleReference {
    fn position(&self, s: f64) -> Vec3 {
        let a = s / self.ring_radius();
        let sp = self.colatitude.sin();
        Vec3::new(sp * a.cos(), sp * a.sin(), self.colatitude.cos()) * self.rho
    }
    fn velocity(&self, s: f64) -> Vec3 {
        let a = s / self.ring_radius();
        Vec3::new(-a.sin(), a.cos(), 0.0)
    }
    fn acceleration(&self, s: f64) -> Vec3 {
        let a = s / self.ring_radius();
        Vec3::new(-a.cos(), -a.sin(), 0.0) / self.ring_radius()
    }
    fn jerk(&self, s: f64) -> Option<Vec3> {
        let r = self.ring_radius();
        let a = s / r;
        Some(Vec3::new(a.sin(), -a.cos(), 0.0) / (r * r))
    }
}

impl Reference for LatitudeCircleReference {
    fn sample(&self, s: f64) -> Result<ReferenceSample> {
        let y = self.position(s);
        let tau = self.velocity(s);
        let beta = y / self.rho;
        let nu = beta.cross(&tau);
        let config = SphericalConfig::from_frames(tau, nu, beta)?;
        Ok(ReferenceSample {
            s,
            config,
            speed: Some(1.0),
            kappa_g: 1.0 / (self.colatitude.tan() * self.rho),
            kappa_g_prime: 0.0,
        })
    }

    fn sphere_radius(&self) -> f64 {
        self.rho
    }
}

/// Reference built from an arbitrary smooth on-sphere curve through the
/// flat parametrization. The curvature derivative uses the third curve
/// derivative when present (`kappa_g' = <y''', nu>` in arc length) and a
/// five-point central difference of `kappa_g` otherwise.
pub struct FlatCurveReference<C: SphereCurve> {
    curve: C,
    geometry: CarGeometry,
    fd_step: f64,
}

impl<C: SphereCurve> FlatCurveReference<C> {
    pub fn new(curve: C, geometry: CarGeometry) -> Self {
        FlatCurveReference {
            curve,
            geometry,
            fd_step: 1e-4,
        }
    }

    fn kappa_g_at(&self, s: f64) -> Result<f64> {
        let m = flat_parametrization(
            &self.curve.position(s),
            &self.curve.velocity(s),
            &self.curve.acceleration(s),
            &self.geometry,
        )?;
        Ok(m.kappa_g)
    }
}

impl<C: SphereCurve> Reference for FlatCurveReference<C> {
    fn sample(&self, s: f64) -> Result<ReferenceSample> {
        let motion = flat_parametrization(
            &self.curve.position(s),
            &self.curve.velocity(s),
            &self.curve.acceleration(s),
            &self.geometry,
        )?;
        let kappa_g_prime = match self.curve.jerk(s) {
            Some(jerk) => jerk.dot(&motion.config.nu()),
            None => {
                let h = self.fd_step;
                // Five-point central difference on kappa_g.
                (self.kappa_g_at(s - 2.0 * h)? - 8.0 * self.kappa_g_at(s - h)?
                    + 8.0 * self.kappa_g_at(s + h)?
                    - self.kappa_g_at(s + 2.0 * h)?)
                    / (12.0 * h)
            }
        };
        Ok(ReferenceSample {
            s,
            config: motion.config,
            speed: Some(motion.speed),
            kappa_g: motion.kappa_g,
            kappa_g_prime,
        })
    }

    fn sphere_radius(&self) -> f64 {
        self.geometry.sphere_radius()
    }
}

/// Map a time grid to arc length by integrating the speed profile,
/// `s(t) = integral of v`. Each interval is integrated with a Simpson rule
/// whose own error estimate (against two half-intervals) must stay below
/// `1e-8`; a coarser grid is rejected rather than silently accepted.
pub fn arclength_reparametrize(
    times: &[f64],
    speed: impl Fn(f64) -> f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(times.len());
    if times.is_empty() {
        return Ok(out);
    }
    let mut s = 0.0;
    out.push(0.0);
    let mut max_residual = 0.0f64;
    for w in times.windows(2) {
        let (a, b) = (w[0], w[1]);
        for t in [a, 0.5 * (a + b), b] {
            let v = speed(t);
            if v <= 0.0 {
                return Err(Error::NonPositiveSpeed { speed: v, t });
            }
        }
        let h = b - a;
        let coarse = h / 6.0 * (speed(a) + 4.0 * speed(0.5 * (a + b)) + speed(b));
        let m = 0.5 * (a + b);
        let fine = h / 12.0
            * (speed(a)
                + 4.0 * speed(0.5 * (a + m))
                + 2.0 * speed(m)
                + 4.0 * speed(0.5 * (m + b))
                + speed(b));
        max_residual = max_residual.max((fine - coarse).abs());
        s += fine;
        out.push(s);
    }
    if max_residual > 1e-8 {
        return Err(Error::QuadratureResidual {
            residual: max_residual,
        });
    }
    Ok(out)
}
