//! Invariant tracking feedback on the sphere.
//!
//! The loop runs in the reference arc length `s_d` with the normalized
//! speed `u = v / v_d` and the geodesic curvature `kappa_g` as inputs.
//! Differentiating `<beta, beta_d> = cos(sigma)` gives
//!
//! `sigma' = -(u <tau, beta_d> + <beta, tau_d>) / (rho sin(sigma))`,
//!
//! so prescribing `sigma' + c_sigma sigma = 0` determines the speed
//! feedback `u = mu(sigma, g, g_d)` algebraically. Differentiating
//! `<beta x beta_d, nu_d> = cos(delta) sin(sigma)` twice and prescribing
//! `delta'' + c_delta1 delta' + c_delta0 delta = 0` yields one scalar
//! equation in which the unknown `kappa_g` appears affinely (through the
//! vehicle's `beta''` and through the derivative `mu'` of the speed
//! feedback), so the steering is obtained by a quasi-static solve at every
//! instant; the safeguarded secant exists only as a guard against numerical
//! degeneracy of that closed form.
//!
//! Every quantity entering the two feedbacks is an inner product of frames
//! moved by the same group element, so the control values are invariant
//! under a common left action on vehicle and reference.
//!
//! At zero error both constructions degenerate to 0/0 with limits `u -> 1`
//! and `kappa_g -> kappa_{g,d}`; the singularity policy realizes those
//! limits numerically and declares the configurations from which the
//! algebra cannot be solved (vehicle tangent orthogonal to the reference
//! position axis, or `sin(delta) sin(sigma) = 0` with a non-stationary
//! error) instead of guessing.

use crate::car::{body_rate, steering_for_curvature, CarGeometry, SphericalConfig};
use crate::error::{Error, Result};
use crate::lie::{Twist3, Vec3};
use crate::reference::ReferenceSample;
use crate::tracking::{error_angles, ErrorAngles, SIGMA_EPSILON};

/// Gains of the prescribed error dynamics: `sigma' + c_sigma sigma = 0`
/// and `delta'' + c_delta1 delta' + c_delta0 delta = 0`.
#[derive(Clone, Copy, Debug)]
pub struct ControllerGains {
    pub c_sigma: f64,
    pub c_delta1: f64,
    pub c_delta0: f64,
}

impl ControllerGains {
    pub fn new(c_sigma: f64, c_delta1: f64, c_delta0: f64) -> Result<Self> {
        for (name, value) in [
            ("controller.c_sigma", c_sigma),
            ("controller.c_delta1", c_delta1),
            ("controller.c_delta0", c_delta0),
        ] {
            if value.is_nan() || value <= 0.0 {
                return Err(Error::ConfigValidation {
                    field: name.into(),
                    reason: format!("gain must be strictly positive (got {value})"),
                });
            }
        }
        Ok(ControllerGains {
            c_sigma,
            c_delta1,
            c_delta0,
        })
    }
}

/// Numerical realization of the analytic limits of the feedback laws.
#[derive(Clone, Copy, Debug)]
pub struct SingularityPolicy {
    /// Threshold on the speed-feedback denominator `|<tau, beta_d>|` and on
    /// the `delta`-equation denominator `|sin(delta) sin(sigma)|`.
    pub eps_denominator: f64,
    /// Error region (on `max(sigma, angle(tau, tau_d))`) inside which the
    /// limit values `u = 1`, `kappa_g = kappa_{g,d}` are returned directly.
    pub eps_limit: f64,
    /// Saturation bound on the commanded geodesic curvature.
    pub kappa_max: f64,
    /// Saturation bound on the steering angle, strictly below pi/2.
    pub phi_max: f64,
}

impl SingularityPolicy {
    pub fn for_geometry(geometry: &CarGeometry) -> Self {
        SingularityPolicy {
            eps_denominator: 1e-6,
            eps_limit: 1e-8,
            kappa_max: 10.0 / geometry.effective_wheelbase(),
            phi_max: 1.4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("policy.eps_denominator", self.eps_denominator),
            ("policy.eps_limit", self.eps_limit),
            ("policy.kappa_max", self.kappa_max),
            ("policy.phi_max", self.phi_max),
        ];
        for (name, value) in positive {
            if value.is_nan() || value <= 0.0 {
                return Err(Error::ConfigValidation {
                    field: name.into(),
                    reason: format!("must be positive (got {value})"),
                });
            }
        }
        if self.phi_max >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::ConfigValidation {
                field: "policy.phi_max".into(),
                reason: format!("must stay below pi/2 (got {})", self.phi_max),
            });
        }
        Ok(())
    }
}

/// Arc-length derivatives of the reference frame columns, obtained from the
/// model equations at unit reference speed.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceDerivatives {
    pub beta_d_prime: Vec3,
    pub tau_d_prime: Vec3,
    pub nu_d_prime: Vec3,
    pub beta_d_second: Vec3,
    pub nu_d_second: Vec3,
}

impl ReferenceDerivatives {
    pub fn from_sample(sample: &ReferenceSample, rho: f64) -> Self {
        let tau_d = sample.config.tau();
        let nu_d = sample.config.nu();
        let beta_d = sample.config.beta();
        let k = sample.kappa_g;
        let tau_d_prime = nu_d * k - beta_d / rho;
        ReferenceDerivatives {
            beta_d_prime: tau_d / rho,
            tau_d_prime,
            nu_d_prime: -tau_d * k,
            beta_d_second: tau_d_prime / rho,
            nu_d_second: -tau_d * sample.kappa_g_prime - tau_d_prime * k,
        }
    }
}

/// Which part of the singularity policy was exercised at a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fallback {
    /// Error inside the limit region: limit values returned.
    LimitRegion,
    /// `sin(delta) sin(sigma)` below threshold: steering held at the
    /// reference curvature.
    DeltaSingular,
}

/// Control values and diagnostics produced at one arc-length station.
#[derive(Clone, Copy, Debug)]
pub struct ControlDecision {
    pub u: f64,
    pub kappa_g: f64,
    pub steering: f64,
    pub sigma: f64,
    pub delta: f64,
    pub sigma_rate: f64,
    pub delta_rate: f64,
    pub fallback: Option<Fallback>,
    /// Residual of the steering equation at the accepted curvature.
    pub residual: f64,
    pub secant_used: bool,
}

/// Derivative of `<beta, beta_d> = cos(sigma)` solved for `sigma'`. Below
/// the `sigma` threshold the rate is reported as zero by convention.
pub fn sigma_rate(
    u: f64,
    config: &SphericalConfig,
    reference: &SphericalConfig,
    sigma: f64,
    rho: f64,
) -> f64 {
    if sigma.sin() <= SIGMA_EPSILON {
        return 0.0;
    }
    let num = u * config.tau().dot(&reference.beta()) + config.beta().dot(&reference.tau());
    -num / (rho * sigma.sin())
}

/// First derivative of `<beta x beta_d, nu_d> = cos(delta) sin(sigma)`
/// solved for `delta'`. Returns zero in the doubly degenerate case
/// (denominator and numerator both below `epsilon`, the stationary
/// longitudinal pattern); errs when only the denominator degenerates.
#[allow(clippy::too_many_arguments)]
pub fn delta_rate(
    u: f64,
    config: &SphericalConfig,
    reference: &SphericalConfig,
    angles: &ErrorAngles,
    sigma_prime: f64,
    kappa_g_d: f64,
    rho: f64,
    epsilon: f64,
) -> Result<f64> {
    let tau = config.tau();
    let beta = config.beta();
    let tau_d = reference.tau();
    let nu_d = reference.nu();
    let beta_d = reference.beta();

    let beta_prime = tau * (u / rho);
    let beta_d_prime = tau_d / rho;
    let nu_d_prime = -tau_d * kappa_g_d;
    let cross = beta.cross(&beta_d);

    let h_prime = (beta_prime.cross(&beta_d) + beta.cross(&beta_d_prime)).dot(&nu_d)
        + cross.dot(&nu_d_prime);
    let numerator = sigma_prime * angles.sigma.cos() * angles.delta.cos() - h_prime;
    let denominator = angles.delta.sin() * angles.sigma.sin();
    if denominator.abs() <= epsilon {
        if numerator.abs() <= epsilon {
            return Ok(0.0);
        }
        return Err(Error::DeltaRateSingular {
            denominator: denominator.abs(),
        });
    }
    Ok(numerator / denominator)
}

/// The invariant tracking controller: speed from the prescribed `sigma`
/// dynamics, steering from the quasi-static `delta` solve.
#[derive(Clone, Copy, Debug)]
pub struct TrackingController {
    gains: ControllerGains,
    policy: SingularityPolicy,
    geometry: CarGeometry,
}

/// Intermediate quantities shared by the feedback evaluations at one step.
struct StepContext {
    angles: ErrorAngles,
    u: f64,
    sigma_prime: f64,
    /// Speed-feedback denominator `<tau, beta_d>`.
    d: f64,
    refs: ReferenceDerivatives,
}

impl TrackingController {
    pub fn new(gains: ControllerGains, policy: SingularityPolicy, geometry: CarGeometry) -> Result<Self> {
        policy.validate()?;
        Ok(TrackingController {
            gains,
            policy,
            geometry,
        })
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    pub fn policy(&self) -> &SingularityPolicy {
        &self.policy
    }

    pub fn geometry(&self) -> &CarGeometry {
        &self.geometry
    }

    fn heading_gap(config: &SphericalConfig, reference: &SphericalConfig) -> f64 {
        let tau = config.tau();
        let tau_d = reference.tau();
        tau.cross(&tau_d).norm().atan2(tau.dot(&tau_d))
    }

    fn in_limit_region(&self, config: &SphericalConfig, reference: &SphericalConfig, sigma: f64) -> bool {
        sigma.max(Self::heading_gap(config, reference)) < self.policy.eps_limit
    }

    fn step_context(&self, config: &SphericalConfig, sample: &ReferenceSample) -> Result<StepContext> {
        let rho = self.geometry.sphere_radius();
        let angles = error_angles(config, &sample.config)?;
        let sigma = angles.sigma;

        let d = config.tau().dot(&sample.config.beta());
        if d.abs() <= self.policy.eps_denominator {
            return Err(Error::SingularConfiguration {
                denominator: d.abs(),
            });
        }
        let n = rho * self.gains.c_sigma * sigma * sigma.sin()
            - config.beta().dot(&sample.config.tau());
        Ok(StepContext {
            angles,
            u: n / d,
            sigma_prime: -self.gains.c_sigma * sigma,
            d,
            refs: ReferenceDerivatives::from_sample(sample, rho),
        })
    }

    /// Speed feedback `u = mu(sigma, g, g_d)` realizing
    /// `sigma' + c_sigma sigma = 0`; returns the limit value 1 inside the
    /// policy's limit region.
    pub fn speed_feedback(&self, config: &SphericalConfig, sample: &ReferenceSample) -> Result<f64> {
        let angles = error_angles(config, &sample.config)?;
        if self.in_limit_region(config, &sample.config, angles.sigma) {
            return Ok(1.0);
        }
        Ok(self.step_context(config, sample)?.u)
    }

    /// Derivative `u' = d mu / d s_d` along the closed loop, for a
    /// candidate curvature `kappa_g` (the dependence is affine).
    pub fn speed_feedback_rate(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
        kappa_g: f64,
    ) -> Result<f64> {
        let angles = error_angles(config, &sample.config)?;
        if self.in_limit_region(config, &sample.config, angles.sigma) {
            return Ok(0.0);
        }
        let ctx = self.step_context(config, sample)?;
        Ok(self.mu_prime(config, sample, &ctx, kappa_g))
    }

    /// Coefficients `(a, b)` with `u'(kappa_g) = a + b kappa_g`.
    pub fn speed_feedback_rate_affine(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
    ) -> Result<(f64, f64)> {
        let angles = error_angles(config, &sample.config)?;
        if self.in_limit_region(config, &sample.config, angles.sigma) {
            return Ok((0.0, 0.0));
        }
        let ctx = self.step_context(config, sample)?;
        let a = self.mu_prime(config, sample, &ctx, 0.0);
        let b = self.mu_prime(config, sample, &ctx, 1.0) - a;
        Ok((a, b))
    }

    fn mu_prime(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
        ctx: &StepContext,
        kappa_g: f64,
    ) -> f64 {
        let rho = self.geometry.sphere_radius();
        let sigma = ctx.angles.sigma;
        let tau = config.tau();
        let nu = config.nu();
        let beta = config.beta();
        let tau_d = sample.config.tau();
        let beta_d = sample.config.beta();

        let tau_dot_tau_d = tau.dot(&tau_d);
        // N' from the product rule on rho c_sigma sigma sin(sigma) - <beta, tau_d>.
        let n_prime = rho
            * self.gains.c_sigma
            * ctx.sigma_prime
            * (sigma.sin() + sigma * sigma.cos())
            - (ctx.u / rho) * tau_dot_tau_d
            - beta.dot(&ctx.refs.tau_d_prime);
        // D' = <tau', beta_d> + <tau, beta_d'> with tau' = u (kappa_g nu - beta/rho).
        let d_prime = ctx.u * (kappa_g * nu.dot(&beta_d) - beta.dot(&beta_d) / rho)
            + tau_dot_tau_d / rho;
        (n_prime - ctx.u * d_prime) / ctx.d
    }

    /// Residual of the steering equation at a candidate curvature: the
    /// second derivative of `<beta x beta_d, nu_d>` minus the chain-rule
    /// expansion of `cos(delta) sin(sigma)` with the prescribed `delta''`
    /// substituted. Affine in `kappa_g`.
    pub fn steering_residual(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
        kappa_g: f64,
    ) -> Result<f64> {
        let ctx = self.step_context(config, sample)?;
        let delta_prime = self.delta_prime(config, sample, &ctx)?;
        Ok(self.residual_at(config, sample, &ctx, delta_prime, kappa_g))
    }

    fn delta_prime(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
        ctx: &StepContext,
    ) -> Result<f64> {
        delta_rate(
            ctx.u,
            config,
            &sample.config,
            &ctx.angles,
            ctx.sigma_prime,
            sample.kappa_g,
            self.geometry.sphere_radius(),
            self.policy.eps_denominator,
        )
    }

    fn residual_at(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
        ctx: &StepContext,
        delta_prime: f64,
        kappa_g: f64,
    ) -> f64 {
        let rho = self.geometry.sphere_radius();
        let sigma = ctx.angles.sigma;
        let delta = ctx.angles.delta;
        let u = ctx.u;

        let tau = config.tau();
        let nu = config.nu();
        let beta = config.beta();
        let nu_d = sample.config.nu();
        let beta_d = sample.config.beta();
        let refs = &ctx.refs;

        let beta_prime = tau * (u / rho);
        let u_prime = self.mu_prime(config, sample, ctx, kappa_g);
        // beta'' = u' tau / rho + (u^2 / rho)(kappa_g nu - beta / rho);
        // the square comes from tau' = u (kappa_g nu - beta / rho).
        let beta_second = tau * (u_prime / rho) + (nu * kappa_g - beta / rho) * (u * u / rho);

        let cross = beta.cross(&beta_d);
        let lhs = (beta_second.cross(&beta_d)
            + beta_prime.cross(&refs.beta_d_prime) * 2.0
            + beta.cross(&refs.beta_d_second))
        .dot(&nu_d)
            + 2.0
                * (beta_prime.cross(&beta_d) + beta.cross(&refs.beta_d_prime))
                    .dot(&refs.nu_d_prime)
            + cross.dot(&refs.nu_d_second);

        let sigma_prime = ctx.sigma_prime;
        let sigma_second = -self.gains.c_sigma * sigma_prime;
        let delta_second = -self.gains.c_delta1 * delta_prime - self.gains.c_delta0 * delta;
        let rhs = sigma_second * sigma.cos() * delta.cos()
            - sigma_prime * sigma_prime * sigma.sin() * delta.cos()
            - 2.0 * sigma_prime * delta_prime * delta.sin() * sigma.cos()
            - delta_second * delta.sin() * sigma.sin()
            - delta_prime * delta_prime * delta.cos() * sigma.sin();

        lhs - rhs
    }

    /// Quasi-static steering feedback: the curvature solving the prescribed
    /// `delta` dynamics, saturated by the policy, with the steering angle
    /// recovered through `kappa_g = tan(phi) / ell`.
    pub fn steering_feedback(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
    ) -> Result<ControlDecision> {
        self.control(config, sample)
    }

    /// Evaluate both feedback laws at one station.
    pub fn control(&self, config: &SphericalConfig, sample: &ReferenceSample) -> Result<ControlDecision> {
        let angles = error_angles(config, &sample.config)?;
        if self.in_limit_region(config, &sample.config, angles.sigma) {
            return Ok(ControlDecision {
                u: 1.0,
                kappa_g: sample.kappa_g,
                steering: steering_for_curvature(sample.kappa_g, &self.geometry),
                sigma: angles.sigma,
                delta: angles.delta,
                sigma_rate: -self.gains.c_sigma * angles.sigma,
                delta_rate: 0.0,
                fallback: Some(Fallback::LimitRegion),
                residual: 0.0,
                secant_used: false,
            });
        }

        let ctx = self.step_context(config, sample)?;
        let base = |kappa_g: f64, delta_prime: f64, fallback, residual, secant| ControlDecision {
            u: ctx.u,
            kappa_g,
            steering: steering_for_curvature(kappa_g, &self.geometry),
            sigma: ctx.angles.sigma,
            delta: ctx.angles.delta,
            sigma_rate: ctx.sigma_prime,
            delta_rate: delta_prime,
            fallback,
            residual,
            secant_used: secant,
        };

        let delta_prime = match self.delta_prime(config, sample, &ctx) {
            Ok(rate) => rate,
            Err(Error::DeltaRateSingular { .. }) => {
                // Quasi-static solve undefined; hold the reference curvature.
                return self.check_saturation(base(sample.kappa_g, 0.0, Some(Fallback::DeltaSingular), 0.0, false));
            }
            Err(other) => return Err(other),
        };
        // The stationary longitudinal pattern (delta' reported as zero by
        // the degenerate branch) leaves kappa_g unobservable as well.
        if ctx.angles.delta.sin().abs() * ctx.angles.sigma.sin() <= self.policy.eps_denominator {
            return self.check_saturation(base(sample.kappa_g, delta_prime, Some(Fallback::DeltaSingular), 0.0, false));
        }

        let f0 = self.residual_at(config, sample, &ctx, delta_prime, sample.kappa_g);
        let f1 = self.residual_at(config, sample, &ctx, delta_prime, sample.kappa_g + 1.0);
        let slope = f1 - f0;
        let scale = f0.abs().max(f1.abs()).max(1.0);
        let (kappa, secant) = if slope.abs() > 1e-12 * scale {
            (sample.kappa_g - f0 / slope, false)
        } else {
            let f = |k: f64| self.residual_at(config, sample, &ctx, delta_prime, k);
            (
                safeguarded_secant(f, sample.kappa_g, -self.policy.kappa_max, self.policy.kappa_max)?,
                true,
            )
        };
        let residual = self
            .residual_at(config, sample, &ctx, delta_prime, kappa)
            .abs();
        self.check_saturation(base(kappa, delta_prime, None, residual, secant))
    }

    fn check_saturation(&self, decision: ControlDecision) -> Result<ControlDecision> {
        if decision.kappa_g.abs() > self.policy.kappa_max {
            return Err(Error::InfeasibleSteering {
                reason: format!(
                    "curvature {} exceeds the saturation bound {}",
                    decision.kappa_g, self.policy.kappa_max
                ),
            });
        }
        if decision.steering.abs() > self.policy.phi_max {
            return Err(Error::InfeasibleSteering {
                reason: format!(
                    "steering {} exceeds the saturation bound {}",
                    decision.steering, self.policy.phi_max
                ),
            });
        }
        Ok(decision)
    }

    /// Closed-loop arc-length rate of the vehicle plus the per-step
    /// diagnostics.
    pub fn closed_loop_rate(
        &self,
        config: &SphericalConfig,
        sample: &ReferenceSample,
    ) -> Result<(Twist3, ControlDecision)> {
        let decision = self.control(config, sample)?;
        Ok((
            body_rate(decision.u, decision.kappa_g, self.geometry.sphere_radius()),
            decision,
        ))
    }
}

/// Secant iteration with bisection safeguards on `[lo, hi]`; tolerance
/// `1e-12` on the residual, at most 50 iterations.
fn safeguarded_secant(f: impl Fn(f64) -> f64, start: f64, lo: f64, hi: f64) -> Result<f64> {
    const TOL: f64 = 1e-12;
    const MAX_ITER: usize = 50;
    let mut a = start.clamp(lo, hi);
    let mut b = (start + 0.5 * (hi - start).max(1e-3)).clamp(lo, hi);
    if a == b {
        b = (a - 1e-3).clamp(lo, hi);
    }
    let mut fa = f(a);
    let mut fb = f(b);
    // Track a sign-changing bracket when one appears.
    let mut bracket: Option<(f64, f64)> = if fa * fb < 0.0 { Some((a, b)) } else { None };
    for _ in 0..MAX_ITER {
        if fb.abs() < TOL {
            return Ok(b);
        }
        let denom = fb - fa;
        let mut next = if denom.abs() > 0.0 {
            b - fb * (b - a) / denom
        } else {
            0.5 * (a + b)
        };
        if !next.is_finite() || next < lo || next > hi {
            next = match bracket {
                Some((x, y)) => 0.5 * (x + y),
                None => 0.5 * (lo + hi),
            };
        }
        let fnext = f(next);
        if let Some((x, y)) = bracket {
            let fx = f(x);
            bracket = if fx * fnext < 0.0 {
                Some((x, next))
            } else {
                Some((next, y))
            };
        } else if fnext * fb < 0.0 {
            bracket = Some((b, next));
        }
        a = b;
        fa = fb;
        b = next;
        fb = fnext;
    }
    if fb.abs() < 1e-9 {
        return Ok(b);
    }
    Err(Error::InfeasibleSteering {
        reason: format!("no root within the saturation bounds (residual {fb:.3e})"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_so3;
    use crate::reference::{GreatCircleReference, LatitudeCircleReference, Reference};

    fn controller(rho: f64, c_sigma: f64) -> TrackingController {
        let geometry = CarGeometry::new(0.1, 0.0, rho).unwrap();
        let gains = ControllerGains::new(c_sigma, 2.0, 1.0).unwrap();
        let policy = SingularityPolicy::for_geometry(&geometry);
        TrackingController::new(gains, policy, geometry).unwrap()
    }

    fn equator_sample(rho: f64, s: f64) -> ReferenceSample {
        GreatCircleReference::new(&Vec3::new(0.0, 0.0, 1.0), rho)
            .unwrap()
            .sample(s)
            .unwrap()
    }

    fn displaced(sample: &ReferenceSample, axis: Vec3, angle: f64) -> SphericalConfig {
        let h = exp_so3(&axis.normalize(), angle).unwrap();
        SphericalConfig::new(*sample.config.rotation() * h)
    }

    #[test]
    fn speed_feedback_limit_region_returns_one() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.0);
        let u = c.speed_feedback(&sample.config, &sample).unwrap();
        assert_eq!(u, 1.0);
    }

    #[test]
    fn speed_feedback_longitudinal_displacements() {
        // Ahead on the reference great circle by 0.1: slows to 1 - c sigma;
        // behind: speeds up to 1 + c sigma (rho = 1).
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.0);
        let ahead = displaced(&sample, Vec3::new(0.0, 1.0, 0.0), 0.1);
        let u = c.speed_feedback(&ahead, &sample).unwrap();
        assert!((u - 0.9).abs() < 1e-12, "u = {u}");

        let c2 = controller(1.0, 2.0);
        let u = c2.speed_feedback(&ahead, &sample).unwrap();
        assert!((u - 0.8).abs() < 1e-12, "u = {u}");

        let behind = displaced(&sample, Vec3::new(0.0, 1.0, 0.0), -0.1);
        let u = c.speed_feedback(&behind, &sample).unwrap();
        assert!((u - 1.1).abs() < 1e-12, "u = {u}");
    }

    #[test]
    fn speed_feedback_enforces_prescribed_sigma_dynamics() {
        // Wherever mu is defined, sigma' computed from the model equals
        // -c_sigma sigma to round-off.
        let c = controller(1.0, 1.3);
        let sample = equator_sample(1.0, 0.4);
        let mut state = 31u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..200 {
            let axis = Vec3::new(next(), next(), next());
            if axis.norm() < 1e-2 {
                continue;
            }
            let g = displaced(&sample, axis, 0.2 * next());
            let angles = error_angles(&g, &sample.config).unwrap();
            let u = match c.speed_feedback(&g, &sample) {
                Ok(u) => u,
                Err(Error::SingularConfiguration { .. }) => continue,
                Err(other) => panic!("unexpected: {other}"),
            };
            if angles.sigma <= SIGMA_EPSILON {
                continue;
            }
            let rate = sigma_rate(u, &g, &sample.config, angles.sigma, 1.0);
            assert!(
                (rate + 1.3 * angles.sigma).abs() < 1e-12,
                "sigma' + c sigma = {}",
                rate + 1.3 * angles.sigma
            );
        }
    }

    #[test]
    fn speed_feedback_singular_at_pure_lateral_error() {
        // Rotation about the body tangent axis leaves <tau, beta_d> = 0.
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.0);
        let lateral = displaced(&sample, Vec3::new(1.0, 0.0, 0.0), 0.1);
        assert!(matches!(
            c.speed_feedback(&lateral, &sample),
            Err(Error::SingularConfiguration { .. })
        ));
    }

    #[test]
    fn sigma_rate_zero_when_inner_products_vanish() {
        let sample = equator_sample(1.0, 0.0);
        let lateral = displaced(&sample, Vec3::new(1.0, 0.0, 0.0), 0.3);
        let angles = error_angles(&lateral, &sample.config).unwrap();
        let rate = sigma_rate(0.0, &lateral, &sample.config, angles.sigma, 1.0);
        assert!(rate.abs() < 1e-12);
    }

    #[test]
    fn delta_rate_finite_for_lateral_error() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.0);
        // Mostly lateral with a longitudinal component so mu is defined.
        let g = displaced(&sample, Vec3::new(0.0, -0.3, 1.0), 0.12);
        let angles = error_angles(&g, &sample.config).unwrap();
        let u = c.speed_feedback(&g, &sample).unwrap();
        let rate = delta_rate(
            u,
            &g,
            &sample.config,
            &angles,
            -angles.sigma,
            sample.kappa_g,
            1.0,
            1e-6,
        )
        .unwrap();
        assert!(rate.is_finite());
    }

    #[test]
    fn delta_rate_zero_for_stationary_pattern() {
        // Vehicle behind on the same great circle with u = 1 and matched
        // curvature: the configuration translates rigidly, so delta' = 0.
        let sample = equator_sample(1.0, 0.5);
        let g = displaced(&sample, Vec3::new(0.0, 1.0, 0.0), -0.2);
        let angles = error_angles(&g, &sample.config).unwrap();
        let rate = delta_rate(1.0, &g, &sample.config, &angles, 0.0, 0.0, 1.0, 1e-6).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn speed_feedback_rate_vanishes_at_equilibrium() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.6);
        let rate = c
            .speed_feedback_rate(&sample.config, &sample, sample.kappa_g)
            .unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn speed_feedback_rate_is_affine_in_curvature() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.2);
        let g = displaced(&sample, Vec3::new(0.3, -0.8, 0.9), 0.15);
        let u0 = c.speed_feedback_rate(&g, &sample, 0.0).unwrap();
        let u1 = c.speed_feedback_rate(&g, &sample, 1.0).unwrap();
        let u2 = c.speed_feedback_rate(&g, &sample, 2.0).unwrap();
        // Three points on a line: the parabola fitted through them has
        // vanishing curvature.
        let curvature = (u0 - 2.0 * u1 + u2) / 2.0;
        assert!(curvature.abs() < 1e-10, "quadratic residual {curvature:e}");
        let (a, b) = c.speed_feedback_rate_affine(&g, &sample).unwrap();
        assert!((a - u0).abs() < 1e-13);
        assert!((a + b - u1).abs() < 1e-13);
    }

    #[test]
    fn steering_solve_small_lateral_offset_on_equator() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.0);
        let g = displaced(&sample, Vec3::new(0.2, -1.0, 0.4), 0.1);
        let decision = c.control(&g, &sample).unwrap();
        assert!(decision.fallback.is_none());
        assert!(!decision.secant_used);
        assert!(decision.residual < 1e-10, "residual {}", decision.residual);
    }

    #[test]
    fn steering_residual_is_affine() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.3);
        let g = displaced(&sample, Vec3::new(0.5, -0.7, 0.6), 0.12);
        let f0 = c.steering_residual(&g, &sample, -1.0).unwrap();
        let f1 = c.steering_residual(&g, &sample, 0.0).unwrap();
        let f2 = c.steering_residual(&g, &sample, 1.0).unwrap();
        let curvature = (f0 - 2.0 * f1 + f2) / 2.0;
        assert!(curvature.abs() < 1e-9, "quadratic residual {curvature:e}");
    }

    #[test]
    fn zero_error_limit_returns_reference_curvature() {
        let rho = 1.0;
        let c = controller(rho, 1.0);
        let lat = LatitudeCircleReference::new(std::f64::consts::FRAC_PI_4, rho).unwrap();
        let sample = lat.sample(0.7).unwrap();
        let decision = c.control(&sample.config, &sample).unwrap();
        assert_eq!(decision.fallback, Some(Fallback::LimitRegion));
        assert_eq!(decision.u, 1.0);
        assert!((decision.kappa_g - sample.kappa_g).abs() < 1e-15);
        let (rate, _) = c.closed_loop_rate(&sample.config, &sample).unwrap();
        let expected = body_rate(1.0, sample.kappa_g, rho);
        assert!((rate.vector() - expected.vector()).abs().max() < 1e-15);
    }

    #[test]
    fn feedbacks_are_invariant_under_left_actions() {
        let c = controller(1.0, 1.0);
        let sample = equator_sample(1.0, 0.1);
        let g = displaced(&sample, Vec3::new(0.4, -0.6, 0.8), 0.13);
        let base = c.control(&g, &sample).unwrap();
        let mut state = 41u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..50 {
            let h = crate::lie::exp_so3_vector(&Vec3::new(next(), next(), next()));
            let moved_sample = ReferenceSample {
                config: h * sample.config,
                ..sample
            };
            let moved = c.control(&(h * g), &moved_sample).unwrap();
            assert!((moved.u - base.u).abs() < 1e-12, "u deviation");
            assert!(
                (moved.kappa_g - base.kappa_g).abs() < 1e-9,
                "kappa deviation {}",
                (moved.kappa_g - base.kappa_g).abs()
            );
        }
    }

    #[test]
    fn feedbacks_are_smooth_across_the_limit_boundary() {
        // Tighten the denominator guard so the solve is evaluable right
        // outside the limit region; the computed values must match the
        // limit values to well under 1e-6.
        let geometry = CarGeometry::new(0.1, 0.0, 1.0).unwrap();
        let gains = ControllerGains::new(1.0, 2.0, 1.0).unwrap();
        let mut policy = SingularityPolicy::for_geometry(&geometry);
        policy.eps_denominator = 1e-13;
        let c = TrackingController::new(gains, policy, geometry).unwrap();
        let sample = equator_sample(1.0, 0.0);
        let eps = c.policy().eps_limit;
        let axis = Vec3::new(0.2, -1.0, 0.5);
        let inside = displaced(&sample, axis, eps * 0.5);
        let outside = displaced(&sample, axis, eps * 2.0);
        let d_in = c.control(&inside, &sample).unwrap();
        let d_out = c.control(&outside, &sample).unwrap();
        assert_eq!(d_in.fallback, Some(Fallback::LimitRegion));
        assert!(d_out.fallback.is_none());
        assert!((d_in.u - d_out.u).abs() < 1e-6, "u gap {}", (d_in.u - d_out.u).abs());
        assert!(
            (d_in.kappa_g - d_out.kappa_g).abs() < 1e-6,
            "kappa gap {}",
            (d_in.kappa_g - d_out.kappa_g).abs()
        );
    }

    #[test]
    fn infeasible_steering_is_reported() {
        let geometry = CarGeometry::new(0.1, 0.0, 1.0).unwrap();
        let gains = ControllerGains::new(1.0, 2.0, 1.0).unwrap();
        let mut policy = SingularityPolicy::for_geometry(&geometry);
        policy.kappa_max = 1e-4; // absurdly tight saturation
        let c = TrackingController::new(gains, policy, geometry).unwrap();
        let sample = equator_sample(1.0, 0.0);
        let g = displaced(&sample, Vec3::new(0.3, -1.0, 0.4), 0.15);
        assert!(matches!(
            c.control(&g, &sample),
            Err(Error::InfeasibleSteering { .. })
        ));
    }

    #[test]
    fn secant_helper_finds_roots_of_nonlinear_residuals() {
        let f = |x: f64| x.tanh() - 0.3;
        let root = safeguarded_secant(f, 0.0, -2.0, 2.0).unwrap();
        assert!((f(root)).abs() < 1e-12);
        let g = |x: f64| x * x - 2.0;
        let root = safeguarded_secant(g, 1.0, 0.0, 3.0).unwrap();
        assert!((root - std::f64::consts::SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn gains_must_be_positive() {
        assert!(ControllerGains::new(0.0, 1.0, 1.0).is_err());
        assert!(ControllerGains::new(1.0, -1.0, 1.0).is_err());
        assert!(ControllerGains::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn reference_derivatives_match_finite_differences() {
        let lat = LatitudeCircleReference::new(1.1, 2.0).unwrap();
        let h = 1e-4;
        for i in 0..10 {
            let s = i as f64 * 0.5;
            let sample = lat.sample(s).unwrap();
            let refs = ReferenceDerivatives::from_sample(&sample, 2.0);
            let plus = lat.sample(s + h).unwrap();
            let minus = lat.sample(s - h).unwrap();
            let fd_beta = (plus.config.beta() - minus.config.beta()) / (2.0 * h);
            let fd_tau = (plus.config.tau() - minus.config.tau()) / (2.0 * h);
            let fd_nu = (plus.config.nu() - minus.config.nu()) / (2.0 * h);
            assert!((fd_beta - refs.beta_d_prime).abs().max() < 1e-6);
            assert!((fd_tau - refs.tau_d_prime).abs().max() < 1e-6);
            assert!((fd_nu - refs.nu_d_prime).abs().max() < 1e-6);
            let fd_beta2 = (plus.config.beta() - sample.config.beta() * 2.0
                + minus.config.beta())
                / (h * h);
            let fd_nu2 =
                (plus.config.nu() - sample.config.nu() * 2.0 + minus.config.nu()) / (h * h);
            assert!((fd_beta2 - refs.beta_d_second).abs().max() < 1e-6);
            assert!((fd_nu2 - refs.nu_d_second).abs().max() < 1e-6);
        }
    }
}
