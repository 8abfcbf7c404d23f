//! Left-invariant observer on SO(3) driven by the rear-axle position.
//!
//! The observer copies the arc-length model (at `u = 1`, since it runs in
//! the arc length of the measured curve) and injects the invariant output
//! `B = ghat^T y / rho`. About zero error, `B = (-xi_2, xi_1, 1)` to first
//! order, so gains of the form `L_i = l_i1 <B, e2> - l_i2 <B, e1>` act on
//! the error coordinates linearly and the error dynamics become
//!
//! ```text
//! xi' = [ l11        l12+kappa_g  -1/rho ]
//!       [ l21-kappa_g l22          0     ]  xi .
//!       [ l31+1/rho   l32          0     ]
//! ```
//!
//! Scheduling `l21 = -l12 = kappa_g` removes the curvature from the matrix
//! entirely, so one constant gain set serves every steering input and the
//! remaining freedom `(l11, l22, l31)` assigns the characteristic
//! polynomial. `l22` factors out of that polynomial as a real eigenvalue,
//! which is why pole placement requires one real pole.

use nalgebra::Complex;

use crate::car::body_rate;
use crate::error::{Error, Result};
use crate::lie::{log_so3, Mat3, Rotation3, Twist3, Vec3};

/// Relative tolerance for "measurement lies on the sphere" checks.
const MEASUREMENT_TOLERANCE: f64 = 1e-6;

/// Constant observer gains. The skew pair is scheduled at evaluation time
/// (`l21 = -l12 = kappa_g`), so only the four free coefficients are stored;
/// `l22 < 0` is required, `l11 >= 0` is permitted but unusual and left to
/// the caller to judge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObserverGains {
    pub l11: f64,
    pub l22: f64,
    pub l31: f64,
    pub l32: f64,
}

impl ObserverGains {
    pub fn new(l11: f64, l22: f64, l31: f64, l32: f64) -> Result<Self> {
        if l22.is_nan() || l22 >= 0.0 {
            return Err(Error::GainSignCondition { l22 });
        }
        Ok(ObserverGains { l11, l22, l31, l32 })
    }
}

/// Invariant output `B = ghat^T (y / rho)`; equals `e3` exactly when the
/// estimate matches the truth.
pub fn measurement_function(estimate: &Rotation3, y: &Vec3, rho: f64) -> Result<Vec3> {
    let norm = y.norm();
    if (norm - rho).abs() > MEASUREMENT_TOLERANCE * rho.max(1.0) {
        return Err(Error::OffSphere { norm, radius: rho });
    }
    Ok(estimate.transpose() * (y / rho))
}

/// Injection coefficients `L_i = l_i1 <B, e2> - l_i2 <B, e1>` with the
/// scheduled skew pair. To first order in the error, `L_i = l_i1 xi_1 +
/// l_i2 xi_2`.
pub fn observer_gain_values(b: &Vec3, gains: &ObserverGains, kappa_g: f64) -> Vec3 {
    let (l12, l21) = (-kappa_g, kappa_g);
    Vec3::new(
        gains.l11 * b.y - l12 * b.x,
        l21 * b.y - gains.l22 * b.x,
        gains.l31 * b.y - gains.l32 * b.x,
    )
}

/// Left-invariant observation error `g_e = g^T ghat` and its angle.
pub fn observation_error(truth: &Rotation3, estimate: &Rotation3) -> Result<(Rotation3, f64)> {
    let g_e = truth.transpose() * *estimate;
    let (_, angle) = log_so3(&g_e).map_err(|_| Error::OutOfLocalRegime {
        angle: std::f64::consts::PI,
    })?;
    Ok((g_e, angle))
}

/// The observer itself: model copy plus invariant error injection.
#[derive(Clone, Copy, Debug)]
pub struct InvariantObserver {
    gains: ObserverGains,
    rho: f64,
}

impl InvariantObserver {
    pub fn new(gains: ObserverGains, rho: f64) -> Self {
        InvariantObserver { gains, rho }
    }

    pub fn gains(&self) -> &ObserverGains {
        &self.gains
    }

    /// Arc-length rate of the estimate given the position measurement and
    /// the (known) curvature input of the vehicle:
    /// `ghat' = ghat (hat((0, 1/rho, kappa_g)) + sum L_i hat(e_i))`.
    pub fn rate(&self, estimate: &Rotation3, y: &Vec3, kappa_g: f64) -> Result<Mat3> {
        let body = self.body_rate(estimate, y, kappa_g)?;
        Ok(estimate.matrix() * body.matrix())
    }

    /// Body-frame rate (the algebra element multiplying `ghat`), which is
    /// what the group integrators consume.
    pub fn body_rate(&self, estimate: &Rotation3, y: &Vec3, kappa_g: f64) -> Result<Twist3> {
        let b = measurement_function(estimate, y, self.rho)?;
        let injection = observer_gain_values(&b, &self.gains, kappa_g);
        let model = body_rate(1.0, kappa_g, self.rho);
        Ok(Twist3::from_vector(model.vector() + injection))
    }
}

/// Linearized error matrix about the identity, with the skew pair
/// scheduled. The entries are independent of `kappa_g` by construction.
pub fn error_linearization(kappa_g: f64, rho: f64, gains: &ObserverGains) -> Mat3 {
    let (l12, l21) = (-kappa_g, kappa_g);
    Mat3::new(
        gains.l11,
        l12 + kappa_g,
        -1.0 / rho,
        l21 - kappa_g,
        gains.l22,
        0.0,
        gains.l31 + 1.0 / rho,
        gains.l32,
        0.0,
    )
}

/// Coefficients `(a2, a1, a0)` of the characteristic polynomial
/// `p(lambda) = lambda^3 + a2 lambda^2 + a1 lambda + a0` of the scheduled
/// error matrix.
pub fn characteristic_polynomial(gains: &ObserverGains, rho: f64) -> (f64, f64, f64) {
    let a2 = -(gains.l11 + gains.l22);
    let a1 = (gains.l31 * rho + rho * rho * gains.l11 * gains.l22 + 1.0) / (rho * rho);
    let a0 = -(gains.l22 / (rho * rho) + gains.l31 * gains.l22 / rho);
    (a2, a1, a0)
}

/// Eigenvalues of the scheduled error matrix, computed as roots of the
/// closed-form characteristic polynomial. Going through the polynomial
/// keeps repeated (defective) eigenvalues exact where a general
/// eigensolver would scatter them by the cube root of machine epsilon.
pub fn error_eigenvalues(gains: &ObserverGains, rho: f64) -> Vec<Complex<f64>> {
    let (a2, a1, a0) = characteristic_polynomial(gains, rho);
    let mut roots = cubic_roots(a2, a1, a0).to_vec();
    roots.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    roots
}

/// Roots of `x^3 + a2 x^2 + a1 x + a0` with real coefficients.
pub fn cubic_roots(a2: f64, a1: f64, a0: f64) -> [Complex<f64>; 3] {
    // Depress: x = t - a2/3 gives t^3 + p t + q.
    let shift = a2 / 3.0;
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
    let scale = a2.abs().max(a1.abs().sqrt()).max(a0.abs().cbrt()).max(1.0);
    if p.abs() <= 1e-12 * scale * scale && q.abs() <= 1e-12 * scale * scale * scale {
        // Triple root.
        let r = Complex::new(-shift, 0.0);
        return [r, r, r];
    }
    let discriminant = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    if discriminant > 0.0 {
        // One real root and a conjugate pair.
        let s = discriminant.sqrt();
        let u = (-q / 2.0 + s).cbrt();
        let v = (-q / 2.0 - s).cbrt();
        let real = u + v - shift;
        let re = -(u + v) / 2.0 - shift;
        let im = (u - v) * 3f64.sqrt() / 2.0;
        [
            Complex::new(real, 0.0),
            Complex::new(re, im),
            Complex::new(re, -im),
        ]
    } else {
        // Three real roots (trigonometric form).
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos();
        let mut out = [Complex::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let t = m * ((phi + 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos();
            *slot = Complex::new(t - shift, 0.0);
        }
        out
    }
}

/// Assign the characteristic polynomial from three desired poles
/// (closed under conjugation, all with negative real part, at least one
/// real). The scheduled error matrix has `l22` as an eigenvalue — the
/// characteristic polynomial factors as
/// `(lambda - l22)(lambda^2 - l11 lambda + (l31 rho + 1)/rho^2)` — so the
/// first real pole in the list is assigned to `l22` and the remaining pair
/// fixes `l11` and `l31`; `l32` does not enter the polynomial and defaults
/// to zero.
pub fn place_poles(poles: &[Complex<f64>; 3], rho: f64) -> Result<ObserverGains> {
    for p in poles {
        if p.re.is_nan() || p.re >= 0.0 {
            return Err(Error::PolePlacement {
                reason: format!("pole {p} must have negative real part"),
            });
        }
    }
    let real_index = poles.iter().position(|p| p.im == 0.0).ok_or_else(|| {
        Error::PolePlacement {
            reason: "at least one pole must be real".into(),
        }
    })?;
    let mut rest = poles.to_vec();
    let real_pole = rest.remove(real_index).re;
    let (p1, p2) = (rest[0], rest[1]);
    let pair_sum = p1 + p2;
    let pair_product = p1 * p2;
    if pair_sum.im.abs() > 1e-12 || pair_product.im.abs() > 1e-12 {
        return Err(Error::PolePlacement {
            reason: "complex poles must come in conjugate pairs".into(),
        });
    }
    let l22 = real_pole;
    let l11 = pair_sum.re;
    let l31 = (pair_product.re * rho * rho - 1.0) / rho;
    ObserverGains::new(l11, l22, l31, 0.0)
}

/// Convenience for real pole triples.
pub fn place_real_poles(p1: f64, p2: f64, p3: f64, rho: f64) -> Result<ObserverGains> {
    place_poles(
        &[
            Complex::new(p1, 0.0),
            Complex::new(p2, 0.0),
            Complex::new(p3, 0.0),
        ],
        rho,
    )
}
