//! Shared helpers for the integration suites.

// Each suite compiles this module separately and uses a subset of it.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spherecar::lie::{exp_so3_vector, Rotation3, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3 {
    let axis = random_unit(rng);
    let angle = rng.random::<f64>() * 3.0;
    exp_so3_vector(&(axis * angle))
}

/// Solution of `x'' + c1 x' + c0 x = 0` for the initial data `(x0, v0)`,
/// split by the discriminant of the characteristic equation.
pub struct SecondOrderOde {
    c1: f64,
    c0: f64,
    x0: f64,
    v0: f64,
}

impl SecondOrderOde {
    pub fn new(c1: f64, c0: f64, x0: f64, v0: f64) -> Self {
        SecondOrderOde { c1, c0, x0, v0 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let disc = self.c1 * self.c1 - 4.0 * self.c0;
        if disc.abs() < 1e-12 {
            // Critical damping: (x0 + (v0 + r x0) s) e^{-r s} with r = c1/2.
            let r = self.c1 / 2.0;
            (self.x0 + (self.v0 + r * self.x0) * s) * (-r * s).exp()
        } else if disc > 0.0 {
            let sq = disc.sqrt();
            let r1 = (-self.c1 + sq) / 2.0;
            let r2 = (-self.c1 - sq) / 2.0;
            let a = (self.v0 - r2 * self.x0) / (r1 - r2);
            let b = self.x0 - a;
            a * (r1 * s).exp() + b * (r2 * s).exp()
        } else {
            let omega = (-disc).sqrt() / 2.0;
            let r = -self.c1 / 2.0;
            let a = self.x0;
            let b = (self.v0 - r * self.x0) / omega;
            (r * s).exp() * (a * (omega * s).cos() + b * (omega * s).sin())
        }
    }
}
