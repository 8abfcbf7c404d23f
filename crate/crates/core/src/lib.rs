//! Simulation and control toolkit for the kinematic car driving on a sphere.
//!
//! A car rolling without slipping on a sphere of radius `rho` admits a
//! left-invariant kinematic model on the rotation group SO(3), in close
//! analogy with the familiar planar model on SE(2). This crate implements
//! both models together with the machinery needed to track reference
//! trajectories on the sphere:
//!
//! - [`lie`]: rotation-matrix primitives (hat/vee, exponential, logarithm,
//!   Lie bracket) and SE(2) poses, quaternion-free by design.
//! - [`car`]: the planar and spherical car models, sphere geometry
//!   (effective wheelbase), moving frames, geodesic curvature, and the
//!   flatness parametrization of on-sphere curves.
//! - [`tracking`]: invariant tracking errors — the SE(2) group error in the
//!   plane and the orthodrome angle pair `(sigma, delta)` on the sphere.
//! - [`controller`]: the invariant tracking feedback. Speed feedback
//!   prescribes first-order decay of the central angle `sigma`; steering is
//!   obtained quasi-statically by solving the prescribed second-order
//!   `delta` dynamics for the geodesic curvature.
//! - [`observer`]: a local left-invariant observer on SO(3) driven only by
//!   the rear-axle position, with pole placement through the closed-form
//!   characteristic polynomial of the linearized error dynamics.
//! - [`integrate`]: structure-preserving integrators (Lie-Euler and a
//!   4th-order Munthe-Kaas scheme) that keep trajectories on the group.
//! - [`reference`]: analytic reference trajectories (great circles,
//!   latitude circles, flat-output curves) with the frame and curvature
//!   data the controller needs.
//! - [`scenario`]: configuration-driven experiment runner with CSV/JSON
//!   output, used by the `spherecar` command-line tool.
//!
//! All angles are in radians, all lengths share one unit, and every state
//! on the sphere is carried as an orthonormal frame so that simulations can
//! be validated against the group structure at any point.

pub mod car;
pub mod controller;
pub mod error;
pub mod integrate;
pub mod lie;
pub mod observer;
pub mod reference;
pub mod scenario;
pub mod tracking;

// Downstream crates (the C ABI in particular) build against the same
// linear-algebra types.
pub use nalgebra;

pub use car::{CarGeometry, ControlInput, PlanarCarState, SphericalConfig};
pub use controller::{ControllerGains, SingularityPolicy, TrackingController};
pub use error::{Error, Result};
pub use lie::{PlanarPose, Rotation3, Twist3};
pub use observer::{InvariantObserver, ObserverGains};
pub use reference::{Reference, ReferenceSample};
