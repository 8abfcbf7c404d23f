//! C ABI for the spherecar toolkit.
//!
//! Every function returns an [`ScStatus`]; outputs go through pointers.
//! Scenario and tracker objects are opaque handles created and destroyed
//! by the library. A failing call stores a message retrievable with
//! [`sc_last_error_message`] (thread-local, valid until the next failing
//! call on the same thread). The C header is generated into
//! `include/spherecar.h` at build time.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::path::Path;

use spherecar::car::{geodesic_curvature, steering_for_curvature, CarGeometry, SphericalConfig};
use spherecar::lie::{Mat3, Rotation3, Vec3};
use spherecar::observer::place_poles;
use spherecar::reference::Reference;
use spherecar::scenario::{
    emit_outputs, load_config, parse_config, run_observer, run_open_loop, run_output_feedback,
    run_tracking, LoadedScenario,
};
use spherecar::tracking::error_angles;
use spherecar::Error;

/// Result of every API call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    /// Controller evaluated at a configuration its algebra cannot handle.
    Singular = 4,
    /// No admissible steering solution within the saturation bounds.
    Infeasible = 5,
    /// Observer error outside the local validity regime.
    OutOfRegime = 6,
    /// Tracking error grew beyond recovery.
    Diverged = 7,
    IoError = 8,
    Utf8Error = 9,
    InternalError = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(error: &Error) -> ScStatus {
    match error.root() {
        Error::ConfigParse(_) => ScStatus::ParseError,
        Error::SingularConfiguration { .. } | Error::DeltaRateSingular { .. } => ScStatus::Singular,
        Error::InfeasibleSteering { .. } => ScStatus::Infeasible,
        Error::OutOfLocalRegime { .. } => ScStatus::OutOfRegime,
        Error::Diverged { .. } => ScStatus::Diverged,
        Error::Io { .. } => ScStatus::IoError,
        _ => ScStatus::InvalidArgument,
    }
}

fn fail(error: &Error) -> ScStatus {
    set_error(&error.to_string());
    status_of(error)
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call from the same thread.
#[no_mangle]
pub extern "C" fn sc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// ---------------------------------------------------------------------------
// Geometry and plain-value utilities
// ---------------------------------------------------------------------------

/// Car dimensions and the sphere radius.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ScGeometry {
    pub wheelbase: f64,
    pub wheel_radius: f64,
    pub sphere_radius: f64,
}

impl ScGeometry {
    fn build(&self) -> Result<CarGeometry, Error> {
        CarGeometry::new(self.wheelbase, self.wheel_radius, self.sphere_radius)
    }
}

/// Central angle and effective wheelbase of the car on its sphere.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn sc_effective_wheelbase(
    geometry: *const ScGeometry,
    central_angle: *mut f64,
    effective_wheelbase: *mut f64,
) -> ScStatus {
    let Some(geometry) = geometry.as_ref() else {
        return ScStatus::NullPointer;
    };
    match geometry.build() {
        Ok(g) => {
            if let Some(out) = central_angle.as_mut() {
                *out = g.central_angle();
            }
            if let Some(out) = effective_wheelbase.as_mut() {
                *out = g.effective_wheelbase();
            }
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Geodesic curvature commanded by a steering angle.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn sc_geodesic_curvature(
    geometry: *const ScGeometry,
    steering: f64,
    kappa_g: *mut f64,
) -> ScStatus {
    let (Some(geometry), Some(out)) = (geometry.as_ref(), kappa_g.as_mut()) else {
        return ScStatus::NullPointer;
    };
    let built = match geometry.build() {
        Ok(g) => g,
        Err(e) => return fail(&e),
    };
    match geodesic_curvature(steering, &built) {
        Ok(k) => {
            *out = k;
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Steering angle realizing a geodesic curvature.
///
/// # Safety
/// All pointers must be valid for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn sc_steering_for_curvature(
    geometry: *const ScGeometry,
    kappa_g: f64,
    steering: *mut f64,
) -> ScStatus {
    let (Some(geometry), Some(out)) = (geometry.as_ref(), steering.as_mut()) else {
        return ScStatus::NullPointer;
    };
    match geometry.build() {
        Ok(g) => {
            *out = steering_for_curvature(kappa_g, &g);
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Observer gain coefficients (the skew pair is scheduled at run time).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ScObserverGains {
    pub l11: f64,
    pub l22: f64,
    pub l31: f64,
    pub l32: f64,
}

/// Assign the observer poles (given as parallel real/imaginary arrays of
/// length three; conjugate pairs, negative real parts, at least one real).
///
/// # Safety
/// `pole_re`, `pole_im` must point to three readable doubles and `gains`
/// to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sc_place_poles(
    sphere_radius: f64,
    pole_re: *const f64,
    pole_im: *const f64,
    gains: *mut ScObserverGains,
) -> ScStatus {
    if pole_re.is_null() || pole_im.is_null() || gains.is_null() {
        return ScStatus::NullPointer;
    }
    let re = std::slice::from_raw_parts(pole_re, 3);
    let im = std::slice::from_raw_parts(pole_im, 3);
    let poles = [
        nalgebra_complex(re[0], im[0]),
        nalgebra_complex(re[1], im[1]),
        nalgebra_complex(re[2], im[2]),
    ];
    match place_poles(&poles, sphere_radius) {
        Ok(g) => {
            *gains = ScObserverGains {
                l11: g.l11,
                l22: g.l22,
                l31: g.l31,
                l32: g.l32,
            };
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

fn nalgebra_complex(re: f64, im: f64) -> spherecar::nalgebra::Complex<f64> {
    spherecar::nalgebra::Complex::new(re, im)
}

/// Invariant tracking-error angles between two configurations, passed as
/// row-major 3x3 rotation matrices.
///
/// # Safety
/// `config` and `reference` must point to nine readable doubles each;
/// `sigma` and `delta` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sc_error_angles(
    config: *const f64,
    reference: *const f64,
    sigma: *mut f64,
    delta: *mut f64,
) -> ScStatus {
    if config.is_null() || reference.is_null() || sigma.is_null() || delta.is_null() {
        return ScStatus::NullPointer;
    }
    let g = match rotation_from_ptr(config) {
        Ok(g) => g,
        Err(e) => return fail(&e),
    };
    let gd = match rotation_from_ptr(reference) {
        Ok(g) => g,
        Err(e) => return fail(&e),
    };
    match error_angles(&SphericalConfig::new(g), &SphericalConfig::new(gd)) {
        Ok(angles) => {
            *sigma = angles.sigma;
            *delta = angles.delta;
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

unsafe fn rotation_from_ptr(entries: *const f64) -> Result<Rotation3, Error> {
    let e = std::slice::from_raw_parts(entries, 9);
    Rotation3::from_matrix(Mat3::new(
        e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7], e[8],
    ))
}

// ---------------------------------------------------------------------------
// Scenario handle
// ---------------------------------------------------------------------------

/// Opaque parsed-and-validated scenario configuration.
pub struct ScScenario {
    inner: LoadedScenario,
}

/// Experiment selector for [`sc_scenario_run`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScRunMode {
    Simulate = 0,
    Track = 1,
    Observe = 2,
    OutputFeedback = 3,
}

unsafe fn read_c_path<'a>(path: *const c_char) -> Result<&'a str, ScStatus> {
    if path.is_null() {
        return Err(ScStatus::NullPointer);
    }
    CStr::from_ptr(path).to_str().map_err(|_| {
        set_error("path is not valid UTF-8");
        ScStatus::Utf8Error
    })
}

/// Load a scenario configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable; a returned
/// handle must be released with [`sc_scenario_free`].
#[no_mangle]
pub unsafe extern "C" fn sc_scenario_load(
    path: *const c_char,
    out: *mut *mut ScScenario,
) -> ScStatus {
    let Some(out) = out.as_mut() else {
        return ScStatus::NullPointer;
    };
    let path = match read_c_path(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_config(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(ScScenario { inner }));
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Parse a scenario configuration from TOML text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable; a returned
/// handle must be released with [`sc_scenario_free`].
#[no_mangle]
pub unsafe extern "C" fn sc_scenario_parse(
    text: *const c_char,
    out: *mut *mut ScScenario,
) -> ScStatus {
    let Some(out) = out.as_mut() else {
        return ScStatus::NullPointer;
    };
    let text = match read_c_path(text) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match parse_config(text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(ScScenario { inner }));
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a scenario handle. Accepts NULL.
///
/// # Safety
/// `scenario` must come from `sc_scenario_load`/`sc_scenario_parse` and
/// must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_scenario_free(scenario: *mut ScScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Run an experiment and write `run.csv` and `summary.json` (names are
/// taken from the configuration) into `out_dir`. A run that terminates
/// early still writes its partial records; the returned status reflects
/// the terminal state.
///
/// # Safety
/// `scenario` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sc_scenario_run(
    scenario: *const ScScenario,
    mode: ScRunMode,
    out_dir: *const c_char,
) -> ScStatus {
    let Some(scenario) = scenario.as_ref() else {
        return ScStatus::NullPointer;
    };
    let out_dir = match read_c_path(out_dir) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let result = match mode {
        ScRunMode::Simulate => run_open_loop(&scenario.inner),
        ScRunMode::Track => run_tracking(&scenario.inner),
        ScRunMode::Observe => run_observer(&scenario.inner),
        ScRunMode::OutputFeedback => run_output_feedback(&scenario.inner),
    };
    let output = match result {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    if let Err(e) = emit_outputs(&output, &scenario.inner, Path::new(out_dir)) {
        return fail(&e);
    }
    match output.summary.status.as_str() {
        "completed" => ScStatus::Ok,
        "controller-infeasible" => {
            set_error(output.summary.error.as_deref().unwrap_or("infeasible"));
            ScStatus::Infeasible
        }
        "observer-out-of-regime" => {
            set_error(output.summary.error.as_deref().unwrap_or("out of regime"));
            ScStatus::OutOfRegime
        }
        "diverged" => {
            set_error(output.summary.error.as_deref().unwrap_or("diverged"));
            ScStatus::Diverged
        }
        other => {
            set_error(output.summary.error.as_deref().unwrap_or(other));
            ScStatus::InternalError
        }
    }
}

// ---------------------------------------------------------------------------
// Incremental tracking handle
// ---------------------------------------------------------------------------

/// Opaque closed-loop tracking session that can be stepped incrementally.
pub struct ScTracker {
    controller: spherecar::controller::TrackingController,
    reference: Box<dyn Reference>,
    stepper: spherecar::integrate::Stepper,
    config: SphericalConfig,
    s: f64,
    step: f64,
    rho: f64,
}

/// Snapshot of a tracking session.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct ScTrackerState {
    /// Reference arc length.
    pub s: f64,
    /// Configuration, row-major.
    pub g: [f64; 9],
    /// Rear-axle position.
    pub y: [f64; 3],
    pub sigma: f64,
    pub delta: f64,
    pub u: f64,
    pub phi: f64,
    pub kappa_g: f64,
}

/// Create a tracking session from a scenario (controller block required).
///
/// # Safety
/// `scenario` must be a live handle and `out` writable; a returned handle
/// must be released with [`sc_tracker_free`].
#[no_mangle]
pub unsafe extern "C" fn sc_tracker_new(
    scenario: *const ScScenario,
    out: *mut *mut ScTracker,
) -> ScStatus {
    let (Some(scenario), Some(out)) = (scenario.as_ref(), out.as_mut()) else {
        return ScStatus::NullPointer;
    };
    let build = || -> Result<ScTracker, Error> {
        let loaded = &scenario.inner;
        let controller = loaded.config.controller()?.ok_or_else(|| Error::ConfigValidation {
            field: "controller".into(),
            reason: "required for tracking sessions".into(),
        })?;
        let reference = loaded.config.reference()?;
        let config = reference.sample(0.0)?.config;
        Ok(ScTracker {
            controller,
            reference,
            stepper: spherecar::integrate::Stepper::new(loaded.config.integrator()),
            config,
            s: 0.0,
            step: loaded.config.integrator.step,
            rho: loaded.config.geometry.rho,
        })
    };
    match build() {
        Ok(mut tracker) => {
            // Apply the configured initial offset the same way the batch
            // runner does, minus the random part (sessions are driven by
            // the caller, who can set any start through the config).
            if let Some(init) = &scenario.inner.config.initial {
                if let (Some(axis), angle) = (init.offset_axis, init.offset_angle) {
                    if angle != 0.0 {
                        let axis = Vec3::new(axis[0], axis[1], axis[2]).normalize();
                        match spherecar::lie::exp_so3(&axis, angle) {
                            Ok(offset) => {
                                tracker.config = SphericalConfig::new(
                                    *tracker.config.rotation() * offset,
                                );
                            }
                            Err(e) => return fail(&e),
                        }
                    }
                }
            }
            *out = Box::into_raw(Box::new(tracker));
            ScStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Advance the session by `steps` integrator steps.
///
/// # Safety
/// `tracker` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sc_tracker_step(tracker: *mut ScTracker, steps: usize) -> ScStatus {
    let Some(t) = tracker.as_mut() else {
        return ScStatus::NullPointer;
    };
    for _ in 0..steps {
        let rate = |s: f64, g: &Rotation3| -> Result<spherecar::lie::Twist3, Error> {
            let sample = t.reference.sample(s)?;
            let (twist, _) = t
                .controller
                .closed_loop_rate(&SphericalConfig::new(*g), &sample)?;
            Ok(twist)
        };
        match t.stepper.step(t.config.rotation(), t.s, &rate, t.step) {
            Ok(next) => {
                t.config = SphericalConfig::new(next);
                t.s += t.step;
            }
            Err(e) => return fail(&e.at_station(t.s)),
        }
    }
    ScStatus::Ok
}

/// Read the current state and control diagnostics of a session.
///
/// # Safety
/// `tracker` must be a live handle and `state` writable.
#[no_mangle]
pub unsafe extern "C" fn sc_tracker_state(
    tracker: *const ScTracker,
    state: *mut ScTrackerState,
) -> ScStatus {
    let (Some(t), Some(state)) = (tracker.as_ref(), state.as_mut()) else {
        return ScStatus::NullPointer;
    };
    let sample = match t.reference.sample(t.s) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let decision = match t.controller.control(&t.config, &sample) {
        Ok(d) => d,
        Err(e) => return fail(&e.at_station(t.s)),
    };
    let m = t.config.rotation().matrix();
    let y = t.config.position(t.rho);
    *state = ScTrackerState {
        s: t.s,
        g: [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ],
        y: [y.x, y.y, y.z],
        sigma: decision.sigma,
        delta: decision.delta,
        u: decision.u,
        phi: decision.steering,
        kappa_g: decision.kappa_g,
    };
    ScStatus::Ok
}

/// Release a tracking session. Accepts NULL.
///
/// # Safety
/// `tracker` must come from `sc_tracker_new` and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sc_tracker_free(tracker: *mut ScTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}
