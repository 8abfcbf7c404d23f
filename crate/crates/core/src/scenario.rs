//! Configuration-driven experiment runner.
//!
//! A scenario file is a TOML document (strict: unknown keys are rejected)
//! describing the car geometry, the reference trajectory, controller and
//! observer parameters, the initial condition, the integrator, and the run
//! horizon. Four experiments operate on it: open-loop replay of the
//! reference inputs (`simulate`), closed-loop tracking (`track`), observer
//! convergence along a known-input trajectory (`observe`), and the
//! certainty-equivalence interconnection (`output-feedback`, shipped as an
//! experiment without any stability claim). Runs emit one CSV row per
//! integration step and a JSON summary; identical configurations and seeds
//! produce byte-identical output.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::car::{
    chart_to_sphere, steering_for_curvature, CarGeometry, SphericalConfig,
};
use crate::controller::{ControllerGains, SingularityPolicy, TrackingController};
use crate::error::{Error, Result};
use crate::integrate::{uniform_grid, IntegratorConfig, Method, Stepper};
use crate::lie::{exp_so3, Rotation3, Twist3, Vec3};
use crate::observer::{
    characteristic_polynomial, error_eigenvalues, observation_error, place_poles,
    InvariantObserver, ObserverGains,
};
use crate::reference::{GreatCircleReference, LatitudeCircleReference, Reference};
use crate::tracking::error_angles;

const RNG_NAME: &str = "chacha8";

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub geometry: GeometrySection,
    pub reference: ReferenceSection,
    #[serde(default)]
    pub controller: Option<ControllerSection>,
    #[serde(default)]
    pub observer: Option<ObserverSection>,
    #[serde(default)]
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub integrator: IntegratorSection,
    pub run: RunSection,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub rho: f64,
    pub l: f64,
    #[serde(default)]
    pub r: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub kind: ReferenceKind,
    /// Great-circle normal axis (defaults to `e3`, the equator).
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    /// Latitude-circle colatitude in radians.
    #[serde(default)]
    pub colatitude: Option<f64>,
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
pub enum ReferenceKind {
    #[serde(rename = "great-circle")]
    GreatCircle,
    #[serde(rename = "latitude-circle")]
    LatitudeCircle,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub c_sigma: f64,
    pub c_delta1: f64,
    pub c_delta0: f64,
    #[serde(default)]
    pub eps_denominator: Option<f64>,
    #[serde(default)]
    pub eps_limit: Option<f64>,
    #[serde(default)]
    pub kappa_max: Option<f64>,
    #[serde(default)]
    pub phi_max: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverSection {
    /// Desired poles as `[re, im]` pairs; mutually exclusive with `gains`.
    #[serde(default)]
    pub poles: Option<[[f64; 2]; 3]>,
    #[serde(default)]
    pub gains: Option<GainsSection>,
    /// Initial estimate error: rotation angle about `estimate_error_axis`
    /// (a seeded random axis when omitted).
    #[serde(default)]
    pub estimate_error_angle: f64,
    #[serde(default)]
    pub estimate_error_axis: Option<[f64; 3]>,
    /// Initial observation errors beyond this angle are refused as outside
    /// the local regime the design is valid in.
    #[serde(default = "default_max_initial_error")]
    pub max_initial_error: f64,
}

fn default_max_initial_error() -> f64 {
    0.5
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub l11: f64,
    pub l22: f64,
    pub l31: f64,
    #[serde(default)]
    pub l32: f64,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Absolute start position on the sphere (normalized onto it when
    /// within 1e-6). Mutually exclusive with `chart`.
    #[serde(default)]
    pub position: Option<[f64; 3]>,
    /// Start position in the azimuthal chart about the north pole.
    #[serde(default)]
    pub chart: Option<[f64; 2]>,
    #[serde(default)]
    pub heading: f64,
    /// Body-frame offset applied to the start configuration:
    /// `g0 <- g0 * exp(offset_angle * hat(offset_axis))`.
    #[serde(default)]
    pub offset_axis: Option<[f64; 3]>,
    #[serde(default)]
    pub offset_angle: f64,
    /// Random body-frame offset of this angle about a seeded random axis.
    #[serde(default)]
    pub random_offset_angle: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_renorm")]
    pub renorm_period: usize,
}

fn default_method() -> String {
    "rkmk4".into()
}
fn default_step() -> f64 {
    1e-3
}
fn default_renorm() -> usize {
    1000
}

impl Default for IntegratorSection {
    fn default() -> Self {
        IntegratorSection {
            method: default_method(),
            step: default_step(),
            renorm_period: default_renorm(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub s_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_csv() -> String {
    "run.csv".into()
}
fn default_summary() -> String {
    "summary.json".into()
}

/// A parsed and validated scenario, plus any normalization warnings.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub config: ScenarioConfig,
    pub warnings: Vec<String>,
}

/// Parse a configuration document and validate every field.
pub fn parse_config(text: &str) -> Result<LoadedScenario> {
    let mut config: ScenarioConfig =
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    let mut warnings = Vec::new();
    validate(&mut config, &mut warnings)?;
    Ok(LoadedScenario { config, warnings })
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn validate(config: &mut ScenarioConfig, warnings: &mut Vec<String>) -> Result<()> {
    // Geometry invariants are enforced by the constructor.
    let geometry = config.geometry();
    let geometry = geometry?;

    match config.reference.kind {
        ReferenceKind::GreatCircle => {
            if config.reference.colatitude.is_some() {
                return Err(Error::ConfigValidation {
                    field: "reference.colatitude".into(),
                    reason: "only meaningful for latitude-circle references".into(),
                });
            }
            if let Some(axis) = config.reference.axis {
                let norm = Vec3::from(axis).norm();
                if norm < 1e-12 {
                    return Err(Error::ConfigValidation {
                        field: "reference.axis".into(),
                        reason: "axis must be a nonzero vector".into(),
                    });
                }
            }
        }
        ReferenceKind::LatitudeCircle => {
            if config.reference.axis.is_some() {
                return Err(Error::ConfigValidation {
                    field: "reference.axis".into(),
                    reason: "only meaningful for great-circle references".into(),
                });
            }
            let psi = config.reference.colatitude.ok_or_else(|| Error::ConfigValidation {
                field: "reference.colatitude".into(),
                reason: "required for latitude-circle references".into(),
            })?;
            LatitudeCircleReference::new(psi, config.geometry.rho)?;
        }
    }

    if let Some(c) = &config.controller {
        ControllerGains::new(c.c_sigma, c.c_delta1, c.c_delta0)?;
        build_policy(c, &geometry).validate()?;
    }

    if let Some(o) = &config.observer {
        match (&o.poles, &o.gains) {
            (Some(_), Some(_)) => {
                return Err(Error::ConfigValidation {
                    field: "observer".into(),
                    reason: "give either poles or gains, not both".into(),
                })
            }
            (None, None) => {
                return Err(Error::ConfigValidation {
                    field: "observer".into(),
                    reason: "either poles or gains is required".into(),
                })
            }
            _ => {}
        }
        observer_gains(o, config.geometry.rho)?;
        if o.max_initial_error.is_nan() || o.max_initial_error <= 0.0 {
            return Err(Error::ConfigValidation {
                field: "observer.max_initial_error".into(),
                reason: "must be positive".into(),
            });
        }
        if o.estimate_error_angle < 0.0 {
            return Err(Error::ConfigValidation {
                field: "observer.estimate_error_angle".into(),
                reason: "must be non-negative".into(),
            });
        }
    }

    if let Some(init) = &mut config.initial {
        if init.position.is_some() && init.chart.is_some() {
            return Err(Error::ConfigValidation {
                field: "initial".into(),
                reason: "give either position or chart coordinates, not both".into(),
            });
        }
        if let Some(p) = &mut init.position {
            let rho = config.geometry.rho;
            let v = Vec3::from(*p);
            let norm = v.norm();
            if (norm - rho).abs() > 1e-6 * rho.max(1.0) {
                return Err(Error::ConfigValidation {
                    field: "initial.position".into(),
                    reason: format!("|y0| = {norm} is not on the sphere of radius {rho}"),
                });
            }
            if (norm - rho).abs() > 1e-12 * rho.max(1.0) {
                warnings.push(format!(
                    "initial.position normalized onto the sphere (|y0| - rho = {:.3e})",
                    norm - rho
                ));
            }
            let normalized = v / norm * rho;
            *p = [normalized.x, normalized.y, normalized.z];
        }
        if init.position == Some([0.0, 0.0, -config.geometry.rho]) {
            return Err(Error::ConfigValidation {
                field: "initial.position".into(),
                reason: "the south pole has no heading frame".into(),
            });
        }
    }

    match config.integrator.method.as_str() {
        "rkmk4" | "lie-euler" => {}
        other => {
            return Err(Error::ConfigValidation {
                field: "integrator.method".into(),
                reason: format!("unknown method `{other}` (use rkmk4 or lie-euler)"),
            })
        }
    }
    if config.integrator.step.is_nan() || config.integrator.step <= 0.0 {
        return Err(Error::ConfigValidation {
            field: "integrator.step".into(),
            reason: format!("step must be positive (got {})", config.integrator.step),
        });
    }
    if config.run.s_end.is_nan() || config.run.s_end <= 0.0 {
        return Err(Error::ConfigValidation {
            field: "run.s_end".into(),
            reason: format!("run length must be positive (got {})", config.run.s_end),
        });
    }
    Ok(())
}

fn build_policy(section: &ControllerSection, geometry: &CarGeometry) -> SingularityPolicy {
    let mut policy = SingularityPolicy::for_geometry(geometry);
    if let Some(v) = section.eps_denominator {
        policy.eps_denominator = v;
    }
    if let Some(v) = section.eps_limit {
        policy.eps_limit = v;
    }
    if let Some(v) = section.kappa_max {
        policy.kappa_max = v;
    }
    if let Some(v) = section.phi_max {
        policy.phi_max = v;
    }
    policy
}

fn observer_gains(section: &ObserverSection, rho: f64) -> Result<ObserverGains> {
    if let Some(g) = &section.gains {
        return ObserverGains::new(g.l11, g.l22, g.l31, g.l32);
    }
    let poles = section.poles.expect("validated: poles or gains present");
    place_poles(
        &[
            Complex::new(poles[0][0], poles[0][1]),
            Complex::new(poles[1][0], poles[1][1]),
            Complex::new(poles[2][0], poles[2][1]),
        ],
        rho,
    )
}

impl ScenarioConfig {
    pub fn geometry(&self) -> Result<CarGeometry> {
        CarGeometry::new(self.geometry.l, self.geometry.r, self.geometry.rho)
    }

    pub fn reference(&self) -> Result<Box<dyn Reference>> {
        let rho = self.geometry.rho;
        Ok(match self.reference.kind {
            ReferenceKind::GreatCircle => {
                let axis = Vec3::from(self.reference.axis.unwrap_or([0.0, 0.0, 1.0]));
                Box::new(GreatCircleReference::new(&axis.normalize(), rho)?)
            }
            ReferenceKind::LatitudeCircle => Box::new(LatitudeCircleReference::new(
                self.reference.colatitude.expect("validated"),
                rho,
            )?),
        })
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig {
            method: if self.integrator.method == "lie-euler" {
                Method::LieEuler
            } else {
                Method::Rkmk4
            },
            step: self.integrator.step,
            renorm_period: self.integrator.renorm_period,
        }
    }

    pub fn controller(&self) -> Result<Option<TrackingController>> {
        let Some(section) = &self.controller else {
            return Ok(None);
        };
        let geometry = self.geometry()?;
        let gains = ControllerGains::new(section.c_sigma, section.c_delta1, section.c_delta0)?;
        let policy = build_policy(section, &geometry);
        Ok(Some(TrackingController::new(gains, policy, geometry)?))
    }
}

// ---------------------------------------------------------------------------
// Run records and summaries
// ---------------------------------------------------------------------------

/// One CSV row: station, configuration (row-major), estimate when
/// observing, position, error angles, inputs, and the observation error.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub s: f64,
    pub g: [f64; 9],
    pub g_hat: Option<[f64; 9]>,
    pub y: [f64; 3],
    pub sigma: f64,
    pub delta: f64,
    pub u: f64,
    pub phi: f64,
    pub kappa_g: f64,
    pub observer_error: Option<f64>,
}

fn rotation_entries(r: &Rotation3) -> [f64; 9] {
    let m = r.matrix();
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

#[derive(Clone, Debug, Serialize)]
pub struct ObserverRunSummary {
    /// Eigenvalues of the scheduled linearized error matrix, `[re, im]`.
    pub eigenvalues: Vec<[f64; 2]>,
    pub initial_error_angle: f64,
    pub final_error_angle: f64,
    /// First arc length after which the observation error stays below 1e-6.
    pub convergence_arclength: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub mode: String,
    /// `completed`, `controller-infeasible`, `observer-out-of-regime`, or
    /// `diverged`.
    pub status: String,
    pub error: Option<String>,
    pub seed: u64,
    pub rng: String,
    pub step: f64,
    pub s_end: f64,
    pub steps: usize,
    pub sigma_initial: Option<f64>,
    pub sigma_final: Option<f64>,
    pub delta_final: Option<f64>,
    /// Least-squares decay rate of `log sigma` along the run.
    pub sigma_decay_rate: Option<f64>,
    /// Max finite-difference defect of the prescribed second-order
    /// `delta` dynamics, over solver (non-fallback) steps.
    pub max_delta_ode_residual: Option<f64>,
    pub singular_fallback_count: u64,
    pub secant_fallback_count: u64,
    pub observer: Option<ObserverRunSummary>,
    /// Set on output-feedback runs: the interconnection carries no
    /// stability guarantee.
    pub experimental: Option<bool>,
    /// Output-feedback only: final tracking error below 1e-3.
    pub tracking_converged: Option<bool>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl RunSummary {
    fn new(mode: &str, scenario: &LoadedScenario) -> Self {
        RunSummary {
            mode: mode.into(),
            status: "completed".into(),
            error: None,
            seed: scenario.config.run.seed,
            rng: RNG_NAME.into(),
            step: scenario.config.integrator.step,
            s_end: scenario.config.run.s_end,
            steps: 0,
            sigma_initial: None,
            sigma_final: None,
            delta_final: None,
            sigma_decay_rate: None,
            max_delta_ode_residual: None,
            singular_fallback_count: 0,
            secant_fallback_count: 0,
            observer: None,
            experimental: None,
            tracking_converged: None,
            warnings: scenario.warnings.clone(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.status.as_str() {
            "completed" => 0,
            "controller-infeasible" => 2,
            "observer-out-of-regime" | "diverged" => 3,
            _ => 1,
        }
    }
}

fn status_for(error: &Error) -> &'static str {
    match error.root() {
        Error::SingularConfiguration { .. }
        | Error::DeltaRateSingular { .. }
        | Error::InfeasibleSteering { .. } => "controller-infeasible",
        Error::OutOfLocalRegime { .. } => "observer-out-of-regime",
        Error::Diverged { .. } => "diverged",
        _ => "failed",
    }
}

// ---------------------------------------------------------------------------
// Initial conditions
// ---------------------------------------------------------------------------

fn random_unit_axis(rng: &mut ChaCha8Rng) -> Vec3 {
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

fn initial_configuration(
    scenario: &LoadedScenario,
    reference: &dyn Reference,
    rng: &mut ChaCha8Rng,
) -> Result<SphericalConfig> {
    let rho = scenario.config.geometry.rho;
    let section = scenario.config.initial.clone().unwrap_or_default();
    let mut g = if let Some(p) = section.position {
        SphericalConfig::from_position(&Vec3::from(p), section.heading, rho)?
    } else if let Some(xy) = section.chart {
        let y = chart_to_sphere(&nalgebra::Vector2::new(xy[0], xy[1]), rho);
        SphericalConfig::from_position(&y, section.heading, rho)?
    } else {
        reference.sample(0.0)?.config
    };
    if section.offset_angle != 0.0 {
        let axis = Vec3::from(section.offset_axis.ok_or_else(|| Error::ConfigValidation {
            field: "initial.offset_axis".into(),
            reason: "required when offset_angle is set".into(),
        })?);
        let offset = exp_so3(&axis.normalize(), section.offset_angle)?;
        g = SphericalConfig::new(*g.rotation() * offset);
    }
    if section.random_offset_angle > 0.0 {
        let axis = random_unit_axis(rng);
        let offset = exp_so3(&axis, section.random_offset_angle)?;
        g = SphericalConfig::new(*g.rotation() * offset);
    }
    Ok(g)
}

fn initial_estimate(
    truth: &SphericalConfig,
    section: &ObserverSection,
    rng: &mut ChaCha8Rng,
) -> Result<Rotation3> {
    if section.estimate_error_angle == 0.0 {
        return Ok(*truth.rotation());
    }
    let axis = match section.estimate_error_axis {
        Some(a) => Vec3::from(a).normalize(),
        None => random_unit_axis(rng),
    };
    let err = exp_so3(&axis, section.estimate_error_angle)?;
    Ok(*truth.rotation() * err)
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Open-loop replay: the vehicle applies the reference inputs (`u = 1`,
/// the reference steering) from its initial state.
pub fn run_open_loop(scenario: &LoadedScenario) -> Result<RunOutput> {
    let reference = scenario.config.reference()?;
    let rho = scenario.config.geometry.rho;
    let geometry = scenario.config.geometry()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.run.seed);
    let g0 = initial_configuration(scenario, reference.as_ref(), &mut rng)?;

    let grid = uniform_grid(scenario.config.run.s_end, scenario.config.integrator.step);
    let mut stepper = Stepper::new(scenario.config.integrator());
    let mut summary = RunSummary::new("simulate", scenario);
    let mut records = Vec::with_capacity(grid.len());

    let rate = |s: f64, g: &Rotation3| -> Result<Twist3> {
        let sample = reference.sample(s)?;
        let _ = g;
        Ok(crate::car::body_rate(1.0, sample.kappa_g, rho))
    };

    let mut g = g0;
    let mut record_error = None;
    for (i, &s) in grid.iter().enumerate() {
        let sample = reference.sample(s)?;
        let angles = match error_angles(&g, &sample.config) {
            Ok(a) => a,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        records.push(RunRecord {
            s,
            g: rotation_entries(g.rotation()),
            g_hat: None,
            y: {
                let y = g.position(rho);
                [y.x, y.y, y.z]
            },
            sigma: angles.sigma,
            delta: angles.delta,
            u: 1.0,
            phi: steering_for_curvature(sample.kappa_g, &geometry),
            kappa_g: sample.kappa_g,
            observer_error: None,
        });
        if i + 1 < grid.len() {
            match stepper.step(g.rotation(), s, &rate, grid[i + 1] - s) {
                Ok(next) => g = SphericalConfig::new(next),
                Err(e) => {
                    record_error = Some(e);
                    break;
                }
            }
        }
    }
    finalize_summary(&mut summary, &records, record_error, None);
    Ok(RunOutput { records, summary })
}

/// Closed-loop tracking with full state feedback.
pub fn run_tracking(scenario: &LoadedScenario) -> Result<RunOutput> {
    let reference = scenario.config.reference()?;
    let rho = scenario.config.geometry.rho;
    let controller = scenario.config.controller()?.ok_or_else(|| Error::ConfigValidation {
        field: "controller".into(),
        reason: "required for tracking runs".into(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.run.seed);
    let g0 = initial_configuration(scenario, reference.as_ref(), &mut rng)?;

    let grid = uniform_grid(scenario.config.run.s_end, scenario.config.integrator.step);
    let mut stepper = Stepper::new(scenario.config.integrator());
    let mut summary = RunSummary::new("track", scenario);
    let mut records = Vec::with_capacity(grid.len());
    let mut solver_step = Vec::with_capacity(grid.len());

    let rate = |s: f64, g: &Rotation3| -> Result<Twist3> {
        let sample = reference.sample(s)?;
        let (twist, _) = controller.closed_loop_rate(&SphericalConfig::new(*g), &sample)?;
        Ok(twist)
    };

    let mut g = g0;
    let mut record_error = None;
    for (i, &s) in grid.iter().enumerate() {
        let sample = reference.sample(s)?;
        let decision = match controller.control(&g, &sample) {
            Ok(d) => d,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        if decision.fallback.is_some() {
            summary.singular_fallback_count += 1;
        }
        if decision.secant_used {
            summary.secant_fallback_count += 1;
        }
        solver_step.push(decision.fallback.is_none());
        records.push(RunRecord {
            s,
            g: rotation_entries(g.rotation()),
            g_hat: None,
            y: {
                let y = g.position(rho);
                [y.x, y.y, y.z]
            },
            sigma: decision.sigma,
            delta: decision.delta,
            u: decision.u,
            phi: decision.steering,
            kappa_g: decision.kappa_g,
            observer_error: None,
        });
        if i + 1 < grid.len() {
            match stepper.step(g.rotation(), s, &rate, grid[i + 1] - s) {
                Ok(next) => g = SphericalConfig::new(next),
                Err(e) => {
                    record_error = Some(e);
                    break;
                }
            }
        }
    }
    let gains = controller.gains();
    summary.max_delta_ode_residual = delta_ode_residual(
        &records,
        &solver_step,
        scenario.config.integrator.step,
        gains.c_delta1,
        gains.c_delta0,
    );
    finalize_summary(&mut summary, &records, record_error, None);
    Ok(RunOutput { records, summary })
}

/// Observer convergence along an open-loop (known input) truth trajectory.
pub fn run_observer(scenario: &LoadedScenario) -> Result<RunOutput> {
    let reference = scenario.config.reference()?;
    let rho = scenario.config.geometry.rho;
    let geometry = scenario.config.geometry()?;
    let section = scenario.config.observer.clone().ok_or_else(|| Error::ConfigValidation {
        field: "observer".into(),
        reason: "required for observer runs".into(),
    })?;
    let gains = observer_gains(&section, rho)?;
    let observer = InvariantObserver::new(gains, rho);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.run.seed);
    let g0 = initial_configuration(scenario, reference.as_ref(), &mut rng)?;
    let ghat0 = initial_estimate(&g0, &section, &mut rng)?;

    let (_, initial_error) = observation_error(g0.rotation(), &ghat0)?;
    if initial_error > section.max_initial_error {
        return Err(Error::OutOfLocalRegime {
            angle: initial_error,
        });
    }

    let grid = uniform_grid(scenario.config.run.s_end, scenario.config.integrator.step);
    let mut stepper = Stepper::new(scenario.config.integrator());
    let mut summary = RunSummary::new("observe", scenario);
    let mut records = Vec::with_capacity(grid.len());

    let rate = |s: f64, truth: &Rotation3, estimate: &Rotation3| -> Result<(Twist3, Twist3)> {
        let sample = reference.sample(s)?;
        let truth_rate = crate::car::body_rate(1.0, sample.kappa_g, rho);
        let y = truth.column(2) * rho;
        let observer_rate = observer.body_rate(estimate, &y, sample.kappa_g)?;
        Ok((truth_rate, observer_rate))
    };

    let mut g = g0;
    let mut ghat = ghat0;
    let mut record_error = None;
    for (i, &s) in grid.iter().enumerate() {
        let sample = reference.sample(s)?;
        let angles = error_angles(&g, &sample.config)?;
        let obs_err = match observation_error(g.rotation(), &ghat) {
            Ok((_, a)) => a,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        records.push(RunRecord {
            s,
            g: rotation_entries(g.rotation()),
            g_hat: Some(rotation_entries(&ghat)),
            y: {
                let y = g.position(rho);
                [y.x, y.y, y.z]
            },
            sigma: angles.sigma,
            delta: angles.delta,
            u: 1.0,
            phi: steering_for_curvature(sample.kappa_g, &geometry),
            kappa_g: sample.kappa_g,
            observer_error: Some(obs_err),
        });
        if i + 1 < grid.len() {
            match stepper.step_pair(g.rotation(), &ghat, s, &rate, grid[i + 1] - s) {
                Ok((gt, ge)) => {
                    g = SphericalConfig::new(gt);
                    ghat = ge;
                }
                Err(e) => {
                    record_error = Some(e);
                    break;
                }
            }
        }
    }
    summary.observer = Some(observer_summary(&records, &gains, rho, initial_error));
    finalize_summary(&mut summary, &records, record_error, None);
    Ok(RunOutput { records, summary })
}

/// Certainty-equivalence experiment: the tracking controller is fed the
/// observer estimate instead of the true configuration. No stability
/// guarantee is claimed; the summary is labeled experimental.
pub fn run_output_feedback(scenario: &LoadedScenario) -> Result<RunOutput> {
    let reference = scenario.config.reference()?;
    let rho = scenario.config.geometry.rho;
    let controller = scenario.config.controller()?.ok_or_else(|| Error::ConfigValidation {
        field: "controller".into(),
        reason: "required for output-feedback runs".into(),
    })?;
    let section = scenario.config.observer.clone().ok_or_else(|| Error::ConfigValidation {
        field: "observer".into(),
        reason: "required for output-feedback runs".into(),
    })?;
    let gains = observer_gains(&section, rho)?;
    let observer = InvariantObserver::new(gains, rho);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.config.run.seed);
    let g0 = initial_configuration(scenario, reference.as_ref(), &mut rng)?;
    let ghat0 = initial_estimate(&g0, &section, &mut rng)?;

    let (_, initial_error) = observation_error(g0.rotation(), &ghat0)?;
    if initial_error > section.max_initial_error {
        return Err(Error::OutOfLocalRegime {
            angle: initial_error,
        });
    }

    let grid = uniform_grid(scenario.config.run.s_end, scenario.config.integrator.step);
    let mut stepper = Stepper::new(scenario.config.integrator());
    let mut summary = RunSummary::new("output-feedback", scenario);
    summary.experimental = Some(true);
    let mut records = Vec::with_capacity(grid.len());

    // The estimate drives the controller; the true vehicle applies the
    // resulting inputs, and the observer copies them (scaled by u, so the
    // copy matches the actual vehicle rate) plus the error injection.
    let rate = |s: f64, truth: &Rotation3, estimate: &Rotation3| -> Result<(Twist3, Twist3)> {
        let sample = reference.sample(s)?;
        let decision = controller.control(&SphericalConfig::new(*estimate), &sample)?;
        let truth_rate = crate::car::body_rate(decision.u, decision.kappa_g, rho);
        let y = truth.column(2) * rho;
        let b = crate::observer::measurement_function(estimate, &y, rho)?;
        let injection = crate::observer::observer_gain_values(&b, &gains, decision.kappa_g);
        let observer_rate = Twist3::from_vector(truth_rate.vector() + injection);
        let _ = &observer;
        Ok((truth_rate, observer_rate))
    };

    let mut g = g0;
    let mut ghat = ghat0;
    let mut record_error = None;
    for (i, &s) in grid.iter().enumerate() {
        let sample = reference.sample(s)?;
        let true_angles = match error_angles(&g, &sample.config) {
            Ok(a) => a,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        if true_angles.sigma > std::f64::consts::FRAC_PI_2 {
            record_error = Some(
                Error::Diverged {
                    sigma: true_angles.sigma,
                }
                .at_station(s),
            );
            break;
        }
        let decision = match controller.control(&SphericalConfig::new(ghat), &sample) {
            Ok(d) => d,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        if decision.fallback.is_some() {
            summary.singular_fallback_count += 1;
        }
        if decision.secant_used {
            summary.secant_fallback_count += 1;
        }
        let obs_err = match observation_error(g.rotation(), &ghat) {
            Ok((_, a)) => a,
            Err(e) => {
                record_error = Some(e.at_station(s));
                break;
            }
        };
        records.push(RunRecord {
            s,
            g: rotation_entries(g.rotation()),
            g_hat: Some(rotation_entries(&ghat)),
            y: {
                let y = g.position(rho);
                [y.x, y.y, y.z]
            },
            sigma: true_angles.sigma,
            delta: true_angles.delta,
            u: decision.u,
            phi: decision.steering,
            kappa_g: decision.kappa_g,
            observer_error: Some(obs_err),
        });
        if i + 1 < grid.len() {
            match stepper.step_pair(g.rotation(), &ghat, s, &rate, grid[i + 1] - s) {
                Ok((gt, ge)) => {
                    g = SphericalConfig::new(gt);
                    ghat = ge;
                }
                Err(e) => {
                    record_error = Some(e);
                    break;
                }
            }
        }
    }
    summary.observer = Some(observer_summary(&records, &gains, rho, initial_error));
    summary.tracking_converged = records.last().map(|r| r.sigma < 1e-3);
    finalize_summary(&mut summary, &records, record_error, None);
    Ok(RunOutput { records, summary })
}

fn observer_summary(
    records: &[RunRecord],
    gains: &ObserverGains,
    rho: f64,
    initial_error: f64,
) -> ObserverRunSummary {
    let eigenvalues = error_eigenvalues(gains, rho)
        .iter()
        .map(|c| [c.re, c.im])
        .collect();
    let final_error = records
        .last()
        .and_then(|r| r.observer_error)
        .unwrap_or(initial_error);
    // First station after which the error stays below 1e-6.
    let mut convergence = None;
    let mut last_above = None;
    for (i, r) in records.iter().enumerate() {
        if r.observer_error.unwrap_or(f64::INFINITY) >= 1e-6 {
            last_above = Some(i);
        }
    }
    match last_above {
        None => {
            if let Some(first) = records.first() {
                convergence = Some(first.s);
            }
        }
        Some(i) => {
            if i + 1 < records.len() {
                convergence = Some(records[i + 1].s);
            }
        }
    }
    ObserverRunSummary {
        eigenvalues,
        initial_error_angle: initial_error,
        final_error_angle: final_error,
        convergence_arclength: convergence,
    }
}

fn delta_ode_residual(
    records: &[RunRecord],
    solver_step: &[bool],
    h: f64,
    c_delta1: f64,
    c_delta0: f64,
) -> Option<f64> {
    if records.len() < 3 {
        return None;
    }
    let mut max_residual: Option<f64> = None;
    for i in 1..records.len() - 1 {
        if !(solver_step[i - 1] && solver_step[i] && solver_step[i + 1]) {
            continue;
        }
        let (dm, d0, dp) = (records[i - 1].delta, records[i].delta, records[i + 1].delta);
        // Skip wrap-arounds of the angle.
        if (dp - d0).abs() > 1.0 || (d0 - dm).abs() > 1.0 {
            continue;
        }
        let first = (dp - dm) / (2.0 * h);
        let second = (dp - 2.0 * d0 + dm) / (h * h);
        let residual = (second + c_delta1 * first + c_delta0 * d0).abs();
        max_residual = Some(max_residual.map_or(residual, |m: f64| m.max(residual)));
    }
    max_residual
}

fn sigma_decay_fit(records: &[RunRecord]) -> Option<f64> {
    // Least squares of log(sigma) against s over usable samples.
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.sigma > 1e-14)
        .map(|r| (r.s, r.sigma.ln()))
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some(-(n * sxy - sx * sy) / denom)
}

fn finalize_summary(
    summary: &mut RunSummary,
    records: &[RunRecord],
    error: Option<Error>,
    _unused: Option<()>,
) {
    summary.steps = records.len().saturating_sub(1);
    summary.sigma_initial = records.first().map(|r| r.sigma);
    summary.sigma_final = records.last().map(|r| r.sigma);
    summary.delta_final = records.last().map(|r| r.delta);
    summary.sigma_decay_rate = sigma_decay_fit(records);
    if let Some(e) = error {
        summary.status = status_for(&e).into();
        summary.error = Some(e.to_string());
    }
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

/// Format a float with 17 significant digits, enough for a lossless
/// round trip through decimal text.
fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write the CSV and JSON outputs into `out_dir`, returning their paths.
pub fn emit_outputs(
    output: &RunOutput,
    scenario: &LoadedScenario,
    out_dir: &Path,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let csv_path = out_dir.join(&scenario.config.run.csv);
    let summary_path = out_dir.join(&scenario.config.run.summary);

    let observing = output.records.first().map_or(
        output.summary.mode == "observe" || output.summary.mode == "output-feedback",
        |r| r.g_hat.is_some(),
    );
    let mut text = String::new();
    text.push_str("s_d");
    for i in 1..=3 {
        for j in 1..=3 {
            text.push_str(&format!(",g{i}{j}"));
        }
    }
    if observing {
        for i in 1..=3 {
            for j in 1..=3 {
                text.push_str(&format!(",ghat{i}{j}"));
            }
        }
    }
    text.push_str(",y1,y2,y3,sigma,delta,u,phi,kappa_g");
    if observing {
        text.push_str(",observer_error");
    }
    text.push('\n');
    for r in &output.records {
        text.push_str(&fmt17(r.s));
        for v in r.g {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        if observing {
            for v in r.g_hat.unwrap_or([f64::NAN; 9]) {
                text.push(',');
                text.push_str(&fmt17(v));
            }
        }
        for v in r.y {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        for v in [r.sigma, r.delta, r.u, r.phi, r.kappa_g] {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        if observing {
            text.push(',');
            text.push_str(&fmt17(r.observer_error.unwrap_or(f64::NAN)));
        }
        text.push('\n');
    }
    write_file(&csv_path, text.as_bytes())?;

    let json = serde_json::to_string_pretty(&output.summary)
        .expect("summary serialization cannot fail");
    write_file(&summary_path, json.as_bytes())?;
    Ok((csv_path, summary_path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

// ---------------------------------------------------------------------------
// Utility reports (gains and flatness subcommands)
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct GainsReport {
    l11: f64,
    l22: f64,
    l31: f64,
    l32: f64,
    characteristic_polynomial: [f64; 3],
    eigenvalues: Vec<[f64; 2]>,
}

/// Pole-placement report for the configured observer block.
pub fn gains_report(scenario: &LoadedScenario) -> Result<String> {
    let section = scenario.config.observer.clone().ok_or_else(|| Error::ConfigValidation {
        field: "observer".into(),
        reason: "required for the gains report".into(),
    })?;
    let rho = scenario.config.geometry.rho;
    let gains = observer_gains(&section, rho)?;
    let (a2, a1, a0) = characteristic_polynomial(&gains, rho);
    let report = GainsReport {
        l11: gains.l11,
        l22: gains.l22,
        l31: gains.l31,
        l32: gains.l32,
        characteristic_polynomial: [a2, a1, a0],
        eigenvalues: error_eigenvalues(&gains, rho)
            .iter()
            .map(|c| [c.re, c.im])
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&report).expect("report serialization cannot fail"))
}

/// Flat-output table: the reference curve with the states and inputs
/// recovered from it, one CSV row per station.
pub fn flatness_table(scenario: &LoadedScenario) -> Result<String> {
    let reference = scenario.config.reference()?;
    let geometry = scenario.config.geometry()?;
    let rho = scenario.config.geometry.rho;
    let grid = uniform_grid(scenario.config.run.s_end, scenario.config.integrator.step);
    let mut text = String::from(
        "s_d,y1,y2,y3,g11,g12,g13,g21,g22,g23,g31,g32,g33,v_d,kappa_g,kappa_g_prime,phi\n",
    );
    for &s in &grid {
        let sample = reference.sample(s)?;
        let y = sample.config.position(rho);
        text.push_str(&fmt17(s));
        for v in [y.x, y.y, y.z] {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        for v in rotation_entries(sample.config.rotation()) {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        for v in [
            sample.speed.unwrap_or(1.0),
            sample.kappa_g,
            sample.kappa_g_prime,
            steering_for_curvature(sample.kappa_g, &geometry),
        ] {
            text.push(',');
            text.push_str(&fmt17(v));
        }
        text.push('\n');
    }
    Ok(text)
}
