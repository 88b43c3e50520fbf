//! Experiment configuration: a single JSON document, validated up front.

use std::path::PathBuf;

use fksmc_core::fixtures::{two_state_proposal, uniform_proposal, TWO_STATE_BETA, TWO_STATE_GAMMA_FLOOR, TWO_STATE_LOG_WEIGHTS};
use fksmc_core::lab::{shifted_floor_initial, ContinuousSetup, TheoryParams};
use fksmc_core::{DiscreteMeasure, IncrementDistribution, InitialDistribution, LogTarget, Matrix, TemperedFamily, TemperingSchedule};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.to_string() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BiasDecay,
    NScaling,
    DriftCheck,
    Counterexample,
    Lemma1Audit,
    Run,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// The shipped two-state fixture.
    TwoState,
    Finite { log_weights: Vec<f64> },
    Gaussian { mean: Vec<f64>, sd: f64 },
    GaussianMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, sds: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Linear,
    Smoothstep,
    PiecewiseLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSpec {
    pub name: ScheduleName,
    pub gamma_floor: f64,
    /// Declared Lipschitz constant; the schedule's own constant when absent.
    pub lipschitz: Option<f64>,
    /// `(u, gamma)` knots for `piecewise-linear`.
    pub knots: Option<Vec<(f64, f64)>>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec { name: ScheduleName::Linear, gamma_floor: TWO_STATE_GAMMA_FLOOR, lipschitz: None, knots: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncrementName {
    Gaussian,
    UniformBall,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementSpec {
    pub name: IncrementName,
    /// Standard deviation for `gaussian`, radius for `uniform-ball`.
    pub scale: f64,
}

impl Default for IncrementSpec {
    fn default() -> Self {
        IncrementSpec { name: IncrementName::Gaussian, scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub target: TargetSpec,
    pub schedule: ScheduleSpec,
    /// Continuous targets only.
    pub increment: IncrementSpec,
    /// Symmetric proposal matrix for finite targets; uniform when absent
    /// (the fixture's own proposal for `two-state`).
    pub proposal: Option<Vec<Vec<f64>>>,
    pub beta: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            target: TargetSpec::TwoState,
            schedule: ScheduleSpec::default(),
            increment: IncrementSpec::default(),
            proposal: None,
            beta: TWO_STATE_BETA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    /// `pi_{gamma_floor}`, translated by `shift` on continuous targets.
    TemperedFloor {
        #[serde(default)]
        shift: Vec<f64>,
    },
    /// A single finite state.
    State { index: usize },
    /// A finite law given by (unnormalized) weights.
    Weights { weights: Vec<f64> },
    /// A single point of a continuous space.
    Point { point: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TestFunctionSpec {
    Indicator { state: usize },
    Coordinate { index: usize },
    Constant { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grids {
    pub n: Vec<usize>,
    pub particles: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids { n: vec![5, 10, 20, 40], particles: vec![1000] }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSpec {
    /// `n` of the sweep over `N`; first `n` of the grid when absent.
    pub n_fixed: Option<usize>,
    /// `N` of the sweep over `n`; largest `N` of the grid when absent.
    pub particles_fixed: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftInputs {
    pub lambda: f64,
    pub level: f64,
    pub b: f64,
    pub epsilon: f64,
    /// Minorizing measure weights; a point mass at the first state when absent.
    pub nu: Option<Vec<f64>>,
    /// Shells of the continuous drift probe.
    pub radii: Vec<f64>,
    pub proposals: usize,
}

impl Default for DriftInputs {
    fn default() -> Self {
        DriftInputs { lambda: 0.95, level: 1.0, b: 0.2, epsilon: 0.9, nu: None, radii: vec![2.0, 4.0, 6.0], proposals: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterexampleSpec {
    pub epsilon: f64,
    pub delta: f64,
}

impl Default for CounterexampleSpec {
    fn default() -> Self {
        CounterexampleSpec { epsilon: 1.0, delta: 0.9 }
    }
}

fn default_replicates() -> usize {
    200
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("fksmc-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
    /// State 0 on finite targets, `tempered-floor` otherwise.
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    /// Indicator of state 0 on finite targets, first coordinate otherwise.
    #[serde(default)]
    pub test_function: Option<TestFunctionSpec>,
    #[serde(default)]
    pub grids: Grids,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub theory: TheoryParams,
    /// Worker threads; available parallelism when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scaling: ScalingSpec,
    #[serde(default)]
    pub drift: DriftInputs,
    #[serde(default)]
    pub counterexample: CounterexampleSpec,
}

/// A config together with its resolved model and hypothesis warnings.
pub struct Validated {
    pub config: ExperimentConfig,
    pub model: ResolvedModel,
    pub warnings: Vec<String>,
}

pub enum ResolvedModel {
    Finite { family: TemperedFamily<usize>, proposal: Matrix, mu: DiscreteMeasure },
    Continuous { setup: ContinuousSetup, dim: usize, target_mean: Vec<f64> },
}

impl ResolvedModel {
    pub fn gamma_floor(&self) -> f64 {
        match self {
            ResolvedModel::Finite { family, .. } => family.gamma_floor(),
            ResolvedModel::Continuous { setup, .. } => setup.family.gamma_floor(),
        }
    }
}

/// Parses and validates `text`. Every error carries the path of the offending key.
pub fn parse_config(text: &str) -> Result<Validated, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = match e.path().to_string() {
            p if p == "." || p == "?" => "(root)".to_string(),
            p => p,
        };
        invalid(&path, e.into_inner())
    })?;
    validate(config)
}

fn schedule(spec: &ScheduleSpec) -> Result<TemperingSchedule, ConfigError> {
    let built = match spec.name {
        ScheduleName::Linear => TemperingSchedule::linear(spec.gamma_floor),
        ScheduleName::Smoothstep => TemperingSchedule::smoothstep(spec.gamma_floor),
        ScheduleName::PiecewiseLinear => {
            let knots = spec.knots.clone().ok_or_else(|| invalid("model.schedule.knots", "required for piecewise-linear"))?;
            if knots.first().is_some_and(|k| k.1 != spec.gamma_floor) {
                return Err(invalid("model.schedule.knots", "first knot must sit at gamma_floor"));
            }
            TemperingSchedule::piecewise_linear(knots)
        }
    }
    .map_err(|e| invalid("model.schedule", e))?;
    match spec.lipschitz {
        Some(c) => built.with_lipschitz(c).map_err(|e| invalid("model.schedule.lipschitz", e)),
        None => Ok(built),
    }
}

fn finite_model(config: &ExperimentConfig, log_weights: Vec<f64>, fixture: bool) -> Result<ResolvedModel, ConfigError> {
    let m = log_weights.len();
    let family = TemperedFamily::new(LogTarget::finite(log_weights).map_err(|e| invalid("model.target", e))?, schedule(&config.model.schedule)?);
    let proposal = match &config.model.proposal {
        Some(rows) => Matrix::from_rows(rows.clone()).map_err(|e| invalid("model.proposal", e))?,
        None if fixture => two_state_proposal(),
        None => uniform_proposal(m),
    };
    if proposal.rows() != m || !proposal.is_square() {
        return Err(invalid("model.proposal", format!("must be {m}x{m}")));
    }
    let mu = match config.initial.as_ref().unwrap_or(&InitialSpec::State { index: 0 }) {
        InitialSpec::TemperedFloor { shift } => {
            if !shift.is_empty() {
                return Err(invalid("initial.shift", "finite targets cannot be shifted"));
            }
            family.tempered_measure(family.gamma_floor(), m).map_err(|e| invalid("initial", e))?
        }
        InitialSpec::State { index } => {
            if *index >= m {
                return Err(invalid("initial.index", format!("state {index} outside 0..{m}")));
            }
            DiscreteMeasure::dirac(m, *index)
        }
        InitialSpec::Weights { weights } => {
            if weights.len() != m {
                return Err(invalid("initial.weights", format!("need {m} weights")));
            }
            DiscreteMeasure::from_unnormalized(weights.clone()).map_err(|e| invalid("initial.weights", e))?
        }
        InitialSpec::Point { .. } => return Err(invalid("initial.kind", "`point` needs a continuous target")),
    };
    // Builds one kernel to surface asymmetric or non-stochastic proposals now.
    fksmc_core::rwm::metropolis_kernel_family(&family, 1, &proposal).map_err(|e| invalid("model.proposal", e))?;
    Ok(ResolvedModel::Finite { family, proposal, mu })
}

fn continuous_model(config: &ExperimentConfig, target: LogTarget<Vec<f64>>, dim: usize, target_mean: Vec<f64>) -> Result<ResolvedModel, ConfigError> {
    let family = TemperedFamily::new(target, schedule(&config.model.schedule)?);
    let inc = &config.model.increment;
    let increment = match inc.name {
        IncrementName::Gaussian => IncrementDistribution::gaussian(inc.scale),
        IncrementName::UniformBall => IncrementDistribution::uniform_ball(inc.scale),
    }
    .map_err(|e| invalid("model.increment.scale", e))?;
    let floor = InitialSpec::TemperedFloor { shift: Vec::new() };
    let initial = match config.initial.as_ref().unwrap_or(&floor) {
        InitialSpec::TemperedFloor { shift } => {
            let shift = if shift.is_empty() { vec![0.0; dim] } else { shift.clone() };
            if shift.len() != dim {
                return Err(invalid("initial.shift", format!("need {dim} coordinates")));
            }
            shifted_floor_initial(&family, shift).map_err(|e| invalid("initial", e))?
        }
        InitialSpec::Point { point } => {
            if point.len() != dim {
                return Err(invalid("initial.point", format!("need {dim} coordinates")));
            }
            InitialDistribution::dirac(point.clone())
        }
        InitialSpec::State { .. } | InitialSpec::Weights { .. } => {
            return Err(invalid("initial.kind", "finite initial laws need a finite target"));
        }
    };
    Ok(ResolvedModel::Continuous { setup: ContinuousSetup { family, increment, initial }, dim, target_mean })
}

fn validate(config: ExperimentConfig) -> Result<Validated, ConfigError> {
    if config.grids.n.is_empty() {
        return Err(invalid("grids.n", "grid is empty"));
    }
    if config.grids.particles.is_empty() {
        return Err(invalid("grids.particles", "grid is empty"));
    }
    if config.grids.n.contains(&0) {
        return Err(invalid("grids.n", "every n must be >= 1"));
    }
    if config.grids.particles.contains(&0) {
        return Err(invalid("grids.particles", "every N must be >= 1"));
    }
    if config.replicates == 0 {
        return Err(invalid("replicates", "must be >= 1"));
    }
    if config.workers == Some(0) {
        return Err(invalid("workers", "must be >= 1"));
    }
    config.theory.validate().map_err(|e| invalid("theory", e))?;
    if !(config.model.beta > 0.0 && config.model.beta < 1.0) {
        return Err(invalid("model.beta", format!("beta = {} outside (0, 1)", config.model.beta)));
    }

    let model = match &config.model.target {
        TargetSpec::TwoState => finite_model(&config, TWO_STATE_LOG_WEIGHTS.to_vec(), true)?,
        TargetSpec::Finite { log_weights } => finite_model(&config, log_weights.clone(), false)?,
        TargetSpec::Gaussian { mean, sd } => {
            let t = LogTarget::gaussian(mean.clone(), *sd).map_err(|e| invalid("model.target", e))?;
            continuous_model(&config, t, mean.len(), mean.clone())?
        }
        TargetSpec::GaussianMixture { weights, means, sds } => {
            let t = LogTarget::gaussian_mixture(weights.clone(), means.clone(), sds.clone()).map_err(|e| invalid("model.target", e))?;
            let d = means[0].len();
            let mass: Vec<f64> = weights.iter().zip(sds).map(|(w, s)| w * s.powi(d as i32)).collect();
            let z: f64 = mass.iter().sum();
            let mean = (0..d).map(|j| mass.iter().zip(means).map(|(p, m)| p * m[j]).sum::<f64>() / z).collect();
            continuous_model(&config, t, d, mean)?
        }
    };

    match (&config.test_function, &model) {
        (Some(TestFunctionSpec::Indicator { state }), ResolvedModel::Finite { mu, .. }) if *state >= mu.len() => {
            return Err(invalid("test_function.state", format!("state {state} outside 0..{}", mu.len())));
        }
        (Some(TestFunctionSpec::Indicator { .. }), ResolvedModel::Continuous { .. }) => {
            return Err(invalid("test_function.kind", "`indicator` needs a finite target"));
        }
        (Some(TestFunctionSpec::Coordinate { index }), ResolvedModel::Continuous { dim, .. }) if index >= dim => {
            return Err(invalid("test_function.index", format!("coordinate {index} outside 0..{dim}")));
        }
        (Some(TestFunctionSpec::Coordinate { .. }), ResolvedModel::Finite { .. }) => {
            return Err(invalid("test_function.kind", "`coordinate` needs a continuous target"));
        }
        _ => {}
    }

    match config.experiment {
        ExperimentKind::Lemma1Audit if !matches!(model, ResolvedModel::Finite { .. }) => {
            return Err(invalid("experiment", "lemma1-audit needs a finite target"));
        }
        ExperimentKind::NScaling if config.replicates < fksmc_core::lab::MIN_REPLICATES => {
            return Err(invalid("replicates", format!("n-scaling needs at least {} replicates", fksmc_core::lab::MIN_REPLICATES)));
        }
        _ => {}
    }

    // The beta condition concerns the drift function only; it is reported in the summary, not warned about.
    let warnings = config.theory.check(model.gamma_floor(), config.model.beta).into_iter().take(2).filter(|c| !c.holds).map(|c| c.message).collect();
    Ok(Validated { config, model, warnings })
}

/// The resolved `n` of the sweep over `N`, and the `N` of the sweep over `n`.
pub fn scaling_fixed(config: &ExperimentConfig) -> (usize, usize) {
    let n = config.scaling.n_fixed.unwrap_or(config.grids.n[0]);
    let p = config.scaling.particles_fixed.unwrap_or_else(|| *config.grids.particles.iter().max().expect("validated"));
    (n, p)
}
