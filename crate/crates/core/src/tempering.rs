//! Tempered target families `pi_gamma ∝ pibar^gamma`, schedules `gamma(u)` and
//! the potentials and drift function they induce.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::{FlowIndex, PotentialFamily};
use crate::measure::DiscreteMeasure;
use crate::rng::StreamRng;

const AUDIT_POINTS: usize = 10_000;
const LIPSCHITZ_SLACK: f64 = 1.01;

type ScheduleFn = dyn Fn(f64) -> f64 + Send + Sync;

#[derive(Clone)]
enum Shape {
    Linear,
    Smoothstep,
    Piecewise(Vec<(f64, f64)>),
    Custom(Arc<ScheduleFn>),
}

/// Non-decreasing Lipschitz `gamma: [0, 1] -> [gamma_floor, 1]` with
/// `gamma(0) = gamma_floor` and `gamma(1) = 1`.
#[derive(Clone)]
pub struct TemperingSchedule {
    gamma_floor: f64,
    lipschitz: f64,
    shape: Shape,
    name: &'static str,
}

impl fmt::Debug for TemperingSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TemperingSchedule")
            .field("name", &self.name)
            .field("gamma_floor", &self.gamma_floor)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

/// Result of evaluating a schedule on a uniform grid.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ScheduleAudit {
    pub points: usize,
    pub endpoints_ok: bool,
    pub monotone: bool,
    pub in_range: bool,
    pub max_slope: f64,
    pub lipschitz_ok: bool,
}

impl ScheduleAudit {
    pub fn passed(&self) -> bool {
        self.endpoints_ok && self.monotone && self.in_range && self.lipschitz_ok
    }
}

fn check_floor(gamma_floor: f64) -> Result<()> {
    if !(gamma_floor > 0.0 && gamma_floor <= 1.0) {
        return Err(Error::Range(format!("gamma_floor = {gamma_floor} outside (0, 1]")));
    }
    Ok(())
}

impl TemperingSchedule {
    fn build(gamma_floor: f64, lipschitz: f64, shape: Shape, name: &'static str) -> Result<Self> {
        check_floor(gamma_floor)?;
        let s = TemperingSchedule { gamma_floor, lipschitz, shape, name };
        let audit = s.audit(AUDIT_POINTS);
        if !audit.passed() {
            return Err(Error::InvalidModel(format!("schedule {name} fails its grid audit: {audit:?}")));
        }
        Ok(s)
    }

    /// `gamma(u) = gamma_floor + (1 - gamma_floor) u`.
    pub fn linear(gamma_floor: f64) -> Result<Self> {
        Self::build(gamma_floor, 1.0 - gamma_floor, Shape::Linear, "linear")
    }

    /// `gamma(u) = gamma_floor + (1 - gamma_floor)(3u^2 - 2u^3)`.
    pub fn smoothstep(gamma_floor: f64) -> Result<Self> {
        Self::build(gamma_floor, 1.5 * (1.0 - gamma_floor), Shape::Smoothstep, "smoothstep")
    }

    /// Linear interpolation through `(u, gamma)` knots, which must start at
    /// `(0, gamma_floor)`, end at `(1, 1)` and be increasing in `u`.
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidModel("piecewise schedule needs at least two knots".into()));
        }
        let (u0, g0) = knots[0];
        let (u1, g1) = knots[knots.len() - 1];
        if u0 != 0.0 || u1 != 1.0 || g1 != 1.0 {
            return Err(Error::InvalidModel("knots must start at u = 0 and end at (1, 1)".into()));
        }
        let mut slope = 0.0_f64;
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if !(b.0 > a.0) {
                return Err(Error::InvalidModel("knot positions must be strictly increasing".into()));
            }
            if b.1 < a.1 {
                return Err(Error::InvalidModel("knot values must be non-decreasing".into()));
            }
            slope = slope.max((b.1 - a.1) / (b.0 - a.0));
        }
        Self::build(g0, slope, Shape::Piecewise(knots), "piecewise-linear")
    }

    /// Caller-supplied closed form with a declared Lipschitz constant.
    pub fn custom<F>(gamma_floor: f64, lipschitz: f64, f: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::build(gamma_floor, lipschitz, Shape::Custom(Arc::new(f)), "custom")
    }

    /// Replaces the Lipschitz constant with a declared one, re-auditing it.
    pub fn with_lipschitz(self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(Error::Range(format!("Lipschitz constant {lipschitz} must be finite and >= 0")));
        }
        Self::build(self.gamma_floor, lipschitz, self.shape, self.name)
    }

    pub fn name(&self) -> &str {
        self.name
    }

    pub fn gamma_floor(&self) -> f64 {
        self.gamma_floor
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// `gamma(u)`; `u` is clamped to `[0, 1]`.
    pub fn eval(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let g = self.gamma_floor;
        match &self.shape {
            Shape::Linear => g + (1.0 - g) * u,
            Shape::Smoothstep => g + (1.0 - g) * u * u * (3.0 - 2.0 * u),
            Shape::Piecewise(knots) => {
                let j = knots.partition_point(|&(ku, _)| ku <= u).clamp(1, knots.len() - 1);
                let (a, b) = (knots[j - 1], knots[j]);
                a.1 + (b.1 - a.1) * (u - a.0) / (b.0 - a.0)
            }
            Shape::Custom(f) => f(u),
        }
    }

    /// `gamma(k / n)`.
    pub fn at(&self, idx: FlowIndex) -> f64 {
        self.eval(idx.fraction())
    }

    /// Endpoints, monotonicity, range and Lipschitz bound on `points + 1` grid nodes.
    pub fn audit(&self, points: usize) -> ScheduleAudit {
        let points = points.max(1);
        let h = 1.0 / points as f64;
        let vals: Vec<f64> = (0..=points).map(|i| self.eval(i as f64 * h)).collect();
        let endpoints_ok = (vals[0] - self.gamma_floor).abs() <= 1e-12 && (vals[points] - 1.0).abs() <= 1e-12;
        let monotone = vals.windows(2).all(|w| w[1] >= w[0] - 1e-15);
        let in_range = vals.iter().all(|&v| v >= self.gamma_floor - 1e-12 && v <= 1.0 + 1e-12);
        let max_slope = vals.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
        let lipschitz_ok = max_slope <= LIPSCHITZ_SLACK * self.lipschitz + 1e-12;
        ScheduleAudit { points, endpoints_ok, monotone, in_range, max_slope, lipschitz_ok }
    }
}

type LogDensityFn<S> = dyn Fn(&S) -> f64 + Send + Sync;
type TemperedSampler<S> = dyn Fn(f64, &mut StreamRng) -> S + Send + Sync;

/// Unnormalized log target `log pibar` with a declared `sup log pibar`.
pub struct LogTarget<S> {
    name: String,
    log_unnorm: Arc<LogDensityFn<S>>,
    sup_log_unnorm: f64,
    sup_verified: bool,
    argmax: Option<S>,
    tempered_sampler: Option<Arc<TemperedSampler<S>>>,
}

impl<S: Clone> Clone for LogTarget<S> {
    fn clone(&self) -> Self {
        LogTarget {
            name: self.name.clone(),
            log_unnorm: Arc::clone(&self.log_unnorm),
            sup_log_unnorm: self.sup_log_unnorm,
            sup_verified: self.sup_verified,
            argmax: self.argmax.clone(),
            tempered_sampler: self.tempered_sampler.clone(),
        }
    }
}

impl<S> LogTarget<S> {
    /// A target whose supremum is declared by the caller and not checked.
    pub fn custom<F>(name: impl Into<String>, sup_log_unnorm: f64, log_unnorm: F) -> Result<Self>
    where
        F: Fn(&S) -> f64 + Send + Sync + 'static,
    {
        if !sup_log_unnorm.is_finite() {
            return Err(Error::InvalidModel("declared sup log density must be finite".into()));
        }
        Ok(LogTarget {
            name: name.into(),
            log_unnorm: Arc::new(log_unnorm),
            sup_log_unnorm,
            sup_verified: false,
            argmax: None,
            tempered_sampler: None,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn log_unnorm(&self, x: &S) -> f64 {
        (self.log_unnorm)(x)
    }

    pub fn sup_log_unnorm(&self) -> f64 {
        self.sup_log_unnorm
    }

    /// False for user-declared suprema.
    pub fn sup_verified(&self) -> bool {
        self.sup_verified
    }

    pub fn argmax(&self) -> Option<&S> {
        self.argmax.as_ref()
    }

    pub fn has_tempered_sampler(&self) -> bool {
        self.tempered_sampler.is_some()
    }
}

impl LogTarget<Vec<f64>> {
    /// Isotropic Gaussian `exp(-|x - mean|^2 / (2 sd^2))`, so `sup log pibar = 0`.
    pub fn gaussian(mean: Vec<f64>, sd: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidModel("gaussian target needs dimension >= 1".into()));
        }
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::Range(format!("sd = {sd} must be positive")));
        }
        let m = mean.clone();
        let inv = 1.0 / (2.0 * sd * sd);
        let log_unnorm = move |x: &Vec<f64>| -> f64 {
            -inv * x.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let ms = mean.clone();
        let sampler = move |gamma: f64, rng: &mut StreamRng| -> Vec<f64> {
            let s = sd / gamma.sqrt();
            ms.iter().map(|mu| mu + s * { let z: f64 = StandardNormal.sample(rng); z }).collect()
        };
        Ok(LogTarget {
            name: "gaussian".into(),
            log_unnorm: Arc::new(log_unnorm),
            sup_log_unnorm: 0.0,
            sup_verified: true,
            argmax: Some(mean),
            tempered_sampler: Some(Arc::new(sampler)),
        })
    }

    /// `sum_i w_i exp(-|x - m_i|^2 / (2 s_i^2))`. The supremum is bounded by
    /// `log sum_i w_i`, which is a valid (not always tight) bound.
    pub fn gaussian_mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, sds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != sds.len() {
            return Err(Error::InvalidModel("mixture weights, means and sds must have equal nonzero length".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidModel("mixture means must share a nonzero dimension".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) || sds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Range("mixture weights and sds must be positive".into()));
        }
        let sup = weights.iter().sum::<f64>().ln();
        let comps: Vec<(f64, Vec<f64>, f64)> = weights
            .iter()
            .zip(means)
            .zip(&sds)
            .map(|((w, m), s)| (w.ln(), m, 1.0 / (2.0 * s * s)))
            .collect();
        let log_unnorm = move |x: &Vec<f64>| -> f64 {
            let terms: Vec<f64> = comps
                .iter()
                .map(|(lw, m, inv)| lw - inv * x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .collect();
            let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !top.is_finite() {
                return top;
            }
            top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln()
        };
        Ok(LogTarget {
            name: "gaussian-mixture".into(),
            log_unnorm: Arc::new(log_unnorm),
            sup_log_unnorm: sup,
            sup_verified: true,
            argmax: None,
            tempered_sampler: None,
        })
    }
}

impl LogTarget<usize> {
    /// Finite target with `log pibar(x) = log_weights[x]`; states outside the table get `-inf`.
    pub fn finite(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() || log_weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("finite target needs finite log weights".into()));
        }
        let (argmax, sup) = log_weights
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let table = Arc::new(log_weights);
        let lookup = Arc::clone(&table);
        let sampler = move |gamma: f64, rng: &mut StreamRng| -> usize {
            let probs = tempered_probabilities(&table, gamma);
            crate::measure::sample_row(&probs, rng)
        };
        Ok(LogTarget {
            name: "finite".into(),
            log_unnorm: Arc::new(move |x: &usize| lookup.get(*x).copied().unwrap_or(f64::NEG_INFINITY)),
            sup_log_unnorm: sup,
            sup_verified: true,
            argmax: Some(argmax),
            tempered_sampler: Some(Arc::new(sampler)),
        })
    }

    pub fn tabulate(&self, m: usize) -> Vec<f64> {
        (0..m).map(|x| self.log_unnorm(&x)).collect()
    }
}

fn tempered_probabilities(log_w: &[f64], gamma: f64) -> Vec<f64> {
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (gamma * (v - top)).exp()).collect();
    let total = crate::matrix::compensated_sum(w.iter().copied());
    w.into_iter().map(|v| v / total).collect()
}

/// `{pi_gamma : gamma in [gamma_floor, 1]}` together with the schedule walking through it.
pub struct TemperedFamily<S> {
    target: LogTarget<S>,
    schedule: TemperingSchedule,
}

impl<S: Clone> Clone for TemperedFamily<S> {
    fn clone(&self) -> Self {
        TemperedFamily { target: self.target.clone(), schedule: self.schedule.clone() }
    }
}

impl<S> TemperedFamily<S> {
    pub fn new(target: LogTarget<S>, schedule: TemperingSchedule) -> Self {
        TemperedFamily { target, schedule }
    }

    pub fn target(&self) -> &LogTarget<S> {
        &self.target
    }

    pub fn schedule(&self) -> &TemperingSchedule {
        &self.schedule
    }

    pub fn gamma_floor(&self) -> f64 {
        self.schedule.gamma_floor
    }

    pub(crate) fn check_gamma(&self, gamma: f64) -> Result<()> {
        let lo = self.schedule.gamma_floor;
        if !(gamma >= lo - 1e-12 && gamma <= 1.0 + 1e-12) {
            return Err(Error::Range(format!("gamma = {gamma} outside [{lo}, 1]")));
        }
        Ok(())
    }

    /// Direct draw from `pi_gamma` when the target provides one.
    pub fn sample_tempered(&self, gamma: f64, rng: &mut StreamRng) -> Result<S> {
        self.check_gamma(gamma)?;
        let s = self
            .target
            .tempered_sampler
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("target {} has no direct tempered sampler", self.target.name)))?;
        Ok(s(gamma, rng))
    }
}

impl<S: 'static> TemperedFamily<S> {
    /// `gamma log pibar(x)`.
    pub fn tempered_log_density(&self, gamma: f64, x: &S) -> Result<f64> {
        self.check_gamma(gamma)?;
        Ok(gamma * self.target.log_unnorm(x))
    }

    /// `log G_{n,k}(x) = (gamma((k+1)/n) - gamma(k/n)) log pibar(x)`.
    ///
    /// The increment lies in `[0, C/n]`, so `C/n max(sup log pibar, 0)` bounds
    /// every potential from above.
    pub fn build_potentials(&self, n: usize) -> Result<PotentialFamily<S>> {
        let sched = self.schedule.clone();
        let log_target = Arc::clone(&self.target.log_unnorm);
        let ub = self.schedule.lipschitz / n.max(1) as f64 * self.target.sup_log_unnorm.max(0.0);
        PotentialFamily::new(n, ub, move |idx: FlowIndex, x: &S| {
            let nf = idx.n() as f64;
            let inc = sched.eval((idx.k() + 1) as f64 / nf) - sched.eval(idx.k() as f64 / nf);
            if inc == 0.0 {
                0.0
            } else {
                inc * log_target(x)
            }
        })
    }

    /// `V(x) = exp[-beta gamma_floor (log pibar(x) - sup log pibar)] >= 1`.
    pub fn drift_function(&self, beta: f64) -> Result<DriftSpec<S>> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::Range(format!("beta = {beta} outside (0, 1)")));
        }
        let c = beta * self.schedule.gamma_floor;
        let sup = self.target.sup_log_unnorm;
        let log_target = Arc::clone(&self.target.log_unnorm);
        Ok(DriftSpec::new(move |x: &S| (-c * (log_target(x) - sup)).max(0.0).exp()))
    }
}

impl TemperedFamily<usize> {
    /// Exact `pi_gamma` over states `0..m`.
    pub fn tempered_measure(&self, gamma: f64, m: usize) -> Result<DiscreteMeasure> {
        self.check_gamma(gamma)?;
        DiscreteMeasure::from_unnormalized(tempered_probabilities(&self.target.tabulate(m), gamma))
    }
}

/// Log volume of the Euclidean unit ball in `d` dimensions.
pub(crate) fn log_unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * PI.ln() - ln_gamma(h + 1.0)
}

/// `log Gamma(x)` for `x = k/2`, `k >= 2`, by the exact recursion.
fn ln_gamma(x: f64) -> f64 {
    let mut acc = 0.0;
    let mut y = x;
    while y > 1.0 + 1e-9 {
        y -= 1.0;
        acc += y.ln();
    }
    if (y - 0.5).abs() < 1e-12 {
        acc + 0.5 * PI.ln()
    } else {
        acc
    }
}
