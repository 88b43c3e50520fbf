//! Random walk Metropolis kernels invariant for `pi_gamma`, their finite-state
//! Metropolis analogue, and a Monte Carlo probe of the drift ratio `MV / V`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::{FlowIndex, KernelFamily};
use crate::matrix::{compensated_sum, Matrix};
use crate::rng::{StreamKey, StreamRng};
use crate::tempering::{log_unit_ball_volume, TemperedFamily};

type IncSampler = dyn Fn(usize, &mut StreamRng) -> Vec<f64> + Send + Sync;
type IncDensity = dyn Fn(&[f64]) -> f64 + Send + Sync;
type IncProfile = dyn Fn(f64, usize) -> f64 + Send + Sync;

#[derive(Clone)]
enum Increment {
    Gaussian { scale: f64 },
    UniformBall { radius: f64 },
    Custom { sample: Arc<IncSampler>, log_density: Arc<IncDensity>, profile: Arc<IncProfile> },
}

/// Symmetric increment law `q` for the random walk proposal `x + y`.
#[derive(Clone)]
pub struct IncrementDistribution {
    inc: Increment,
}

impl fmt::Debug for IncrementDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inc {
            Increment::Gaussian { scale } => write!(f, "Gaussian(scale = {scale})"),
            Increment::UniformBall { radius } => write!(f, "UniformBall(radius = {radius})"),
            Increment::Custom { .. } => write!(f, "Custom"),
        }
    }
}

fn symmetry_probes() -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for d in 1..=3 {
        for i in 0..40 {
            let t = 0.05 + i as f64 * 0.13;
            out.push((0..d).map(|j| t * ((j as f64 + 1.0) * 0.7 + t).sin()).collect());
        }
    }
    out
}

impl IncrementDistribution {
    /// `N(0, scale^2 I)`.
    pub fn gaussian(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Range(format!("increment scale {scale} must be positive")));
        }
        Ok(IncrementDistribution { inc: Increment::Gaussian { scale } })
    }

    /// Uniform on the closed ball of the given radius.
    pub fn uniform_ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Range(format!("ball radius {radius} must be positive")));
        }
        Ok(IncrementDistribution { inc: Increment::UniformBall { radius } })
    }

    /// User-supplied increment. `log_density(y) = log_density(-y)` is checked
    /// on a fixed probe set and asymmetric laws are rejected.
    pub fn custom<S, D, P>(sample: S, log_density: D, profile: P) -> Result<Self>
    where
        S: Fn(usize, &mut StreamRng) -> Vec<f64> + Send + Sync + 'static,
        D: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        P: Fn(f64, usize) -> f64 + Send + Sync + 'static,
    {
        for y in symmetry_probes() {
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            let (a, b) = (log_density(&y), log_density(&neg));
            if a != b && !(a.is_infinite() && b.is_infinite()) && (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                return Err(Error::InvalidModel(format!("increment density is not symmetric at {y:?}")));
            }
        }
        Ok(IncrementDistribution {
            inc: Increment::Custom { sample: Arc::new(sample), log_density: Arc::new(log_density), profile: Arc::new(profile) },
        })
    }

    pub fn sample(&self, d: usize, rng: &mut StreamRng) -> Vec<f64> {
        match &self.inc {
            Increment::Gaussian { scale } => (0..d).map(|_| scale * { let z: f64 = StandardNormal.sample(rng); z }).collect(),
            Increment::UniformBall { radius } => {
                let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / d as f64);
                if norm == 0.0 {
                    return vec![0.0; d];
                }
                dir.into_iter().map(|v| v * r / norm).collect()
            }
            Increment::Custom { sample, .. } => sample(d, rng),
        }
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let d = y.len() as f64;
        let sq: f64 = y.iter().map(|v| v * v).sum();
        match &self.inc {
            Increment::Gaussian { scale } => {
                -sq / (2.0 * scale * scale) - 0.5 * d * (2.0 * std::f64::consts::PI * scale * scale).ln()
            }
            Increment::UniformBall { radius } => {
                if sq.sqrt() <= *radius {
                    -(log_unit_ball_volume(y.len()) + d * radius.ln())
                } else {
                    f64::NEG_INFINITY
                }
            }
            Increment::Custom { log_density, .. } => log_density(y),
        }
    }

    /// `eps_r = inf_{|y| <= r} q(y)` in dimension `d`. For the uniform ball this
    /// is zero once `r` exceeds the ball radius.
    pub fn positivity_epsilon(&self, r: f64, d: usize) -> f64 {
        match &self.inc {
            Increment::Gaussian { .. } => {
                let mut y = vec![0.0; d.max(1)];
                y[0] = r;
                self.log_density(&y).exp()
            }
            Increment::UniformBall { radius } => {
                if r <= *radius {
                    (-(log_unit_ball_volume(d.max(1)) + d.max(1) as f64 * radius.ln())).exp()
                } else {
                    0.0
                }
            }
            Increment::Custom { profile, .. } => profile(r, d),
        }
    }
}

/// One RWM move at inverse temperature `gamma`. Exactly one uniform is drawn
/// after the increment; a non-finite proposal density is a rejection.
pub fn rwm_step(fam: &TemperedFamily<Vec<f64>>, gamma: f64, q: &IncrementDistribution, x: &[f64], rng: &mut StreamRng) -> Result<Vec<f64>> {
    fam.check_gamma(gamma)?;
    Ok(move_once(fam, gamma, q, x, rng))
}

fn move_once(fam: &TemperedFamily<Vec<f64>>, gamma: f64, q: &IncrementDistribution, x: &[f64], rng: &mut StreamRng) -> Vec<f64> {
    let y = q.sample(x.len(), rng);
    let u: f64 = rng.random();
    let prop: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let lp_new = fam.target().log_unnorm(&prop);
    if !lp_new.is_finite() {
        return x.to_vec();
    }
    let lp_old = fam.target().log_unnorm(&x.to_vec());
    if lp_new >= lp_old || u < (gamma * (lp_new - lp_old)).exp() {
        prop
    } else {
        x.to_vec()
    }
}

/// `M_{n,k}` = RWM targeting `pi_{gamma(k/n)}`, `1 <= k <= n`.
pub fn rwm_kernel_family(fam: &TemperedFamily<Vec<f64>>, n: usize, q: &IncrementDistribution) -> Result<KernelFamily<Vec<f64>>> {
    let fam = fam.clone();
    let q = q.clone();
    KernelFamily::new(n, move |idx: FlowIndex, x: &Vec<f64>, rng: &mut StreamRng| {
        move_once(&fam, fam.schedule().at(idx), &q, x, rng)
    })
}

/// Finite Metropolis matrix for `pi_gamma ∝ exp(gamma log_pi)` under a symmetric proposal.
pub fn metropolis_matrix(log_pi: &[f64], gamma: f64, proposal: &Matrix) -> Result<Matrix> {
    let m = log_pi.len();
    if !proposal.is_square() || proposal.rows() != m {
        return Err(Error::InvalidModel(format!("proposal must be {m}x{m}")));
    }
    if !proposal.is_stochastic(1e-12) {
        return Err(Error::InvalidModel("proposal is not row-stochastic".into()));
    }
    for x in 0..m {
        for y in 0..x {
            if proposal.get(x, y) != proposal.get(y, x) {
                return Err(Error::InvalidModel(format!("proposal is not symmetric at ({x}, {y})")));
            }
        }
    }
    let mut out = Matrix::zeros(m, m);
    for x in 0..m {
        let mut off = Vec::with_capacity(m);
        for y in 0..m {
            if y == x {
                continue;
            }
            let a = (gamma * (log_pi[y] - log_pi[x])).min(0.0).exp();
            let v = proposal.get(x, y) * a;
            out.set(x, y, v);
            off.push(v);
        }
        out.set(x, x, (1.0 - compensated_sum(off)).max(0.0));
    }
    Ok(out)
}

/// Finite analogue of [`rwm_kernel_family`]: `M_{n,k}` is the Metropolis
/// matrix for `pi_{gamma(k/n)}` on states `0..m`.
pub fn metropolis_kernel_family(fam: &TemperedFamily<usize>, n: usize, proposal: &Matrix) -> Result<KernelFamily<usize>> {
    let log_pi = fam.target().tabulate(proposal.rows());
    let mats = (1..=n)
        .map(|k| metropolis_matrix(&log_pi, fam.schedule().at(FlowIndex::new(n, k)?), proposal))
        .collect::<Result<Vec<_>>>()?;
    KernelFamily::from_matrices(mats)
}

#[derive(Clone, Debug, Serialize)]
pub struct PointEstimate {
    pub x: Vec<f64>,
    pub ratio: f64,
    pub band: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShellEstimate {
    pub radius: f64,
    /// Largest estimated `MV(x) / V(x)` on the shell.
    pub lambda_hat: f64,
    /// Band attached to the maximizing point.
    pub band: f64,
    pub points: Vec<PointEstimate>,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftProbeReport {
    pub gamma: f64,
    pub proposals: usize,
    pub shells: Vec<ShellEstimate>,
    /// Smallest probed radius with `lambda_hat + band < 1`.
    pub contracting_radius: Option<f64>,
}

/// Estimates `MV(x) / V(x)` at the `2d` axis points `±r e_i` of each shell.
///
/// Each proposal contributes its Rao-Blackwellized conditional expectation
/// `a V(x + y) / V(x) + (1 - a)`, `a` the acceptance probability. Bands are
/// four standard errors.
#[allow(clippy::too_many_arguments)]
pub fn drift_probe(
    fam: &TemperedFamily<Vec<f64>>,
    gamma: f64,
    q: &IncrementDistribution,
    drift: &DriftSpec<Vec<f64>>,
    radii: &[f64],
    dim: usize,
    proposals: usize,
    seed: u64,
) -> Result<DriftProbeReport> {
    fam.check_gamma(gamma)?;
    if dim == 0 || proposals < 2 {
        return Err(Error::Range("drift probe needs dim >= 1 and at least two proposals".into()));
    }
    let key = StreamKey::new(seed, 0);
    let mut shells = Vec::with_capacity(radii.len());
    for (si, &r) in radii.iter().enumerate() {
        let mut points = Vec::with_capacity(2 * dim);
        for pi in 0..2 * dim {
            let mut x = vec![0.0; dim];
            x[pi / 2] = if pi % 2 == 0 { r } else { -r };
            let mut rng = key.stream(si as u64, pi as u64);
            let vx = drift.value(&x);
            let lp_x = fam.target().log_unnorm(&x);
            let samples: Vec<f64> = (0..proposals)
                .map(|_| {
                    let y = q.sample(dim, &mut rng);
                    let prop: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
                    let lp = fam.target().log_unnorm(&prop);
                    if !lp.is_finite() {
                        return 1.0;
                    }
                    let a = (gamma * (lp - lp_x)).min(0.0).exp();
                    a * drift.value(&prop) / vx + (1.0 - a)
                })
                .collect();
            let mean = compensated_sum(samples.iter().copied()) / proposals as f64;
            let var = compensated_sum(samples.iter().map(|s| (s - mean) * (s - mean))) / (proposals - 1) as f64;
            points.push(PointEstimate { x, ratio: mean, band: 4.0 * (var / proposals as f64).sqrt() });
        }
        let best = points.iter().max_by(|a, b| a.ratio.total_cmp(&b.ratio)).expect("non-empty shell");
        shells.push(ShellEstimate { radius: r, lambda_hat: best.ratio, band: best.band, points: points.clone() });
    }
    let contracting_radius = shells.iter().filter(|s| s.lambda_hat + s.band < 1.0).map(|s| s.radius).reduce(f64::min);
    Ok(DriftProbeReport { gamma, proposals, shells, contracting_radius })
}
