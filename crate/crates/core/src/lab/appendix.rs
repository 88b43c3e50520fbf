//! Two-point machinery around the inequality `eta(fg) <= (1 + delta) eta(f) eta(g)`.

use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use super::Status;
use crate::error::{Error, Result};
use crate::matrix::compensated_sum;
use crate::rng::stream;

/// Relative slack for the floating-point comparison of the two sides.
const REL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FgReport {
    pub delta: f64,
    pub points: usize,
    /// `delta / (2 + delta)`.
    pub threshold: f64,
    /// Largest `[f(x)-f(x')][g(x)-g(x')] / ([f(x)+f(x')][g(x)+g(x')])` over pairs.
    pub max_pair_ratio: f64,
    pub max_pair: Option<(usize, usize)>,
    pub condition_holds: bool,
    /// `eta(fg) / ((1+delta) eta(f) eta(g)) - 1` for the uniform law on `max_pair`.
    pub max_pair_gap: Option<f64>,
    pub trials_run: usize,
    pub violations: usize,
    /// Largest `eta(fg) / (eta(f) eta(g))` seen over the random laws.
    pub worst_ratio: Option<f64>,
    pub status: Status,
}

fn pair_ratio(f: &[f64], g: &[f64], i: usize, j: usize) -> f64 {
    ((f[i] - f[j]) / (f[i] + f[j])) * ((g[i] - g[j]) / (g[i] + g[j]))
}

fn ratio_under(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let efg = compensated_sum(w.iter().zip(f).zip(g).map(|((w, f), g)| w * f * g));
    let ef = compensated_sum(w.iter().zip(f).map(|(w, f)| w * f));
    let eg = compensated_sum(w.iter().zip(g).map(|(w, g)| w * g));
    efg / (ef * eg)
}

/// Checks the pairwise condition on the point set and, when it holds, tests
/// `trials` random laws drawn uniformly from the simplex.
pub fn eta_fg_sufficiency_check(f: &[f64], g: &[f64], delta: f64, trials: usize, seed: u64) -> Result<FgReport> {
    if f.is_empty() || f.len() != g.len() {
        return Err(Error::Precondition("f and g need the same non-zero length".into()));
    }
    if let Some(bad) = f.iter().chain(g).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::Precondition(format!("f and g must be positive and finite, got {bad}")));
    }
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Range(format!("delta = {delta} must be >= 0")));
    }
    let m = f.len();
    let threshold = delta / (2.0 + delta);
    let mut max_pair_ratio = f64::NEG_INFINITY;
    let mut max_pair = None;
    for i in 0..m {
        for j in i + 1..m {
            let r = pair_ratio(f, g, i, j);
            if r > max_pair_ratio {
                max_pair_ratio = r;
                max_pair = Some((i, j));
            }
        }
    }
    let condition_holds = max_pair.is_none() || max_pair_ratio <= threshold;
    let max_pair_gap = max_pair.map(|(i, j)| {
        let (fs, gs) = ([f[i], f[j]], [g[i], g[j]]);
        ratio_under(&[0.5, 0.5], &fs, &gs) / (1.0 + delta) - 1.0
    });

    let mut report = FgReport {
        delta,
        points: m,
        threshold,
        max_pair_ratio: if max_pair.is_some() { max_pair_ratio } else { 0.0 },
        max_pair,
        condition_holds,
        max_pair_gap,
        trials_run: 0,
        violations: 0,
        worst_ratio: None,
        status: Status::Inconclusive,
    };
    if !condition_holds {
        return Ok(report);
    }
    let mut worst = f64::NEG_INFINITY;
    let mut w = vec![0.0; m];
    for t in 0..trials {
        let mut rng = stream(seed, 0, t as u64, 0);
        for slot in w.iter_mut() {
            *slot = Exp1.sample(&mut rng);
        }
        let s = compensated_sum(w.iter().copied());
        w.iter_mut().for_each(|v| *v /= s);
        let r = ratio_under(&w, f, g);
        worst = worst.max(r);
        if r > (1.0 + delta) * (1.0 + REL_TOL) {
            report.violations += 1;
        }
    }
    report.trials_run = trials;
    report.worst_ratio = (trials > 0).then_some(worst);
    report.status = if report.violations == 0 { Status::Success } else { Status::Violated };
    Ok(report)
}

/// How the radius of the two-point witness was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchBranch {
    /// The closed-form radius already gives a strict violation.
    ProofRadius,
    /// The radius had to be pushed outward along the ray.
    OutwardSearch,
}

/// One atom of the witness law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub point: [f64; 2],
    pub weight: f64,
    pub g: f64,
    pub v: f64,
    pub log_g: f64,
    pub log_v: f64,
}

/// Two-point law on `R^2` violating `eta(GV) <= (1+delta) eta(G) eta(V)`
/// for `V(x) = exp((x1 - eps)^2 + x2^2)` and `G(x) = exp(-(x1 + eps)^2 - x2^2)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleProbe {
    pub epsilon: f64,
    pub delta: f64,
    /// `3 delta / (2 + delta)`.
    pub eps_prime: f64,
    pub r_initial: f64,
    pub r: f64,
    pub branch: SearchBranch,
    pub search_steps: usize,
    /// Probe `y = (0, sqrt(r^2 - eps^2))`, on both level sets.
    pub y: Atom,
    /// Midpoint `y'` of the radial segment between the level sets.
    pub y_prime: Atom,
    /// Ends of that segment, on the `G` and on the `V` level set.
    pub segment: [[f64; 2]; 2],
    /// `eta(GV) / eta(G)`.
    pub lhs: f64,
    /// `(1 + delta) eta(V)`.
    pub rhs: f64,
    pub log_lhs: f64,
    pub log_rhs: f64,
    /// `log_lhs - log_rhs`.
    pub log_margin: f64,
    /// Largest radial gap between the level sets through the probe.
    pub psi_value: f64,
    /// The same maximum over a grid of 3600 directions.
    pub psi_grid_max: f64,
    /// Pairwise ratio of `(V, G)` on the two atoms.
    pub pair_ratio: f64,
    pub status: Status,
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn log_sides(eps: f64, delta: f64, r: f64) -> (f64, f64) {
    let lhs = log_add(0.0, 4.0 * r * eps) - log_add(-r * r, -(r - eps) * (r - eps));
    let rhs = (1.0 + delta).ln() - std::f64::consts::LN_2 + log_add(r * r, (r + eps) * (r + eps));
    (lhs, rhs)
}

/// Radial distance along unit direction `zeta` to a circle of squared radius
/// `rho2` centred at `(-c, 0)`, split as `(linear, sqrt)` parts.
fn radius_parts(c: f64, zeta: [f64; 2], rho2: f64) -> (f64, f64) {
    let lin = -c * zeta[0];
    (lin, (lin * lin - c * c + rho2).sqrt())
}

/// `h(zeta) - w(zeta)`: distance to the `G` level set minus distance to the
/// `V` level set through a point with squared radii `rho_g2`, `rho_v2`.
fn psi_at(eps: f64, zeta: [f64; 2], rho_g2: f64, rho_v2: f64) -> f64 {
    let (hl, hs) = radius_parts(eps, zeta, rho_g2);
    let (wl, ws) = radius_parts(-eps, zeta, rho_v2);
    (hl - wl) + (hs - ws)
}

fn atom(point: [f64; 2], eps: f64) -> Atom {
    let log_g = -((point[0] + eps).powi(2) + point[1] * point[1]);
    let log_v = (point[0] - eps).powi(2) + point[1] * point[1];
    Atom { point, weight: 0.5, g: log_g.exp(), v: log_v.exp(), log_g, log_v }
}

/// Builds the two-point witness. The radius starts at
/// `max(2 eps, eps + log((1 + sqrt(e')) / (1 - sqrt(e'))) / (2 eps))` with
/// `e' = 3 delta / (2 + delta)` and grows by half its value until the
/// violation is strict.
pub fn r2_counterexample(epsilon: f64, delta: f64) -> Result<CounterexampleProbe> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Range(format!("epsilon = {epsilon} must be > 0")));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Range(format!("delta = {delta} outside [0, 1)")));
    }
    let eps = epsilon;
    let eps_prime = 3.0 * delta / (2.0 + delta);
    let sq = eps_prime.sqrt();
    let r_initial = (2.0 * eps).max(eps + ((1.0 + sq) / (1.0 - sq)).ln() / (2.0 * eps));
    let mut r = r_initial;
    let mut steps = 0;
    let (mut log_lhs, mut log_rhs) = log_sides(eps, delta, r);
    while log_lhs <= log_rhs {
        if steps == 200 || !r.is_finite() {
            return Err(Error::Degenerate(format!("no strict violation found up to r = {r}")));
        }
        r *= 1.5;
        steps += 1;
        (log_lhs, log_rhs) = log_sides(eps, delta, r);
    }
    let branch = if steps == 0 { SearchBranch::ProofRadius } else { SearchBranch::OutwardSearch };

    let p2 = (r * r - eps * eps).sqrt();
    let y = atom([0.0, p2], eps);
    let y_prime = atom([-r, 0.0], eps);
    let segment = [[-(r + eps), 0.0], [-(r - eps), 0.0]];

    // Both level sets through y share the squared radius eps^2 + p2^2.
    let rho2 = eps * eps + p2 * p2;
    let psi_value = psi_at(eps, [-1.0, 0.0], rho2, rho2);
    let psi_grid_max = (0..3600)
        .map(|i| {
            let th = i as f64 * std::f64::consts::TAU / 3600.0;
            psi_at(eps, [th.cos(), th.sin()], rho2, rho2)
        })
        .fold(f64::NEG_INFINITY, f64::max);

    let a = y.log_v - y_prime.log_v;
    let b = y.log_g - y_prime.log_g;
    let pair_ratio = (a / 2.0).tanh() * (b / 2.0).tanh();

    Ok(CounterexampleProbe {
        epsilon,
        delta,
        eps_prime,
        r_initial,
        r,
        branch,
        search_steps: steps,
        y,
        y_prime,
        segment,
        lhs: log_lhs.exp(),
        rhs: log_rhs.exp(),
        log_lhs,
        log_rhs,
        log_margin: log_lhs - log_rhs,
        psi_value,
        psi_grid_max,
        pair_ratio,
        status: Status::Success,
    })
}
