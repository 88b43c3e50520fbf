//! Experiments: initialization-bias decay, error scaling in `N` and `n`, the
//! exact drift/normalizer audits on finite models, particle drift monitoring
//! and the two-point counterexample machinery.
//!
//! Replicate `r` of grid cell `c` runs on stream key `(seed, c << 32 | r)`, so
//! every cell is reproducible on its own and independent of worker count.

mod appendix;
mod audit;
mod bias;
mod monitor;
mod scaling;
pub mod stats;

use serde::{Deserialize, Serialize};

pub use appendix::{eta_fg_sufficiency_check, r2_counterexample, CounterexampleProbe, FgReport, SearchBranch};
pub use audit::{lemma1_audit, lemma3_grid, Lemma1Audit, Lemma1Row, Lemma3Report};
pub use bias::{bias_decay_exact, bias_decay_mc, BiasCell, DecayFit};
pub use monitor::{drift_monitor, DriftMonitor, MonitorRow};
pub use scaling::{n_scaling, RmseCell, ScalingFit, ScalingPlan, MIN_REPLICATES};

use rayon::prelude::*;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::{FKModel, InitialDistribution};
use crate::particles::{estimate, run_sampler};
use crate::rng::StreamKey;
use crate::rwm::{rwm_kernel_family, IncrementDistribution};
use crate::tempering::TemperedFamily;

/// Outcome of an experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Success,
    /// The signal could not be separated from Monte Carlo noise.
    Inconclusive,
    /// A checked inequality failed.
    Violated,
}

/// Stream key of replicate `replicate` in grid cell `cell`.
pub fn replicate_key(seed: u64, cell: usize, replicate: usize) -> StreamKey {
    StreamKey::new(seed, ((cell as u64) << 32) | replicate as u64)
}

/// Empirical extremes of `eta^N_{n,k}(V)` (over `k >= 1`) and of
/// `eta^N_{n,k}(Gtilde_{n,k})` across every run of an experiment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MomentDiagnostics {
    pub max_eta_v: Option<f64>,
    pub min_eta_gtilde: Option<f64>,
}

impl MomentDiagnostics {
    pub(crate) fn merge(self, other: MomentDiagnostics) -> MomentDiagnostics {
        let max = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        };
        let min = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => Some(x.min(y)),
            (x, y) => x.or(y),
        };
        MomentDiagnostics {
            max_eta_v: max(self.max_eta_v, other.max_eta_v),
            min_eta_gtilde: min(self.min_eta_gtilde, other.min_eta_gtilde),
        }
    }
}

pub(crate) struct ReplicateOutcome {
    pub estimate: f64,
    pub diagnostics: MomentDiagnostics,
}

/// Runs `replicates` independent samplers of one grid cell in parallel; the
/// output order is the replicate order.
pub(crate) fn run_replicates<S, F>(
    model: &FKModel<S>,
    f: &F,
    particles: usize,
    replicates: usize,
    seed: u64,
    cell: usize,
    drift: Option<&DriftSpec<S>>,
) -> Result<Vec<ReplicateOutcome>>
where
    S: Clone + Send + Sync,
    F: Fn(&S) -> f64 + Sync,
{
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let run = run_sampler(model, particles, replicate_key(seed, cell, r), drift)?;
            let est = estimate(&run.terminal, f)?;
            let mut d = MomentDiagnostics::default();
            for s in &run.summaries {
                if s.k >= 1 {
                    d = d.merge(MomentDiagnostics { max_eta_v: s.eta_v, min_eta_gtilde: None });
                }
                if let Some(w) = &s.weights {
                    d = d.merge(MomentDiagnostics { max_eta_v: None, min_eta_gtilde: Some(w.eta_gtilde) });
                }
            }
            Ok(ReplicateOutcome { estimate: est, diagnostics: d })
        })
        .collect()
}

pub(crate) fn merge_all<'a, I: IntoIterator<Item = &'a ReplicateOutcome>>(outcomes: I) -> MomentDiagnostics {
    outcomes.into_iter().fold(MomentDiagnostics::default(), |acc, o| acc.merge(o.diagnostics))
}

/// Continuous tempered model: RWM kernels, tempering potentials and an initial law.
#[derive(Clone)]
pub struct ContinuousSetup {
    pub family: TemperedFamily<Vec<f64>>,
    pub increment: IncrementDistribution,
    pub initial: InitialDistribution<Vec<f64>>,
}

impl ContinuousSetup {
    pub fn model(&self, n: usize) -> Result<FKModel<Vec<f64>>> {
        FKModel::new(rwm_kernel_family(&self.family, n, &self.increment)?, self.family.build_potentials(n)?, self.initial.clone())
    }
}

/// `pi_{gamma_floor}` translated by `shift`. The target must have a direct tempered sampler.
pub fn shifted_floor_initial(fam: &TemperedFamily<Vec<f64>>, shift: Vec<f64>) -> Result<InitialDistribution<Vec<f64>>> {
    if !fam.target().has_tempered_sampler() {
        return Err(Error::Unsupported(format!("target {} has no direct tempered sampler", fam.target().name())));
    }
    let fam = fam.clone();
    let g = fam.gamma_floor();
    let label = if shift.iter().all(|s| *s == 0.0) { "tempered-floor" } else { "shifted-floor" };
    Ok(InitialDistribution::from_sampler(label, move |rng| {
        let x = fam.sample_tempered(g, rng).expect("gamma_floor is in range");
        x.iter().zip(shift.iter().cycle()).map(|(a, b)| a + b).collect()
    }))
}

/// `alpha`, `p`, `s` of the `L_p` error bound; `t = (1 + s) / s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryParams {
    pub alpha: f64,
    pub p: f64,
    pub s: f64,
}

impl Default for TheoryParams {
    fn default() -> Self {
        TheoryParams { alpha: 0.25, p: 1.0, s: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HypothesisCheck {
    pub expression: &'static str,
    pub value: f64,
    pub holds: bool,
    pub message: String,
}

impl TheoryParams {
    pub fn t(&self) -> f64 {
        (1.0 + self.s) / self.s
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Range(format!("alpha = {} outside [0, 1]", self.alpha)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Range(format!("p = {} must be >= 1", self.p)));
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::Range(format!("s = {} must be > 0", self.s)));
        }
        Ok(())
    }

    /// `alpha t p <= 1`, `(1+s) p (1-g)/g < 1` and `(1+s) p (1-g)/(g beta) <= 1`.
    pub fn check(&self, gamma_floor: f64, beta: f64) -> Vec<HypothesisCheck> {
        let atp = self.alpha * self.t() * self.p;
        let temper = (1.0 + self.s) * self.p * (1.0 - gamma_floor) / gamma_floor;
        let with_beta = temper / beta;
        let mk = |expression: &'static str, value: f64, holds: bool, cmp: &str| HypothesisCheck {
            expression,
            value,
            holds,
            message: if holds {
                format!("{expression} = {value:.2}")
            } else {
                format!("{expression} = {value:.2} {cmp} 1: outside the stability hypotheses")
            },
        };
        vec![
            mk("alpha*t*p", atp, atp <= 1.0, ">"),
            mk("(1+s)p(1-γ̲)/γ̲", temper, temper < 1.0, "≥"),
            mk("(1+s)p(1-γ̲)/(γ̲β)", with_beta, with_beta <= 1.0, ">"),
        ]
    }

    pub fn warnings(&self, gamma_floor: f64, beta: f64) -> Vec<String> {
        self.check(gamma_floor, beta).into_iter().filter(|c| !c.holds).map(|c| c.message).collect()
    }
}
