//! The interacting particle approximation of a Feynman-Kac flow.
//!
//! Particle `i` at step `k + 1` draws its ancestor and its mutation from the
//! single stream `(seed, replicate, k + 1, i)`; initial draws use step 0. The
//! joint law is the batch version of drawing the particles one at a time.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::{kernel_step, FKModel, FlowIndex, InitialDistribution};
use crate::matrix::{compensated_sum, fmt_f64};
use crate::rng::StreamKey;

const MIN_PAR_LEN: usize = 256;

/// `N` particles at step `k` of a horizon-`n` model.
#[derive(Clone, Debug)]
pub struct Ensemble<S> {
    states: Vec<S>,
    step: FlowIndex,
    key: StreamKey,
}

impl<S> Ensemble<S> {
    /// An ensemble at `step` whose next move draws from `key`.
    pub fn from_states(states: Vec<S>, step: FlowIndex, key: StreamKey) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Precondition("an ensemble needs at least one particle".into()));
        }
        Ok(Ensemble { states, step, key })
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn step(&self) -> FlowIndex {
        self.step
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn into_empirical(self) -> EmpiricalMeasure<S> {
        EmpiricalMeasure { support: self.states }
    }

    pub fn empirical(&self) -> EmpiricalMeasure<S>
    where
        S: Clone,
    {
        EmpiricalMeasure { support: self.states.clone() }
    }
}

/// `(1/N) sum_i delta_{xi^i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure<S> {
    support: Vec<S>,
}

impl<S> EmpiricalMeasure<S> {
    pub fn new(support: Vec<S>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Range("empirical measure needs at least one atom".into()));
        }
        Ok(EmpiricalMeasure { support })
    }

    pub fn support(&self) -> &[S] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// `(1/N) sum_i f(xi^i)`; a non-finite `f` value is reported with its particle index.
pub fn estimate<S, F>(em: &EmpiricalMeasure<S>, f: F) -> Result<f64>
where
    F: Fn(&S) -> f64,
{
    mean_of(&em.support, f)
}

fn mean_of<S, F>(support: &[S], f: F) -> Result<f64>
where
    F: Fn(&S) -> f64,
{
    let mut vals = Vec::with_capacity(support.len());
    for (index, x) in support.iter().enumerate() {
        let value = f(x);
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
        vals.push(value);
    }
    Ok(compensated_sum(vals) / support.len() as f64)
}

/// `N` independent draws from `mu` at step `(n, 0)`.
pub fn init_ensemble<S: Send>(initial: &InitialDistribution<S>, particles: usize, n: usize, key: StreamKey) -> Result<Ensemble<S>> {
    if particles == 0 {
        return Err(Error::Range("need at least one particle".into()));
    }
    let step = FlowIndex::new(n, 0)?;
    let states = (0..particles)
        .into_par_iter()
        .with_min_len(MIN_PAR_LEN)
        .map(|i| initial.sample(&mut key.stream(0, i as u64)))
        .collect();
    Ok(Ensemble { states, step, key })
}

/// Weights used for one transition, in log form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightSummary {
    pub ess: f64,
    pub log_w_max: f64,
    pub log_w_min: f64,
    /// `eta^N_{n,k}(Gtilde_{n,k})`.
    pub eta_gtilde: f64,
}

/// Reweight by `G_{n,k}`, resample multinomially and mutate by `M_{n,k+1}`.
pub fn smc_step<S>(ens: &Ensemble<S>, model: &FKModel<S>) -> Result<Ensemble<S>>
where
    S: Clone + Send + Sync,
{
    smc_step_with_weights(ens, model).map(|(e, _)| e)
}

/// [`smc_step`] that also returns the weight diagnostics for the move.
pub fn smc_step_with_weights<S>(ens: &Ensemble<S>, model: &FKModel<S>) -> Result<(Ensemble<S>, WeightSummary)>
where
    S: Clone + Send + Sync,
{
    let n = model.horizon();
    if ens.step.n() != n {
        return Err(Error::Range(format!("ensemble horizon {} differs from model horizon {n}", ens.step.n())));
    }
    let k = ens.step.k();
    if k >= n {
        return Err(Error::Range(format!("ensemble is already at the terminal step {k}")));
    }
    let idx = ens.step;
    let pf = model.potentials();
    let log_w: Vec<f64> = ens
        .states
        .par_iter()
        .with_min_len(MIN_PAR_LEN)
        .map(|x| pf.eval_log(idx, x))
        .collect::<Result<_>>()?;
    for (index, &value) in log_w.iter().enumerate() {
        if value.is_nan() || value == f64::INFINITY {
            return Err(Error::NonFinite { index, value });
        }
    }
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return Err(Error::TotalDegeneracy { k, replicate: ens.key.replicate() });
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - top).exp()).collect();
    let mut cumulative = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for &wi in &w {
        acc += wi;
        cumulative.push(acc);
    }
    let total = acc;
    let sum_sq = compensated_sum(w.iter().map(|v| v * v));
    let sum_w = compensated_sum(w.iter().copied());
    let ub = pf.upper_bound_log();
    let eta_gtilde = compensated_sum(log_w.iter().map(|lw| (lw - ub).min(0.0).exp())) / w.len() as f64;
    let summary = WeightSummary {
        ess: sum_w * sum_w / sum_sq,
        log_w_max: top,
        log_w_min: log_w.iter().copied().fold(f64::INFINITY, f64::min),
        eta_gtilde,
    };

    let next = FlowIndex::new(n, k + 1)?;
    let kf = model.kernels();
    let key = ens.key;
    let states = (0..ens.states.len())
        .into_par_iter()
        .with_min_len(MIN_PAR_LEN)
        .map(|i| {
            let mut rng = key.stream(next.k() as u64, i as u64);
            let u: f64 = rng.random::<f64>() * total;
            let j = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            let j = if w[j] > 0.0 { j } else { last_positive_before(&w, j) };
            kernel_step(kf, next, &ens.states[j], &mut rng)
        })
        .collect::<Result<Vec<S>>>()?;
    Ok((Ensemble { states, step: next, key }, summary))
}

fn last_positive_before(w: &[f64], j: usize) -> usize {
    (0..j).rev().find(|&i| w[i] > 0.0).unwrap_or_else(|| w.iter().position(|&v| v > 0.0).unwrap_or(0))
}

/// Per-step diagnostics. Weight fields are absent at the terminal step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepSummary {
    pub k: usize,
    pub weights: Option<WeightSummary>,
    /// `eta^N_{n,k}(V)` when a drift function is attached.
    pub eta_v: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SamplerRun<S> {
    pub terminal: EmpiricalMeasure<S>,
    pub summaries: Vec<StepSummary>,
}

/// Runs the particle system from step 0 up to step `stop` (normally `n`).
pub fn run_until<S>(model: &FKModel<S>, particles: usize, key: StreamKey, drift: Option<&DriftSpec<S>>, stop: usize) -> Result<SamplerRun<S>>
where
    S: Clone + Send + Sync,
{
    let n = model.horizon();
    if stop > n {
        return Err(Error::Range(format!("stop step {stop} exceeds horizon {n}")));
    }
    let mut ens = init_ensemble(model.initial(), particles, n, key)?;
    let mut summaries = Vec::with_capacity(stop + 1);
    let eta_v = |e: &Ensemble<S>| -> Result<Option<f64>> {
        drift.map(|d| mean_of(&e.states, |x| d.value(x))).transpose()
    };
    for k in 0..stop {
        let v = eta_v(&ens)?;
        let (next, w) = smc_step_with_weights(&ens, model)?;
        summaries.push(StepSummary { k, weights: Some(w), eta_v: v });
        ens = next;
    }
    summaries.push(StepSummary { k: stop, weights: None, eta_v: eta_v(&ens)? });
    Ok(SamplerRun { terminal: ens.into_empirical(), summaries })
}

/// `n` steps from `init_ensemble`; returns `eta^N_{n,n}` and per-step summaries.
pub fn run_sampler<S>(model: &FKModel<S>, particles: usize, key: StreamKey, drift: Option<&DriftSpec<S>>) -> Result<SamplerRun<S>>
where
    S: Clone + Send + Sync,
{
    run_until(model, particles, key, drift, model.horizon())
}

pub const TRAJECTORY_HEADER: &str = "replicate,n,k,ess,log_w_max,log_w_min,eta_V,eta_Gtilde";

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Trajectory rows (no header) in the `TRAJECTORY_HEADER` column order.
pub fn trajectory_csv(replicate: u64, n: usize, summaries: &[StepSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let w = s.weights.as_ref();
        let _ = writeln!(
            out,
            "{replicate},{n},{},{},{},{},{},{}",
            s.k,
            opt(w.map(|w| w.ess)),
            opt(w.map(|w| w.log_w_max)),
            opt(w.map(|w| w.log_w_min)),
            opt(s.eta_v),
            opt(w.map(|w| w.eta_gtilde)),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::{KernelFamily, PotentialFamily};
    use crate::matrix::Matrix;
    use crate::measure::DiscreteMeasure;

    fn flat_model(n: usize) -> FKModel<usize> {
        let m = Matrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        FKModel::new(
            KernelFamily::homogeneous(m, n).unwrap(),
            PotentialFamily::from_log_table(vec![vec![0.0, 0.0]; n], 0.0).unwrap(),
            InitialDistribution::from_measure(DiscreteMeasure::new(vec![0.5, 0.5]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn dirac_initialization() {
        let init = InitialDistribution::dirac(vec![1.5, -2.0]);
        let ens = init_ensemble(&init, 10, 4, StreamKey::new(1, 0)).unwrap();
        assert!(ens.states().iter().all(|x| x == &vec![1.5, -2.0]));
        assert_eq!(ens.step(), FlowIndex::new(4, 0).unwrap());
        assert!(init_ensemble(&init, 0, 4, StreamKey::new(1, 0)).is_err());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let model = flat_model(5);
        let a = run_sampler(&model, 300, StreamKey::new(8, 2), None).unwrap();
        let b = run_sampler(&model, 300, StreamKey::new(8, 2), None).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.summaries, b.summaries);
    }

    #[test]
    fn single_particle_is_mutated() {
        let n = 3;
        let kf = KernelFamily::new(n, |_, x: &i64, _| x + 1).unwrap();
        let pf = PotentialFamily::new(n, 0.0, |_, _: &i64| -50.0).unwrap();
        let model = FKModel::new(kf, pf, InitialDistribution::dirac(0_i64)).unwrap();
        let run = run_sampler(&model, 1, StreamKey::new(0, 0), None).unwrap();
        assert_eq!(run.terminal.support(), &[3]);
    }

    #[test]
    fn stop_at_zero_returns_initial() {
        let model = flat_model(4);
        let key = StreamKey::new(5, 1);
        let run = run_until(&model, 50, key, None, 0).unwrap();
        let init = init_ensemble(model.initial(), 50, 4, key).unwrap();
        assert_eq!(run.terminal.support(), init.states());
        assert_eq!(run.summaries.len(), 1);
    }

    #[test]
    fn estimator_edge_cases() {
        let em = EmpiricalMeasure::new(vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(estimate(&em, |_| 1.0).unwrap(), 1.0);
        assert_eq!(estimate(&em, |x| *x).unwrap(), 2.0);
        let bad = EmpiricalMeasure::new(vec![1.0, 0.0]).unwrap();
        match estimate(&bad, |x| 1.0 / x) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_weights_zero_is_degenerate() {
        let n = 2;
        let kf = KernelFamily::new(n, |_, x: &f64, _| *x).unwrap();
        let pf = PotentialFamily::new(n, 0.0, |_, _: &f64| f64::NEG_INFINITY).unwrap();
        let model = FKModel::new(kf, pf, InitialDistribution::dirac(0.0)).unwrap();
        let err = run_sampler(&model, 4, StreamKey::new(0, 7), None).unwrap_err();
        assert!(matches!(err, Error::TotalDegeneracy { k: 0, replicate: 7 }));
    }

    #[test]
    fn zero_weight_particles_never_ancestors() {
        let n = 1;
        let kf = KernelFamily::new(n, |_, x: &i64, _| *x).unwrap();
        let pf = PotentialFamily::new(n, 0.0, |_, x: &i64| if *x == 3 { 0.0 } else { f64::NEG_INFINITY }).unwrap();
        let init = InitialDistribution::from_sampler("cycle", |rng| rng.random_range(0..5_i64));
        let model = FKModel::new(kf, pf, init).unwrap();
        let run = run_sampler(&model, 2000, StreamKey::new(3, 0), None).unwrap();
        assert!(run.terminal.support().iter().all(|&x| x == 3));
    }

    #[test]
    fn trajectory_rows() {
        let model = flat_model(2);
        let v = DriftSpec::from_values(vec![1.0, 2.0]).unwrap();
        let run = run_sampler(&model, 100, StreamKey::new(1, 0), Some(&v)).unwrap();
        let csv = trajectory_csv(0, 2, &run.summaries);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].split(',').count(), TRAJECTORY_HEADER.split(',').count());
        assert_eq!(lines[2].split(',').nth(3), Some(""));
        assert!(lines[2].ends_with(','));
        // flat weights: ESS is N and Gtilde is 1
        let w = run.summaries[0].weights.as_ref().unwrap();
        assert_eq!(w.ess, 100.0);
        assert_eq!(w.eta_gtilde, 1.0);
    }
}
