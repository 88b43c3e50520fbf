use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::stats::linear_fit;
use super::{replicate_key, Status};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::FKModel;
use crate::matrix::fmt_f64;
use crate::particles::run_sampler;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonitorRow {
    pub n: usize,
    /// `max_{k >= 1, r} eta^N_{n,k}(V)`.
    pub max_eta_v: f64,
    /// `min_{k < n, r} eta^N_{n,k}(Gtilde_{n,k})`.
    pub min_eta_gtilde: Option<f64>,
    /// Least-squares `eta_k(V) ~ intercept + slope eta_{k-1}(V)` pooled over replicates.
    pub drift_slope: Option<f64>,
    pub drift_intercept: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftMonitor {
    pub particles: usize,
    pub replicates: usize,
    pub rows: Vec<MonitorRow>,
    /// `max_eta_v` of the last `n` over that of the first.
    pub growth_ratio: f64,
    pub status: Status,
}

impl DriftMonitor {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut out = String::from("n,max_eta_V,min_eta_Gtilde,drift_slope,drift_intercept\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.n,
                fmt_f64(r.max_eta_v),
                opt(r.min_eta_gtilde),
                opt(r.drift_slope),
                opt(r.drift_intercept)
            );
        }
        out
    }
}

/// Records `eta^N_{n,k}(V)` along the particle flow for each `n` in `ns`.
pub fn drift_monitor<S, B>(build: B, drift: &DriftSpec<S>, ns: &[usize], particles: usize, replicates: usize, seed: u64) -> Result<DriftMonitor>
where
    S: Clone + Send + Sync,
    B: Fn(usize) -> Result<FKModel<S>>,
{
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Precondition("n grid must be non-empty with every n >= 1".into()));
    }
    if replicates == 0 {
        return Err(Error::Precondition("need at least one replicate".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (cell, &n) in ns.iter().enumerate() {
        let model = build(n)?;
        let runs = (0..replicates)
            .into_par_iter()
            .map(|r| run_sampler(&model, particles, replicate_key(seed, cell, r), Some(drift)).map(|run| run.summaries))
            .collect::<Result<Vec<_>>>()?;
        let mut max_eta_v = f64::NEG_INFINITY;
        let mut min_g: Option<f64> = None;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for summaries in &runs {
            for pair in summaries.windows(2) {
                let (prev, cur) = (pair[0].eta_v.expect("drift attached"), pair[1].eta_v.expect("drift attached"));
                max_eta_v = max_eta_v.max(cur);
                xs.push(prev);
                ys.push(cur);
            }
            for w in summaries.iter().filter_map(|s| s.weights.as_ref()) {
                min_g = Some(min_g.map_or(w.eta_gtilde, |m| m.min(w.eta_gtilde)));
            }
        }
        let fit = linear_fit(&xs, &ys);
        rows.push(MonitorRow {
            n,
            max_eta_v,
            min_eta_gtilde: min_g,
            drift_slope: fit.map(|f| f.slope),
            drift_intercept: fit.map(|f| f.intercept),
        });
    }
    let growth_ratio = rows[rows.len() - 1].max_eta_v / rows[0].max_eta_v;
    let status = if growth_ratio.is_finite() { Status::Success } else { Status::Inconclusive };
    Ok(DriftMonitor { particles, replicates, rows, growth_ratio, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{two_state_drift_inputs, two_state_model};
    use crate::measure::DiscreteMeasure;

    #[test]
    fn finite_fixture_stays_bounded() {
        let (drift, _) = two_state_drift_inputs().unwrap();
        let vmax = drift.tabulate(2).into_iter().fold(0.0, f64::max);
        let mon = drift_monitor(|n| two_state_model(n, DiscreteMeasure::dirac(2, 1)), &drift, &[2, 8], 200, 4, 1).unwrap();
        assert_eq!(mon.rows.len(), 2);
        assert!(mon.rows.iter().all(|r| r.max_eta_v <= vmax && r.max_eta_v >= 1.0));
        assert!(mon.to_csv().starts_with("n,max_eta_V,min_eta_Gtilde,drift_slope,drift_intercept\n2,"));
    }
}
