//! Runs a validated experiment in memory, then writes its outputs atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fksmc_core::fixtures::tempered_finite_model;
use fksmc_core::lab::{
    bias_decay_exact, bias_decay_mc, drift_monitor, lemma1_audit, lemma3_grid, n_scaling, r2_counterexample, replicate_key, ScalingPlan, Status,
};
use fksmc_core::matrix::fmt_f64;
use fksmc_core::particles::{estimate, run_sampler, trajectory_csv, TRAJECTORY_HEADER};
use fksmc_core::rwm::drift_probe;
use fksmc_core::{DiscreteMeasure, DriftSpec, FKModel, FiniteModel, Minorizer, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{scaling_fixed, ExperimentKind, ResolvedModel, TestFunctionSpec, Validated};

/// Everything an experiment produces, held in memory until it is written.
pub struct Outputs {
    pub status: Status,
    /// `(file name, contents)` in write order.
    pub files: Vec<(String, String)>,
    pub result: Value,
}

impl Outputs {
    fn new(status: Status, result: Value) -> Self {
        Outputs { status, files: Vec::new(), result }
    }

    fn file(mut self, name: &str, contents: String) -> Self {
        self.files.push((name.to_string(), contents));
        self
    }
}

fn worst(a: Status, b: Status) -> Status {
    use Status::*;
    match (a, b) {
        (Violated, _) | (_, Violated) => Violated,
        (Inconclusive, _) | (_, Inconclusive) => Inconclusive,
        _ => Success,
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

type TestFn = Box<dyn Fn(&Vec<f64>) -> f64 + Sync>;

struct Finite<'a> {
    family: &'a fksmc_core::TemperedFamily<usize>,
    proposal: &'a fksmc_core::Matrix,
    mu: &'a DiscreteMeasure,
    f: Vec<f64>,
    drift: DriftSpec<usize>,
}

impl Finite<'_> {
    fn model(&self, n: usize) -> Result<FKModel<usize>> {
        tempered_finite_model(self.family, self.proposal, n, self.mu.clone())
    }

    fn exact_terminal(&self, n: usize) -> Result<f64> {
        Ok(FiniteModel::from_model(&self.model(n)?)?.eta_exact(n)?.integrate(&self.f))
    }
}

/// Runs the experiment of `v` on the current rayon pool.
pub fn execute(v: &Validated) -> Result<Outputs> {
    let cfg = &v.config;
    match &v.model {
        ResolvedModel::Finite { family, proposal, mu } => {
            let m = mu.len();
            let f = match cfg.test_function {
                Some(TestFunctionSpec::Constant { value }) => vec![value; m],
                Some(TestFunctionSpec::Indicator { state }) => (0..m).map(|x| (x == state) as u8 as f64).collect(),
                _ => (0..m).map(|x| (x == 0) as u8 as f64).collect(),
            };
            let drift = DriftSpec::from_values(family.drift_function(cfg.model.beta)?.tabulate(m))?.with_constants(
                cfg.drift.lambda,
                cfg.drift.level,
                cfg.drift.b,
            )?;
            execute_finite(v, &Finite { family, proposal, mu, f, drift })
        }
        ResolvedModel::Continuous { setup, dim, target_mean } => {
            let (f, reference): (TestFn, f64) = match cfg.test_function {
                Some(TestFunctionSpec::Constant { value }) => (Box::new(move |_| value), value),
                Some(TestFunctionSpec::Coordinate { index }) => (Box::new(move |x| x[index]), target_mean[index]),
                _ => (Box::new(|x| x[0]), target_mean[0]),
            };
            let drift = setup.family.drift_function(cfg.model.beta)?;
            let build = |n| setup.model(n);
            let particles = *cfg.grids.particles.iter().max().expect("validated");
            match cfg.experiment {
                ExperimentKind::BiasDecay => {
                    let fit = bias_decay_mc(build, &f, reference, &cfg.grids.n, particles, cfg.replicates, cfg.seed, Some(&drift))?;
                    Ok(Outputs::new(fit.status, json!({ "reference": reference, "monte_carlo": to_json(&fit) })).file("bias_mc.csv", fit.to_csv()))
                }
                ExperimentKind::NScaling => {
                    let plan = plan(v);
                    let fit = n_scaling(build, &f, |_| Ok(reference), &plan, Some(&drift))?;
                    Ok(Outputs::new(fit.status, json!({ "plan": to_json(&plan), "reference": reference, "fit": to_json(&fit) }))
                        .file("scaling.csv", fit.to_csv()))
                }
                ExperimentKind::DriftCheck => {
                    let mon = drift_monitor(build, &drift, &cfg.grids.n, particles, cfg.replicates, cfg.seed)?;
                    let mut csv = String::from("gamma,radius,lambda_hat,band\n");
                    let mut probes = Vec::new();
                    for gamma in [setup.family.gamma_floor(), 1.0] {
                        let rep = drift_probe(
                            &setup.family,
                            gamma,
                            &setup.increment,
                            &drift,
                            &cfg.drift.radii,
                            *dim,
                            cfg.drift.proposals,
                            cfg.seed,
                        )?;
                        for s in &rep.shells {
                            let _ = writeln!(csv, "{},{},{},{}", fmt_f64(gamma), fmt_f64(s.radius), fmt_f64(s.lambda_hat), fmt_f64(s.band));
                        }
                        probes.push(to_json(&rep));
                    }
                    Ok(Outputs::new(mon.status, json!({ "monitor": to_json(&mon), "probes": probes }))
                        .file("drift_monitor.csv", mon.to_csv())
                        .file("drift_probe.csv", csv))
                }
                ExperimentKind::Run => run(v, build, &f, Some(&drift)),
                ExperimentKind::Counterexample => counterexample(v),
                ExperimentKind::Lemma1Audit => unreachable!("rejected at validation"),
            }
        }
    }
}

fn plan(v: &Validated) -> ScalingPlan {
    let (n_fixed, particles_fixed) = scaling_fixed(&v.config);
    ScalingPlan {
        n_fixed,
        particles_grid: v.config.grids.particles.clone(),
        particles_fixed,
        n_grid: v.config.grids.n.clone(),
        replicates: v.config.replicates,
        seed: v.config.seed,
    }
}

fn execute_finite(v: &Validated, fx: &Finite) -> Result<Outputs> {
    let cfg = &v.config;
    let build = |n| fx.model(n);
    let particles = *cfg.grids.particles.iter().max().expect("validated");
    let f = |x: &usize| fx.f[*x];
    match cfg.experiment {
        ExperimentKind::BiasDecay => {
            let reference = fx.family.tempered_measure(1.0, fx.mu.len())?.integrate(&fx.f);
            let exact = bias_decay_exact(build, &fx.f, reference, &cfg.grids.n)?;
            let mc = if cfg.replicates >= 2 {
                Some(bias_decay_mc(build, f, reference, &cfg.grids.n, particles, cfg.replicates, cfg.seed, Some(&fx.drift))?)
            } else {
                None
            };
            // The exact table decides the status; the Monte Carlo fit is supplementary.
            let mut out = Outputs::new(exact.status, json!({ "reference": reference, "exact": to_json(&exact), "monte_carlo": mc.as_ref().map(to_json) }))
                .file("bias_exact.csv", exact.to_csv());
            if let Some(mc) = mc {
                out = out.file("bias_mc.csv", mc.to_csv());
            }
            Ok(out)
        }
        ExperimentKind::NScaling => {
            let plan = plan(v);
            let fit = n_scaling(build, f, |n| fx.exact_terminal(n), &plan, Some(&fx.drift))?;
            Ok(Outputs::new(fit.status, json!({ "plan": to_json(&plan), "fit": to_json(&fit) })).file("scaling.csv", fit.to_csv()))
        }
        ExperimentKind::DriftCheck => {
            let mon = drift_monitor(build, &fx.drift, &cfg.grids.n, particles, cfg.replicates, cfg.seed)?;
            Ok(Outputs::new(mon.status, json!({ "monitor": to_json(&mon) })).file("drift_monitor.csv", mon.to_csv()))
        }
        ExperimentKind::Lemma1Audit => {
            let m = fx.mu.len();
            let nu = match &cfg.drift.nu {
                Some(w) if w.len() == m => DiscreteMeasure::from_unnormalized(w.clone())?,
                Some(_) => return Err(fksmc_core::Error::Precondition(format!("drift.nu needs {m} weights"))),
                None => DiscreteMeasure::dirac(m, 0),
            };
            let minorizer = Minorizer::new(cfg.drift.epsilon, nu)?;
            let audit = lemma1_audit(build, &cfg.grids.n, &fx.drift, &minorizer)?;
            let grid = lemma3_grid(build, &cfg.grids.n, &fx.drift, fx.mu)?;
            Ok(Outputs::new(worst(audit.status, grid.status), json!({ "audit": to_json(&audit), "mass_bound": to_json(&grid) }))
                .file("lemma1_audit.csv", audit.to_csv())
                .file("mass_bound.csv", grid.to_csv()))
        }
        ExperimentKind::Run => run(v, build, f, Some(&fx.drift)),
        ExperimentKind::Counterexample => counterexample(v),
    }
}

fn counterexample(v: &Validated) -> Result<Outputs> {
    let c = &v.config.counterexample;
    let probe = r2_counterexample(c.epsilon, c.delta)?;
    let mut csv = String::from("atom,x1,x2,weight,g,v\n");
    for (name, a) in [("y", &probe.y), ("y_prime", &probe.y_prime)] {
        let _ = writeln!(csv, "{name},{},{},{},{},{}", fmt_f64(a.point[0]), fmt_f64(a.point[1]), fmt_f64(a.weight), fmt_f64(a.g), fmt_f64(a.v));
    }
    Ok(Outputs::new(probe.status, json!({ "probe": to_json(&probe) })).file("counterexample.csv", csv))
}

/// Plain sampler runs over every `(n, N)` cell: trajectories and terminal estimates.
fn run<S, B, F>(v: &Validated, build: B, f: F, drift: Option<&DriftSpec<S>>) -> Result<Outputs>
where
    S: Clone + Send + Sync,
    B: Fn(usize) -> Result<FKModel<S>>,
    F: Fn(&S) -> f64 + Sync,
{
    let cfg = &v.config;
    let mut traj = format!("{TRAJECTORY_HEADER}\n");
    let mut est = String::from("n,N,replicate,estimate\n");
    let mut cell = 0;
    for &n in &cfg.grids.n {
        let model = build(n)?;
        for &particles in &cfg.grids.particles {
            let rows = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let run = run_sampler(&model, particles, replicate_key(cfg.seed, cell, r), drift)?;
                    Ok((estimate(&run.terminal, &f)?, trajectory_csv(r as u64, n, &run.summaries)))
                })
                .collect::<Result<Vec<_>>>()?;
            for (r, (e, t)) in rows.into_iter().enumerate() {
                let _ = writeln!(est, "{n},{particles},{r},{}", fmt_f64(e));
                traj.push_str(&t);
            }
            cell += 1;
        }
    }
    Ok(Outputs::new(Status::Success, json!({ "cells": cell })).file("estimates.csv", est).file("trajectory.csv", traj))
}

/// Writes every file, then `summary.json`, each through a temporary file and a rename.
pub fn write_outputs(dir: &Path, v: &Validated, out: &Outputs) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let generated_at = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = json!({
        "experiment": v.config.experiment,
        "seed": v.config.seed,
        "status": out.status,
        "warnings": v.warnings,
        "hypotheses": v.config.theory.check(v.model.gamma_floor(), v.config.model.beta),
        "config": v.config,
        "files": out.files.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>(),
        "result": out.result,
        "generated_at_unix": generated_at,
    });
    let mut all: Vec<(&str, String)> = out.files.iter().map(|(n, c)| (n.as_str(), c.clone())).collect();
    all.push(("summary.json", serde_json::to_string_pretty(&summary).expect("json value") + "\n"));
    for (name, contents) in all {
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents)?;
        fs::rename(&tmp, dir.join(name))?;
    }
    Ok(())
}
