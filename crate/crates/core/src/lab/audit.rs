use std::fmt::Write as _;

use serde::Serialize;

use super::Status;
use crate::drift::{DriftSpec, Minorizer};
use crate::error::{Error, Result};
use crate::fk::FKModel;
use crate::matrix::fmt_f64;
use crate::measure::DiscreteMeasure;
use crate::oracle::{lemma3_constant, FiniteModel, NormConstReport, Violation};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Row {
    pub n: usize,
    pub k: usize,
    pub eps_nk: f64,
    pub b_nk: f64,
    /// `None` at `k = 0`, where no transition is checked.
    pub minorization: Option<bool>,
    pub drift: Option<bool>,
    /// Drift inequality with `b_{n,k}` in place of `b_{n,k-1}`.
    pub drift_same_index: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Audit {
    pub rows: Vec<Lemma1Row>,
    /// `(n, min_k eps_{n,k})`.
    pub eps_by_n: Vec<(usize, f64)>,
    pub inf_eps: f64,
    pub violations: Vec<String>,
    pub status: Status,
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "na",
    }
}

impl Lemma1Audit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,k,eps_nk,b_nk,minorization,drift,drift_same_index\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                r.k,
                fmt_f64(r.eps_nk),
                fmt_f64(r.b_nk),
                flag(r.minorization),
                flag(r.drift),
                flag(r.drift_same_index)
            );
        }
        out
    }

    /// Whether both inequalities held everywhere on inputs that were themselves valid.
    pub fn all_pass(&self) -> bool {
        self.status == Status::Success
    }
}

fn describe(n: usize, what: &str, v: &Violation) -> String {
    match v.y {
        Some(y) => format!("n={n} k={} x={} y={y}: {what} {} < {}", v.k, v.x, v.lhs, v.rhs),
        None => format!("n={n} k={} x={}: {what} {} > {}", v.k, v.x, v.lhs, v.rhs),
    }
}

/// Tabulates the tilted minorization and drift inequalities over every `(n, k)`.
pub fn lemma1_audit<B>(build: B, ns: &[usize], drift: &DriftSpec<usize>, minorizer: &Minorizer) -> Result<Lemma1Audit>
where
    B: Fn(usize) -> Result<FKModel<usize>>,
{
    if ns.is_empty() {
        return Err(Error::Precondition("n grid is empty".into()));
    }
    let mut rows = Vec::new();
    let mut eps_by_n = Vec::with_capacity(ns.len());
    let mut violations = Vec::new();
    for &n in ns {
        let fm = FiniteModel::from_model(&build(n)?)?;
        let mut min_eps = f64::INFINITY;
        for k in 0..=n {
            let rep = fm.tilted_drift_objects(k, drift, minorizer)?;
            if k == 0 {
                violations.extend(rep.precondition_violations.iter().map(|s| format!("n={n} input {s}")));
            }
            for v in &rep.minorization_violations {
                violations.push(describe(n, "minorization", v));
            }
            for v in &rep.drift_violations {
                violations.push(describe(n, "drift", v));
            }
            let checked = k > 0;
            min_eps = min_eps.min(rep.objects.eps_nk);
            rows.push(Lemma1Row {
                n,
                k,
                eps_nk: rep.objects.eps_nk,
                b_nk: rep.objects.b_nk,
                minorization: checked.then(|| rep.minorization_holds()),
                drift: checked.then(|| rep.drift_holds()),
                drift_same_index: checked.then_some(rep.drift_violations_same_index.is_empty()),
            });
        }
        eps_by_n.push((n, min_eps));
    }
    let inf_eps = eps_by_n.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let status = if violations.is_empty() { Status::Success } else { Status::Violated };
    Ok(Lemma1Audit { rows, eps_by_n, inf_eps, violations, status })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma3Report {
    pub per_n: Vec<NormConstReport>,
    /// `sup_n ||U_n||_V (1 + b / (1 - lambda))`.
    pub c_grid: f64,
    pub mu_v: f64,
    /// `exp(-c_grid mu(V))`.
    pub bound: f64,
    /// `min_{n,k} mu(Qtilde_{n,k:n}(1))`.
    pub min_mass: f64,
    pub argmin: (usize, usize),
    pub jensen_holds: bool,
    pub status: Status,
}

impl Lemma3Report {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,min_mass,argmin_k,u_v_norm,c,bound,holds\n");
        for r in &self.per_n {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.n,
                fmt_f64(r.min_mass),
                r.argmin_k,
                fmt_f64(r.u_v_norm),
                fmt_f64(r.c_const),
                fmt_f64(r.bound),
                r.holds
            );
        }
        out
    }
}

/// Lower bound on the normalizing masses over an `n` grid with one constant
/// for the whole grid. The comparison is exact.
pub fn lemma3_grid<B>(build: B, ns: &[usize], drift: &DriftSpec<usize>, mu: &DiscreteMeasure) -> Result<Lemma3Report>
where
    B: Fn(usize) -> Result<FKModel<usize>>,
{
    if ns.is_empty() {
        return Err(Error::Precondition("n grid is empty".into()));
    }
    let (lambda, _, b) = drift.constants()?;
    let per_n = ns
        .iter()
        .map(|&n| FiniteModel::from_model(&build(n)?)?.norm_const_lower_bound_check(drift, mu))
        .collect::<Result<Vec<_>>>()?;
    let sup_u = per_n.iter().map(|r| r.u_v_norm).fold(0.0, f64::max);
    let c_grid = lemma3_constant(sup_u, lambda, b);
    let mu_v = per_n[0].mu_v;
    let bound = (-c_grid * mu_v).exp();
    let worst = per_n.iter().min_by(|a, b| a.min_mass.total_cmp(&b.min_mass)).expect("non-empty");
    let min_mass = worst.min_mass;
    let argmin = (worst.n, worst.argmin_k);
    let jensen_holds = per_n.iter().all(|r| r.jensen_holds);
    let status = if min_mass >= bound { Status::Success } else { Status::Violated };
    Ok(Lemma3Report { per_n, c_grid, mu_v, bound, min_mass, argmin, jensen_holds, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{basic_two_state, two_state_drift_inputs, two_state_model};

    #[test]
    fn fixture_passes_small_grid() {
        let (drift, mz) = two_state_drift_inputs().unwrap();
        let audit = lemma1_audit(|n| two_state_model(n, DiscreteMeasure::dirac(2, 1)), &[2, 5], &drift, &mz).unwrap();
        assert!(audit.all_pass(), "{:?}", audit.violations);
        assert_eq!(audit.rows.len(), 3 + 6);
        assert!(audit.inf_eps > 0.0);
        assert!(audit.to_csv().contains("\n2,0,"));
    }

    #[test]
    fn small_lambda_is_reported() {
        let (drift, mz) = two_state_drift_inputs().unwrap();
        let broken = drift.with_constants(0.2, 1.0, 0.2).unwrap();
        let audit = lemma1_audit(|n| two_state_model(n, DiscreteMeasure::dirac(2, 1)), &[3], &broken, &mz).unwrap();
        assert_eq!(audit.status, Status::Violated);
        assert!(audit.violations.iter().any(|v| v.starts_with("n=3 input drift: M_{n,1}V(1)")), "{:?}", audit.violations);
    }

    #[test]
    fn lemma3_holds_on_fixture() {
        let (drift, _) = two_state_drift_inputs().unwrap();
        let mu = DiscreteMeasure::dirac(2, 1);
        let rep = lemma3_grid(|n| two_state_model(n, mu.clone()), &[1, 4, 9], &drift, &mu).unwrap();
        assert_eq!(rep.status, Status::Success);
        assert!(rep.jensen_holds);
    }

    #[test]
    fn lemma3_rejects_bad_drift() {
        let (drift, _) = two_state_drift_inputs().unwrap();
        let mu = DiscreteMeasure::dirac(2, 1);
        assert!(matches!(lemma3_grid(basic_two_state, &[3], &drift.with_constants(0.1, 1.0, 1e-3).unwrap(), &mu), Err(Error::Precondition(_))));
    }
}
