use std::fmt::Write as _;

use serde::Serialize;

use super::stats::{linear_fit, mean_se};
use super::{merge_all, run_replicates, MomentDiagnostics, Status};
use crate::error::{Error, Result};
use crate::fk::FKModel;
use crate::matrix::fmt_f64;
use crate::oracle::FiniteModel;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasCell {
    pub n: usize,
    pub bias: f64,
    /// Zero for exact cells.
    pub se: f64,
    /// Whether the cell entered the log-linear fit.
    pub included: bool,
}

/// Fit of `log |bias(n)|` against `n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r_squared: Option<f64>,
    pub cells: Vec<BiasCell>,
    pub status: Status,
    pub note: Option<String>,
    pub diagnostics: Option<MomentDiagnostics>,
}

impl DecayFit {
    fn from_cells(cells: Vec<BiasCell>, diagnostics: Option<MomentDiagnostics>) -> DecayFit {
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            cells.iter().filter(|c| c.included).map(|c| (c.n as f64, c.bias.abs().ln())).unzip();
        match linear_fit(&xs, &ys) {
            Some(fit) => DecayFit {
                slope: Some(fit.slope),
                intercept: Some(fit.intercept),
                r_squared: Some(fit.r_squared),
                cells,
                status: Status::Success,
                note: None,
                diagnostics,
            },
            None => DecayFit {
                slope: None,
                intercept: None,
                r_squared: None,
                cells,
                status: Status::Inconclusive,
                note: Some(format!("only {} cell(s) rise above the noise floor", xs.len())),
                diagnostics,
            },
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,bias,se,included\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{}", c.n, fmt_f64(c.bias), fmt_f64(c.se), c.included);
        }
        out
    }
}

fn check_grid(ns: &[usize]) -> Result<()> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::Precondition("n grid must be non-empty with every n >= 1".into()));
    }
    Ok(())
}

/// Exact `eta_{n,n}(f) - reference` on finite models. Cells at roundoff level
/// (`|bias| <= 1e-13 max(1, |reference|)`) are left out of the fit.
pub fn bias_decay_exact<B>(build: B, f: &[f64], reference: f64, ns: &[usize]) -> Result<DecayFit>
where
    B: Fn(usize) -> Result<FKModel<usize>>,
{
    check_grid(ns)?;
    let floor = 1e-13 * reference.abs().max(1.0);
    let mut cells = Vec::with_capacity(ns.len());
    for &n in ns {
        let fm = FiniteModel::from_model(&build(n)?)?;
        if f.len() != fm.state_count() {
            return Err(Error::Precondition("test function length differs from state count".into()));
        }
        let bias = fm.eta_exact(n)?.integrate(f) - reference;
        cells.push(BiasCell { n, bias, se: 0.0, included: bias.abs() > floor });
    }
    Ok(DecayFit::from_cells(cells, None))
}

/// Monte Carlo bias of `eta^N_{n,n}(f)` over replicates. Cells with
/// `|bias| < 3 se` are excluded from the fit.
#[allow(clippy::too_many_arguments)]
pub fn bias_decay_mc<S, B, F>(
    build: B,
    f: F,
    reference: f64,
    ns: &[usize],
    particles: usize,
    replicates: usize,
    seed: u64,
    drift: Option<&crate::drift::DriftSpec<S>>,
) -> Result<DecayFit>
where
    S: Clone + Send + Sync,
    B: Fn(usize) -> Result<FKModel<S>>,
    F: Fn(&S) -> f64 + Sync,
{
    check_grid(ns)?;
    if replicates < 2 {
        return Err(Error::Precondition("need at least two replicates".into()));
    }
    let mut cells = Vec::with_capacity(ns.len());
    let mut diag = MomentDiagnostics::default();
    for (cell, &n) in ns.iter().enumerate() {
        let model = build(n)?;
        let out = run_replicates(&model, &f, particles, replicates, seed, cell, drift)?;
        diag = diag.merge(merge_all(&out));
        let ests: Vec<f64> = out.iter().map(|o| o.estimate).collect();
        let (mean, se) = mean_se(&ests);
        let bias = mean - reference;
        cells.push(BiasCell { n, bias, se, included: bias.abs() >= 3.0 * se && bias != 0.0 });
    }
    Ok(DecayFit::from_cells(cells, Some(diag)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{two_state_family, two_state_model};
    use crate::measure::DiscreteMeasure;

    #[test]
    fn stationary_start_has_no_bias() {
        let fam = two_state_family().unwrap();
        let start = fam.tempered_measure(fam.gamma_floor(), 2).unwrap();
        let target = fam.tempered_measure(1.0, 2).unwrap();
        let f = [1.0, 0.0];
        let fit = bias_decay_exact(|n| two_state_model(n, start.clone()), &f, target.integrate(&f), &[2, 4, 8]).unwrap();
        assert!(fit.cells.iter().all(|c| c.bias.abs() < 1e-14));
        assert_eq!(fit.status, Status::Inconclusive);
    }

    #[test]
    fn dirac_start_decays() {
        let fam = two_state_family().unwrap();
        let target = fam.tempered_measure(1.0, 2).unwrap();
        let f = [1.0, 0.0];
        let ns: Vec<usize> = (1..=12).collect();
        let fit =
            bias_decay_exact(|n| two_state_model(n, DiscreteMeasure::dirac(2, 1)), &f, target.integrate(&f), &ns).unwrap();
        assert!(fit.slope.unwrap() < 0.0);
        assert!(fit.to_csv().starts_with("n,bias,se,included\n1,"));
    }
}
