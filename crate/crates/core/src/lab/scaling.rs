use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{linear_fit, rmse_se};
use super::{merge_all, run_replicates, MomentDiagnostics, Status};
use crate::drift::DriftSpec;
use crate::error::{Error, Result};
use crate::fk::FKModel;
use crate::matrix::fmt_f64;

/// Two sweeps: `N` over `particles_grid` at `n = n_fixed`, and `n` over
/// `n_grid` at `N = particles_fixed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub n_fixed: usize,
    pub particles_grid: Vec<usize>,
    pub particles_fixed: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RmseCell {
    pub n: usize,
    pub particles: usize,
    pub rmse: f64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    /// Slope of `log RMSE` against `log N`.
    pub slope: Option<f64>,
    pub slope_se: Option<f64>,
    pub r_squared: Option<f64>,
    pub per_particles: Vec<RmseCell>,
    pub per_n: Vec<RmseCell>,
    /// `max_n RMSE / min_n RMSE`.
    pub ratio_point: Option<f64>,
    /// Same ratio with each side moved two standard errors toward the other.
    pub ratio_adjusted: Option<f64>,
    pub status: Status,
    pub warnings: Vec<String>,
    pub diagnostics: MomentDiagnostics,
}

impl ScalingFit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sweep,n,N,rmse,se,replicates\n");
        for (sweep, cells) in [("N", &self.per_particles), ("n", &self.per_n)] {
            for c in cells {
                let _ = writeln!(out, "{sweep},{},{},{},{},{}", c.n, c.particles, fmt_f64(c.rmse), fmt_f64(c.se), c.replicates);
            }
        }
        out
    }
}

/// Minimum number of replicates per cell.
pub const MIN_REPLICATES: usize = 100;

/// RMSE of `eta^N_{n,n}(f)` against `reference(n)` on both sweeps of `plan`.
pub fn n_scaling<S, B, F, R>(build: B, f: F, reference: R, plan: &ScalingPlan, drift: Option<&DriftSpec<S>>) -> Result<ScalingFit>
where
    S: Clone + Send + Sync,
    B: Fn(usize) -> Result<FKModel<S>>,
    F: Fn(&S) -> f64 + Sync,
    R: Fn(usize) -> Result<f64>,
{
    if plan.replicates < MIN_REPLICATES {
        return Err(Error::Precondition(format!("{} replicates per cell, need at least {MIN_REPLICATES}", plan.replicates)));
    }
    if plan.particles_grid.is_empty() || plan.n_grid.is_empty() {
        return Err(Error::Precondition("both grids must be non-empty".into()));
    }
    if plan.n_fixed == 0 || plan.n_grid.contains(&0) || plan.particles_fixed == 0 || plan.particles_grid.contains(&0) {
        return Err(Error::Precondition("grid values must be >= 1".into()));
    }
    let mut diag = MomentDiagnostics::default();
    let mut cell_of = |cell: usize, n: usize, particles: usize, model: &FKModel<S>, reference: f64| -> Result<RmseCell> {
        let out = run_replicates(model, &f, particles, plan.replicates, plan.seed, cell, drift)?;
        diag = diag.merge(merge_all(&out));
        let errs: Vec<f64> = out.iter().map(|o| o.estimate - reference).collect();
        let (rmse, se) = rmse_se(&errs);
        Ok(RmseCell { n, particles, rmse, se, replicates: plan.replicates })
    };

    let fixed_model = build(plan.n_fixed)?;
    let fixed_ref = reference(plan.n_fixed)?;
    let mut per_particles = Vec::with_capacity(plan.particles_grid.len());
    for (i, &np) in plan.particles_grid.iter().enumerate() {
        per_particles.push(cell_of(i, plan.n_fixed, np, &fixed_model, fixed_ref)?);
    }
    let offset = plan.particles_grid.len();
    let mut per_n = Vec::with_capacity(plan.n_grid.len());
    for (j, &n) in plan.n_grid.iter().enumerate() {
        let model = build(n)?;
        per_n.push(cell_of(offset + j, n, plan.particles_fixed, &model, reference(n)?)?);
    }

    let usable: Vec<&RmseCell> = per_particles.iter().filter(|c| c.rmse > 0.0).collect();
    let xs: Vec<f64> = usable.iter().map(|c| (c.particles as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|c| c.rmse.ln()).collect();
    let fit = linear_fit(&xs, &ys);

    let max = per_n.iter().max_by(|a, b| a.rmse.total_cmp(&b.rmse)).expect("non-empty");
    let min = per_n.iter().min_by(|a, b| a.rmse.total_cmp(&b.rmse)).expect("non-empty");
    let (ratio_point, ratio_adjusted) = if min.rmse > 0.0 {
        let adj = ((max.rmse - 2.0 * max.se).max(0.0) / (min.rmse + 2.0 * min.se)).max(1.0);
        (Some(max.rmse / min.rmse), Some(adj))
    } else {
        (None, None)
    };
    let status = if fit.is_some() && ratio_point.is_some() { Status::Success } else { Status::Inconclusive };
    Ok(ScalingFit {
        slope: fit.map(|f| f.slope),
        slope_se: fit.map(|f| f.slope_se),
        r_squared: fit.map(|f| f.r_squared),
        per_particles,
        per_n,
        ratio_point,
        ratio_adjusted,
        status,
        warnings: Vec::new(),
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::two_state_model;
    use crate::measure::DiscreteMeasure;

    fn plan() -> ScalingPlan {
        ScalingPlan { n_fixed: 3, particles_grid: vec![10, 40], particles_fixed: 20, n_grid: vec![2, 4], replicates: 100, seed: 5 }
    }

    #[test]
    fn constant_function_has_zero_error() {
        let fit = n_scaling(|n| two_state_model(n, DiscreteMeasure::dirac(2, 0)), |_: &usize| 2.5, |_| Ok(2.5), &plan(), None).unwrap();
        assert!(fit.per_particles.iter().chain(&fit.per_n).all(|c| c.rmse == 0.0));
        assert_eq!(fit.status, Status::Inconclusive);
    }

    #[test]
    fn too_few_replicates() {
        let mut p = plan();
        p.replicates = 10;
        let r = n_scaling(|n| two_state_model(n, DiscreteMeasure::dirac(2, 0)), |_: &usize| 0.0, |_| Ok(0.0), &p, None);
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_layout() {
        let fit = n_scaling(
            |n| two_state_model(n, DiscreteMeasure::dirac(2, 0)),
            |x: &usize| (*x == 0) as u8 as f64,
            |_| Ok(0.5),
            &plan(),
            None,
        )
        .unwrap();
        let csv = fit.to_csv();
        assert!(csv.starts_with("sweep,n,N,rmse,se,replicates\nN,3,10,"));
        assert_eq!(csv.lines().count(), 5);
    }
}
