//! Small reference models used by the experiments, the CLI and the tests.

use rand::Rng;

use crate::drift::{DriftSpec, Minorizer};
use crate::error::Result;
use crate::fk::{FKModel, InitialDistribution, KernelFamily, PotentialFamily};
use crate::matrix::Matrix;
use crate::measure::DiscreteMeasure;
use crate::rwm::metropolis_kernel_family;
use crate::tempering::{LogTarget, TemperedFamily, TemperingSchedule};

/// Log target of the two-state tempered fixture.
pub const TWO_STATE_LOG_WEIGHTS: [f64; 2] = [0.0, -1.5];
pub const TWO_STATE_GAMMA_FLOOR: f64 = 0.7;
pub const TWO_STATE_BETA: f64 = 0.5;

/// Homogeneous model with `M = [[0.9, 0.1], [0.2, 0.8]]`, `G = (1, 0.5)` and `mu = (0.3, 0.7)`.
pub fn basic_two_state(n: usize) -> Result<FKModel<usize>> {
    let m = Matrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]])?;
    FKModel::new(
        KernelFamily::homogeneous(m, n)?,
        PotentialFamily::from_log_table(vec![vec![0.0, 0.5_f64.ln()]; n], 0.0)?,
        InitialDistribution::from_measure(DiscreteMeasure::new(vec![0.3, 0.7])?),
    )
}

/// Symmetric proposal `[[0.8, 0.2], [0.2, 0.8]]`.
pub fn two_state_proposal() -> Matrix {
    Matrix::from_rows(vec![vec![0.8, 0.2], vec![0.2, 0.8]]).expect("static matrix")
}

/// Uniform proposal over `m` states, diagonal included.
pub fn uniform_proposal(m: usize) -> Matrix {
    Matrix::from_rows(vec![vec![1.0 / m as f64; m]; m]).expect("non-empty")
}

pub fn tempered_finite_family(log_weights: Vec<f64>, gamma_floor: f64) -> Result<TemperedFamily<usize>> {
    Ok(TemperedFamily::new(LogTarget::finite(log_weights)?, TemperingSchedule::linear(gamma_floor)?))
}

/// `pibar = (1, e^{-1.5})` under the linear schedule from 0.7.
pub fn two_state_family() -> Result<TemperedFamily<usize>> {
    tempered_finite_family(TWO_STATE_LOG_WEIGHTS.to_vec(), TWO_STATE_GAMMA_FLOOR)
}

/// Tempered finite FK model: Metropolis kernels for `pi_{gamma(k/n)}` and the
/// tempering potentials of `fam`.
pub fn tempered_finite_model(fam: &TemperedFamily<usize>, proposal: &Matrix, n: usize, mu: DiscreteMeasure) -> Result<FKModel<usize>> {
    FKModel::new(
        metropolis_kernel_family(fam, n, proposal)?,
        fam.build_potentials(n)?,
        InitialDistribution::from_measure(mu),
    )
}

/// Two-state tempered fixture started from `mu`.
pub fn two_state_model(n: usize, mu: DiscreteMeasure) -> Result<FKModel<usize>> {
    tempered_finite_model(&two_state_family()?, &two_state_proposal(), n, mu)
}

/// Drift and minorization inputs that hold for every kernel of the two-state
/// fixture: `V = pi^{-beta gamma_floor}` normalized to `V(0) = 1`,
/// `lambda = 0.95`, `b = 0.2`, level `1` (so `C = {0}`), `nu = delta_0`, `eps = 0.9`.
pub fn two_state_drift_inputs() -> Result<(DriftSpec<usize>, Minorizer)> {
    let v = two_state_family()?.drift_function(TWO_STATE_BETA)?;
    let values = v.tabulate(2);
    let drift = DriftSpec::from_values(values)?.with_constants(0.95, 1.0, 0.2)?;
    let minorizer = Minorizer::new(0.9, DiscreteMeasure::dirac(2, 0))?;
    Ok((drift, minorizer))
}

/// Random model with `m` states and horizon `n`: kernel entries uniform on
/// `[0.05, 1]` before row normalization, `log G` uniform on `[-2, 0]`, and a
/// random initial law.
pub fn random_finite_model<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Result<FKModel<usize>> {
    let mats = (0..n)
        .map(|_| {
            let rows = (0..m)
                .map(|_| {
                    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    let mut row: Vec<f64> = raw.iter().map(|v| v / s).collect();
                    let rest: f64 = row[1..].iter().sum();
                    row[0] = 1.0 - rest;
                    row
                })
                .collect();
            Matrix::from_rows(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let log_g = (0..n).map(|_| (0..m).map(|_| rng.random_range(-2.0..0.0)).collect()).collect();
    let mu = DiscreteMeasure::from_unnormalized((0..m).map(|_| rng.random_range(0.05..1.0)).collect())?;
    FKModel::new(
        KernelFamily::from_matrices(mats)?,
        PotentialFamily::from_log_table(log_g, 0.0)?,
        InitialDistribution::from_measure(mu),
    )
}
