//! Feynman-Kac model building blocks shared by the oracle and the sampler.
//!
//! A model for horizon `n` consists of Markov kernels `M_{n,k}` for
//! `1 <= k <= n`, strictly positive potentials `G_{n,k}` for `0 <= k < n`
//! (held in log form together with a log upper bound), and an initial law.
//! States are an opaque type parameter: finite models use `usize` labels and
//! Euclidean models use `Vec<f64>`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::measure::{sample_row, DiscreteMeasure};
use crate::rng::StreamRng;

/// Position `k` inside a model of horizon `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct FlowIndex {
    n: usize,
    k: usize,
}

impl FlowIndex {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Range("horizon n must be >= 1".into()));
        }
        if k > n {
            return Err(Error::Range(format!("step k = {k} exceeds horizon n = {n}")));
        }
        Ok(FlowIndex { n, k })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Algorithmic time `k / n`.
    pub fn fraction(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    fn require_potential(&self) -> Result<()> {
        if self.k >= self.n {
            return Err(Error::Range(format!("potential index k = {} must be < n = {}", self.k, self.n)));
        }
        Ok(())
    }

    fn require_kernel(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Range(format!("kernel index k must be in [1, {}]", self.n)));
        }
        Ok(())
    }
}

impl fmt::Display for FlowIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, k={})", self.n, self.k)
    }
}

type LogPotentialFn<S> = dyn Fn(FlowIndex, &S) -> f64 + Send + Sync;
type SampleFn<S> = dyn Fn(FlowIndex, &S, &mut StreamRng) -> S + Send + Sync;
type InitFn<S> = dyn Fn(&mut StreamRng) -> S + Send + Sync;

/// `log G_{n,k}(x)` for `0 <= k < n` together with `log Gbar`.
pub struct PotentialFamily<S> {
    horizon: usize,
    eval_log: Arc<LogPotentialFn<S>>,
    upper_bound_log: f64,
    table: Option<Arc<Vec<Vec<f64>>>>,
}

impl<S> Clone for PotentialFamily<S> {
    fn clone(&self) -> Self {
        PotentialFamily {
            horizon: self.horizon,
            eval_log: Arc::clone(&self.eval_log),
            upper_bound_log: self.upper_bound_log,
            table: self.table.clone(),
        }
    }
}

impl<S> PotentialFamily<S> {
    /// The caller vouches that `eval_log <= upper_bound_log` everywhere; the
    /// bound is re-checked at every evaluated point.
    pub fn new<F>(horizon: usize, upper_bound_log: f64, eval_log: F) -> Result<Self>
    where
        F: Fn(FlowIndex, &S) -> f64 + Send + Sync + 'static,
    {
        if horizon == 0 {
            return Err(Error::Range("horizon n must be >= 1".into()));
        }
        if !upper_bound_log.is_finite() {
            return Err(Error::InvalidModel("log upper bound must be finite".into()));
        }
        Ok(PotentialFamily { horizon, eval_log: Arc::new(eval_log), upper_bound_log, table: None })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn upper_bound_log(&self) -> f64 {
        self.upper_bound_log
    }

    /// Raw `log G_{n,k}(x)`.
    pub fn eval_log(&self, idx: FlowIndex, x: &S) -> Result<f64> {
        self.check(idx)?;
        Ok((self.eval_log)(idx, x))
    }

    fn check(&self, idx: FlowIndex) -> Result<()> {
        if idx.n != self.horizon {
            return Err(Error::Range(format!("index {idx} does not match horizon {}", self.horizon)));
        }
        idx.require_potential()
    }
}

impl PotentialFamily<usize> {
    /// Finite potentials from a table `log_g[k][x]`, `k = 0..n`.
    ///
    /// Zero potentials (log = -inf) are rejected, as is any entry above the bound.
    pub fn from_log_table(log_g: Vec<Vec<f64>>, upper_bound_log: f64) -> Result<Self> {
        let horizon = log_g.len();
        let m = log_g.first().map_or(0, Vec::len);
        if horizon == 0 || m == 0 {
            return Err(Error::InvalidModel("empty potential table".into()));
        }
        for (k, row) in log_g.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidModel(format!("potential row {k} has wrong length")));
            }
            for (x, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!("potential G[{k}][{x}] is zero or non-finite")));
                }
                if v > upper_bound_log + 1e-12 {
                    return Err(Error::InvalidModel(format!("potential G[{k}][{x}] exceeds the declared bound")));
                }
            }
        }
        let table = Arc::new(log_g);
        let lookup = Arc::clone(&table);
        let mut pf = PotentialFamily::new(horizon, upper_bound_log, move |idx: FlowIndex, x: &usize| {
            lookup[idx.k][*x]
        })?;
        pf.table = Some(table);
        Ok(pf)
    }

    /// `log G_{n,k}` over all states, when backed by a table.
    pub fn log_row(&self, k: usize) -> Option<&[f64]> {
        self.table.as_ref().and_then(|t| t.get(k)).map(Vec::as_slice)
    }
}

/// `log Gtilde_{n,k}(x) = log G_{n,k}(x) - log Gbar`, always `<= 0`.
pub fn normalized_log_potential<S>(pf: &PotentialFamily<S>, idx: FlowIndex, x: &S) -> Result<f64> {
    let v = pf.eval_log(idx, x)? - pf.upper_bound_log;
    if v.is_nan() || v > 1e-12 {
        return Err(Error::InvalidModel(format!(
            "potential at {idx} exceeds its declared upper bound by {v}"
        )));
    }
    Ok(v.min(0.0))
}

/// `U_{n,k}(x) = -n log Gtilde_{n,k}(x)`, always `>= 0`.
pub fn u_function<S>(pf: &PotentialFamily<S>, idx: FlowIndex, x: &S) -> Result<f64> {
    Ok(-(idx.n as f64) * normalized_log_potential(pf, idx, x)?)
}

/// Samplers for `M_{n,k}`, `1 <= k <= n`, optionally with exact transition matrices.
pub struct KernelFamily<S> {
    horizon: usize,
    sample: Arc<SampleFn<S>>,
    matrices: Option<Arc<Vec<Matrix>>>,
}

impl<S> Clone for KernelFamily<S> {
    fn clone(&self) -> Self {
        KernelFamily { horizon: self.horizon, sample: Arc::clone(&self.sample), matrices: self.matrices.clone() }
    }
}

impl<S> KernelFamily<S> {
    pub fn new<F>(horizon: usize, sample: F) -> Result<Self>
    where
        F: Fn(FlowIndex, &S, &mut StreamRng) -> S + Send + Sync + 'static,
    {
        if horizon == 0 {
            return Err(Error::Range("horizon n must be >= 1".into()));
        }
        Ok(KernelFamily { horizon, sample: Arc::new(sample), matrices: None })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Exact matrix of `M_{n,k}` for finite families.
    pub fn exact_matrix(&self, idx: FlowIndex) -> Option<&Matrix> {
        if idx.k == 0 || idx.n != self.horizon {
            return None;
        }
        self.matrices.as_ref().map(|m| &m[idx.k - 1])
    }

    pub fn has_exact_matrices(&self) -> bool {
        self.matrices.is_some()
    }
}

impl KernelFamily<usize> {
    /// Finite kernels; `matrices[k - 1]` is `M_{n,k}`. Rows must sum to 1 within 1e-12.
    pub fn from_matrices(matrices: Vec<Matrix>) -> Result<Self> {
        let horizon = matrices.len();
        if horizon == 0 {
            return Err(Error::InvalidModel("no kernel matrices".into()));
        }
        let m = matrices[0].rows();
        for (i, mat) in matrices.iter().enumerate() {
            if !mat.is_square() || mat.rows() != m {
                return Err(Error::InvalidModel(format!("kernel {} is not {m}x{m}", i + 1)));
            }
            if !mat.is_stochastic(1e-12) {
                return Err(Error::InvalidModel(format!("kernel {} is not row-stochastic", i + 1)));
            }
        }
        let mats = Arc::new(matrices);
        let lookup = Arc::clone(&mats);
        let sample = move |idx: FlowIndex, x: &usize, rng: &mut StreamRng| -> usize {
            sample_row(lookup[idx.k - 1].row(*x), rng)
        };
        Ok(KernelFamily { horizon, sample: Arc::new(sample), matrices: Some(mats) })
    }

    /// Same kernel at every step.
    pub fn homogeneous(matrix: Matrix, horizon: usize) -> Result<Self> {
        KernelFamily::from_matrices(vec![matrix; horizon])
    }

    pub fn state_count(&self) -> Option<usize> {
        self.matrices.as_ref().map(|m| m[0].rows())
    }
}

/// Draw from `M_{n,k}(x, .)`.
pub fn kernel_step<S>(kf: &KernelFamily<S>, idx: FlowIndex, x: &S, rng: &mut StreamRng) -> Result<S> {
    idx.require_kernel()?;
    if idx.n != kf.horizon {
        return Err(Error::Range(format!("index {idx} does not match horizon {}", kf.horizon)));
    }
    Ok((kf.sample)(idx, x, rng))
}

/// Initial distribution `mu`: a sampler, plus its probability vector on finite spaces.
pub struct InitialDistribution<S> {
    sample: Arc<InitFn<S>>,
    exact: Option<DiscreteMeasure>,
    label: String,
}

impl<S> Clone for InitialDistribution<S> {
    fn clone(&self) -> Self {
        InitialDistribution { sample: Arc::clone(&self.sample), exact: self.exact.clone(), label: self.label.clone() }
    }
}

impl<S> InitialDistribution<S> {
    pub fn from_sampler<F>(label: impl Into<String>, sample: F) -> Self
    where
        F: Fn(&mut StreamRng) -> S + Send + Sync + 'static,
    {
        InitialDistribution { sample: Arc::new(sample), exact: None, label: label.into() }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> S {
        (self.sample)(rng)
    }

    pub fn exact(&self) -> Option<&DiscreteMeasure> {
        self.exact.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

impl<S: Clone + Send + Sync + 'static> InitialDistribution<S> {
    pub fn dirac(x: S) -> Self {
        InitialDistribution::from_sampler("dirac", move |_| x.clone())
    }
}

impl InitialDistribution<usize> {
    pub fn from_measure(mu: DiscreteMeasure) -> Self {
        let draw = mu.clone();
        InitialDistribution {
            sample: Arc::new(move |rng: &mut StreamRng| draw.sample(rng)),
            exact: Some(mu),
            label: "discrete".into(),
        }
    }
}

/// One tempered Feynman-Kac model instance for a fixed horizon.
pub struct FKModel<S> {
    horizon: usize,
    kernels: KernelFamily<S>,
    potentials: PotentialFamily<S>,
    initial: InitialDistribution<S>,
}

impl<S> Clone for FKModel<S> {
    fn clone(&self) -> Self {
        FKModel {
            horizon: self.horizon,
            kernels: self.kernels.clone(),
            potentials: self.potentials.clone(),
            initial: self.initial.clone(),
        }
    }
}

impl<S> FKModel<S> {
    pub fn new(kernels: KernelFamily<S>, potentials: PotentialFamily<S>, initial: InitialDistribution<S>) -> Result<Self> {
        if kernels.horizon != potentials.horizon {
            return Err(Error::InvalidModel(format!(
                "kernel horizon {} differs from potential horizon {}",
                kernels.horizon, potentials.horizon
            )));
        }
        Ok(FKModel { horizon: kernels.horizon, kernels, potentials, initial })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn kernels(&self) -> &KernelFamily<S> {
        &self.kernels
    }

    pub fn potentials(&self) -> &PotentialFamily<S> {
        &self.potentials
    }

    pub fn initial(&self) -> &InitialDistribution<S> {
        &self.initial
    }

    /// Same kernels and potentials started from a different initial law.
    pub fn with_initial(&self, initial: InitialDistribution<S>) -> Self {
        FKModel { initial, ..self.clone() }
    }
}

impl FKModel<usize> {
    /// Number of states when the kernels carry exact matrices.
    pub fn state_count(&self) -> Option<usize> {
        self.kernels.state_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn gaussian_potentials(n: usize) -> PotentialFamily<f64> {
        // gamma(u) = u, pibar(x) = exp(-x^2 / 2), Gbar = 1
        PotentialFamily::new(n, 0.0, move |idx: FlowIndex, x: &f64| {
            let g = |u: f64| u;
            let n = idx.n() as f64;
            (g((idx.k() + 1) as f64 / n) - g(idx.k() as f64 / n)) * (-x * x / 2.0)
        })
        .unwrap()
    }

    #[test]
    fn flow_index_bounds() {
        assert!(FlowIndex::new(0, 0).is_err());
        assert!(FlowIndex::new(3, 4).is_err());
        assert_eq!(FlowIndex::new(4, 1).unwrap().fraction(), 0.25);
    }

    #[test]
    fn constant_potential_normalizes_to_zero() {
        let c = 0.7_f64.ln();
        let pf = PotentialFamily::new(5, c, move |_, _: &f64| c).unwrap();
        for x in [-3.0, 0.0, 10.0] {
            let idx = FlowIndex::new(5, 2).unwrap();
            assert_eq!(normalized_log_potential(&pf, idx, &x).unwrap(), 0.0);
            assert_eq!(u_function(&pf, idx, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn gaussian_increment_potential() {
        let pf = gaussian_potentials(10);
        let idx = FlowIndex::new(10, 0).unwrap();
        let v = normalized_log_potential(&pf, idx, &2.0).unwrap();
        assert!((v + 0.2).abs() < 1e-15, "{v}");
        let u = u_function(&pf, idx, &2.0).unwrap();
        assert!((u - 2.0).abs() < 1e-14, "{u}");
    }

    #[test]
    fn table_lookup_two_state() {
        let table = vec![vec![0.0, 0.5_f64.ln()], vec![0.0, 0.25_f64.ln()], vec![0.0, 0.5_f64.ln()]];
        let pf = PotentialFamily::from_log_table(table, 0.0).unwrap();
        let idx = FlowIndex::new(3, 1).unwrap();
        // hand evaluation of the configured table: G_{3,1}(0) = 1, G_{3,1}(1) = 1/4
        assert_eq!(normalized_log_potential(&pf, idx, &0).unwrap(), 0.0);
        assert_eq!(normalized_log_potential(&pf, idx, &1).unwrap(), 0.25_f64.ln());
        let u = u_function(&pf, idx, &1).unwrap();
        assert!((u - 3.0 * 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn potential_index_range() {
        let pf = gaussian_potentials(4);
        assert!(matches!(normalized_log_potential(&pf, FlowIndex::new(4, 4).unwrap(), &0.0), Err(Error::Range(_))));
        assert!(matches!(normalized_log_potential(&pf, FlowIndex::new(5, 0).unwrap(), &0.0), Err(Error::Range(_))));
    }

    #[test]
    fn zero_potential_rejected() {
        assert!(PotentialFamily::from_log_table(vec![vec![0.0, f64::NEG_INFINITY]], 0.0).is_err());
        assert!(PotentialFamily::from_log_table(vec![vec![0.0, 0.1]], 0.0).is_err());
    }

    #[test]
    fn violated_bound_detected_pointwise() {
        let pf = PotentialFamily::new(2, 0.0, |_, x: &f64| *x).unwrap();
        let idx = FlowIndex::new(2, 0).unwrap();
        assert!(normalized_log_potential(&pf, idx, &1.0).is_err());
        assert!(normalized_log_potential(&pf, idx, &-1.0).is_ok());
    }

    #[test]
    fn identity_kernel_is_dirac() {
        let kf = KernelFamily::new(3, |_, x: &f64, _| *x).unwrap();
        let mut rng = stream(1, 0, 1, 0);
        for x in [-1.5, 0.0, 42.0] {
            assert_eq!(kernel_step(&kf, FlowIndex::new(3, 2).unwrap(), &x, &mut rng).unwrap(), x);
        }
        assert!(kernel_step(&kf, FlowIndex::new(3, 0).unwrap(), &0.0, &mut rng).is_err());
    }

    #[test]
    fn kernel_step_reproducible() {
        let m = Matrix::from_rows(vec![vec![0.3, 0.3, 0.4], vec![0.1, 0.1, 0.8], vec![0.5, 0.25, 0.25]]).unwrap();
        let kf = KernelFamily::homogeneous(m, 4).unwrap();
        let idx = FlowIndex::new(4, 3).unwrap();
        let draws = |seed| -> Vec<usize> {
            let mut rng = stream(seed, 2, 3, 9);
            (0..50).map(|_| kernel_step(&kf, idx, &1, &mut rng).unwrap()).collect()
        };
        assert_eq!(draws(11), draws(11));
    }

    #[test]
    fn non_stochastic_matrix_rejected() {
        let m = Matrix::from_rows(vec![vec![0.5, 0.4], vec![0.5, 0.5]]).unwrap();
        assert!(KernelFamily::homogeneous(m, 2).is_err());
    }
}
