use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

type VFn<S> = dyn Fn(&S) -> f64 + Send + Sync;

/// Foster-Lyapunov data: drift function `V >= 1`, rate `lambda`, small-set
/// level `d` (`C_d = {V <= d}`) and offset `b_d`.
///
/// The constants are optional so the same type carries a bare `V` for
/// monitoring as well as full drift inputs for exact checks.
pub struct DriftSpec<S> {
    v: Arc<VFn<S>>,
    lambda: Option<f64>,
    level: Option<f64>,
    b: Option<f64>,
}

impl<S> Clone for DriftSpec<S> {
    fn clone(&self) -> Self {
        DriftSpec { v: Arc::clone(&self.v), lambda: self.lambda, level: self.level, b: self.b }
    }
}

impl<S> DriftSpec<S> {
    pub fn new<F>(v: F) -> Self
    where
        F: Fn(&S) -> f64 + Send + Sync + 'static,
    {
        DriftSpec { v: Arc::new(v), lambda: None, level: None, b: None }
    }

    /// Attaches `lambda in [0, 1)`, level `d >= 1` and `b > 0`.
    pub fn with_constants(mut self, lambda: f64, level: f64, b: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Range(format!("lambda = {lambda} outside [0, 1)")));
        }
        if !(level >= 1.0) {
            return Err(Error::Range(format!("level d = {level} must be >= 1")));
        }
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Range(format!("b = {b} must be positive and finite")));
        }
        self.lambda = Some(lambda);
        self.level = Some(level);
        self.b = Some(b);
        Ok(self)
    }

    pub fn value(&self, x: &S) -> f64 {
        (self.v)(x)
    }

    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn level(&self) -> Option<f64> {
        self.level
    }

    pub fn b(&self) -> Option<f64> {
        self.b
    }

    /// `x in C_d`. Without a declared level the small set is the whole space.
    pub fn in_small_set(&self, x: &S) -> bool {
        self.level.is_none_or(|d| self.value(x) <= d)
    }

    pub(crate) fn constants(&self) -> Result<(f64, f64, f64)> {
        match (self.lambda, self.level, self.b) {
            (Some(l), Some(d), Some(b)) => Ok((l, d, b)),
            _ => Err(Error::Precondition("drift constants (lambda, d, b) are required".into())),
        }
    }
}

impl DriftSpec<usize> {
    /// Tabulated drift function on a finite space.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 1.0) || !v.is_finite()) {
            return Err(Error::Precondition("drift function must be finite and >= 1".into()));
        }
        Ok(DriftSpec::new(move |x: &usize| values[*x]))
    }

    pub fn tabulate(&self, m: usize) -> Vec<f64> {
        (0..m).map(|x| self.value(&x)).collect()
    }
}

/// Minorization pair `(epsilon, nu)`: `M(x, .) >= epsilon nu(.)` on the small set.
#[derive(Clone, Debug)]
pub struct Minorizer {
    pub epsilon: f64,
    pub nu: DiscreteMeasure,
}

impl Minorizer {
    pub fn new(epsilon: f64, nu: DiscreteMeasure) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Range(format!("epsilon = {epsilon} outside (0, 1]")));
        }
        Ok(Minorizer { epsilon, nu })
    }
}
