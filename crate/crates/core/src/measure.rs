use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{compensated_sum, fmt_f64};

/// Probability vector over `0..m`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Entries must be nonnegative and sum to one within 1e-12.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidModel("empty measure".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel("measure has negative or non-finite mass".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("measure mass {total} is not 1")));
        }
        Ok(DiscreteMeasure { weights })
    }

    /// Normalizes nonnegative masses with a positive total.
    pub fn from_unnormalized(masses: Vec<f64>) -> Result<Self> {
        if masses.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel("negative or non-finite mass".into()));
        }
        let total = compensated_sum(masses.iter().copied());
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::Degenerate(format!("normalizer {total}")));
        }
        Ok(DiscreteMeasure { weights: masses.into_iter().map(|w| w / total).collect() })
    }

    pub fn dirac(m: usize, state: usize) -> Self {
        assert!(state < m);
        let mut weights = vec![0.0; m];
        weights[state] = 1.0;
        DiscreteMeasure { weights }
    }

    pub fn uniform(m: usize) -> Self {
        DiscreteMeasure { weights: vec![1.0 / m as f64; m] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sum_x mu(x) f(x)`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.weights.len());
        compensated_sum(self.weights.iter().zip(f).map(|(w, v)| w * v))
    }

    pub fn max_abs_diff(&self, other: &DiscreteMeasure) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_row(&self.weights, rng)
    }

    pub fn to_csv(&self) -> String {
        let cells: Vec<String> = self.weights.iter().map(|&w| fmt_f64(w)).collect();
        cells.join(",") + "\n"
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let weights = text
            .trim()
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| Error::InvalidModel(format!("bad weight {c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        DiscreteMeasure::new(weights)
    }
}

/// Inverse-CDF draw from a probability row. The last positive entry absorbs rounding.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = j;
            if u < acc {
                return j;
            }
        }
    }
    last
}

/// `||a - b||_{v^alpha} = sum_x |a_x - b_x| v_x^alpha`.
///
/// On a finite space the supremum over `|phi| <= v^alpha` is attained by
/// `phi = sign(a - b) v^alpha`, which gives this closed form.
pub fn v_norm_distance(a: &[f64], b: &[f64], v: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Range(format!("alpha = {alpha} outside (0, 1]")));
    }
    if a.len() != b.len() || a.len() != v.len() {
        return Err(Error::Range("length mismatch".into()));
    }
    if v.iter().any(|&x| !(x >= 1.0)) {
        return Err(Error::Precondition("weight function must be >= 1".into()));
    }
    Ok(compensated_sum(a.iter().zip(b).zip(v).map(|((x, y), w)| (x - y).abs() * w.powf(alpha))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_probability() {
        assert!(DiscreteMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(vec![-0.1, 1.1]).is_err());
        assert!(DiscreteMeasure::from_unnormalized(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let mu = DiscreteMeasure::from_unnormalized(vec![1.0, 2.0, 4.0]).unwrap();
        assert_eq!(DiscreteMeasure::from_csv(&mu.to_csv()).unwrap(), mu);
    }

    #[test]
    fn v_norm_identical_is_zero() {
        let a = [0.2, 0.3, 0.5];
        assert_eq!(v_norm_distance(&a, &a, &[1.0, 2.0, 3.0], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn v_norm_unit_weight_is_l1() {
        let a = [0.2, 0.3, 0.5];
        let b = [0.5, 0.3, 0.2];
        let d = v_norm_distance(&a, &b, &[1.0; 3], 1.0).unwrap();
        assert!((d - 0.6).abs() < 1e-15);
    }

    #[test]
    fn v_norm_alpha_range() {
        assert!(matches!(v_norm_distance(&[1.0], &[1.0], &[1.0], 0.0), Err(Error::Range(_))));
        assert!(matches!(v_norm_distance(&[1.0], &[1.0], &[1.0], 1.5), Err(Error::Range(_))));
    }
}
