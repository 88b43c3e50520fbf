//! Exact evaluation of the deterministic Feynman-Kac objects on finite spaces.
//!
//! Everything here is a dense matrix computation with compensated sums:
//! `Q_{n,k} = diag(G_{n,k-1}) M_{n,k}`, the semigroups `Q_{n,k:l}`, the flow
//! `eta_{n,k}`, the normalized flow maps, the twisted kernels `S_{n,k}` and the
//! tilted drift/minorization objects derived from them. These are the ground
//! truth for every sampler test.

use serde::Serialize;

use crate::drift::{DriftSpec, Minorizer};
use crate::error::{Error, Result};
use crate::fk::{FKModel, FlowIndex};
use crate::matrix::{compensated_sum, Matrix};
use crate::measure::DiscreteMeasure;

const INEQ_RTOL: f64 = 1e-12;

fn le_with_slack(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + INEQ_RTOL * rhs.abs().max(1.0)
}

/// Precomputed finite model: kernel matrices, potentials and `Qtilde_{n,k:n}(1)`.
#[derive(Clone, Debug)]
pub struct FiniteModel {
    n: usize,
    m: usize,
    kernels: Vec<Matrix>,
    log_g: Vec<Vec<f64>>,
    g: Vec<Vec<f64>>,
    g_tilde: Vec<Vec<f64>>,
    log_gbar: f64,
    mu: Option<DiscreteMeasure>,
    future_mass: Vec<Vec<f64>>,
}

impl FiniteModel {
    /// Requires exact kernel matrices; otherwise `Unsupported`.
    pub fn from_model(model: &FKModel<usize>) -> Result<Self> {
        let n = model.horizon();
        let m = model
            .state_count()
            .ok_or_else(|| Error::Unsupported("oracle needs a finite model with exact kernel matrices".into()))?;
        let kernels: Vec<Matrix> = (1..=n)
            .map(|k| model.kernels().exact_matrix(FlowIndex::new(n, k)?).cloned().ok_or_else(|| {
                Error::Unsupported(format!("kernel {k} has no exact matrix"))
            }))
            .collect::<Result<_>>()?;
        let pf = model.potentials();
        let log_gbar = pf.upper_bound_log();
        let mut log_g = Vec::with_capacity(n);
        for k in 0..n {
            let idx = FlowIndex::new(n, k)?;
            let row = (0..m).map(|x| pf.eval_log(idx, &x)).collect::<Result<Vec<_>>>()?;
            for (x, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::InvalidModel(format!("potential G[{k}][{x}] is zero or non-finite")));
                }
                if v > log_gbar + 1e-12 {
                    return Err(Error::InvalidModel(format!("potential G[{k}][{x}] exceeds its upper bound")));
                }
            }
            log_g.push(row);
        }
        let g: Vec<Vec<f64>> = log_g.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
        let g_tilde: Vec<Vec<f64>> =
            log_g.iter().map(|r| r.iter().map(|v| (v - log_gbar).min(0.0).exp()).collect()).collect();

        let mut future_mass = vec![vec![1.0; m]; n + 1];
        for k in (0..n).rev() {
            let propagated = kernels[k].apply(&future_mass[k + 1]);
            future_mass[k] = propagated.iter().zip(&g_tilde[k]).map(|(a, b)| a * b).collect();
        }
        let mu = model.initial().exact().cloned();
        if let Some(mu) = &mu {
            if mu.len() != m {
                return Err(Error::InvalidModel("initial measure has the wrong number of states".into()));
            }
        }
        Ok(FiniteModel { n, m, kernels, log_g, g, g_tilde, log_gbar, mu, future_mass })
    }

    pub fn horizon(&self) -> usize {
        self.n
    }

    pub fn state_count(&self) -> usize {
        self.m
    }

    pub fn initial(&self) -> Option<&DiscreteMeasure> {
        self.mu.as_ref()
    }

    /// `M_{n,k}`, `1 <= k <= n`.
    pub fn kernel(&self, k: usize) -> Result<&Matrix> {
        self.check_kernel_index(k)?;
        Ok(&self.kernels[k - 1])
    }

    /// `G_{n,k}` over states, `0 <= k < n`.
    pub fn potential(&self, k: usize) -> Result<&[f64]> {
        self.check_potential_index(k)?;
        Ok(&self.g[k])
    }

    /// `Gtilde_{n,k}` over states.
    pub fn normalized_potential(&self, k: usize) -> Result<&[f64]> {
        self.check_potential_index(k)?;
        Ok(&self.g_tilde[k])
    }

    /// `U_{n,k} = -n log Gtilde_{n,k}` over states.
    pub fn u_values(&self, k: usize) -> Result<Vec<f64>> {
        self.check_potential_index(k)?;
        Ok(self.log_g[k].iter().map(|v| -(self.n as f64) * (v - self.log_gbar).min(0.0)).collect())
    }

    /// `sup_{0 <= k < n} sup_x U_{n,k}(x) / V(x)`.
    pub fn u_v_norm(&self, v: &[f64]) -> Result<f64> {
        let mut sup = 0.0_f64;
        for k in 0..self.n {
            for (u, vx) in self.u_values(k)?.iter().zip(v) {
                sup = sup.max(u / vx);
            }
        }
        Ok(sup)
    }

    /// `Qtilde_{n,k:n}(1)`, `0 <= k <= n`.
    pub fn future_mass(&self, k: usize) -> Result<&[f64]> {
        if k > self.n {
            return Err(Error::Range(format!("k = {k} exceeds n = {}", self.n)));
        }
        Ok(&self.future_mass[k])
    }

    fn check_kernel_index(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n {
            return Err(Error::Range(format!("kernel index {k} outside [1, {}]", self.n)));
        }
        Ok(())
    }

    fn check_potential_index(&self, k: usize) -> Result<()> {
        if k >= self.n {
            return Err(Error::Range(format!("potential index {k} outside [0, {})", self.n)));
        }
        Ok(())
    }

    fn check_pair(&self, k: usize, l: usize) -> Result<()> {
        if k > l || l > self.n {
            return Err(Error::Range(format!("need 0 <= k <= l <= n, got k = {k}, l = {l}, n = {}", self.n)));
        }
        Ok(())
    }

    fn check_measure(&self, eta: &DiscreteMeasure) -> Result<()> {
        if eta.len() != self.m {
            return Err(Error::Range(format!("measure has {} states, model has {}", eta.len(), self.m)));
        }
        Ok(())
    }

    /// `Q_{n,k}(x, y) = G_{n,k-1}(x) M_{n,k}(x, y)`.
    pub fn q_matrix(&self, k: usize) -> Result<Matrix> {
        self.check_kernel_index(k)?;
        Ok(self.kernels[k - 1].scale_rows(&self.g[k - 1]))
    }

    /// `Q_{n,k:l} = Q_{n,k+1} ... Q_{n,l}`; identity when `k = l`.
    pub fn q_semigroup(&self, k: usize, l: usize) -> Result<Matrix> {
        self.check_pair(k, l)?;
        let mut acc = Matrix::identity(self.m);
        for j in k + 1..=l {
            acc = acc.matmul(&self.q_matrix(j)?);
        }
        Ok(acc)
    }

    /// `eta_{n,k} = mu Q_{n,0:k} / mu Q_{n,0:k}(1)`.
    pub fn eta_exact(&self, k: usize) -> Result<DiscreteMeasure> {
        let mu = self.mu.as_ref().ok_or_else(|| Error::Precondition("initial law has no exact form".into()))?;
        let q = self.q_semigroup(0, k)?;
        DiscreteMeasure::from_unnormalized(q.left_mul(mu.weights()))
    }

    /// `Phi_{n,k:l}(eta) = eta Q_{n,k:l} / eta Q_{n,k:l}(1)`, applied one factor at a time.
    pub fn flow_map(&self, eta: &DiscreteMeasure, k: usize, l: usize) -> Result<DiscreteMeasure> {
        self.check_pair(k, l)?;
        self.check_measure(eta)?;
        let mut cur = eta.clone();
        for j in k + 1..=l {
            let q = self.q_matrix(j)?;
            cur = DiscreteMeasure::from_unnormalized(q.left_mul(cur.weights()))?;
        }
        Ok(cur)
    }

    /// `S_{n,k}(x, y) = M_{n,k}(x, y) h(y) / M_{n,k} h (x)` with `h = Q_{n,k:n}(1)`.
    pub fn s_kernel_matrix(&self, k: usize) -> Result<Matrix> {
        self.check_kernel_index(k)?;
        let h = &self.future_mass[k];
        let mk = &self.kernels[k - 1];
        let mut out = Matrix::zeros(self.m, self.m);
        for x in 0..self.m {
            let row: Vec<f64> = mk.row(x).iter().zip(h).map(|(p, hy)| p * hy).collect();
            let total = compensated_sum(row.iter().copied());
            if !(total > 0.0) {
                return Err(Error::Degenerate(format!("S_{{n,{k}}} row {x} has zero mass")));
            }
            for (y, v) in row.into_iter().enumerate() {
                out.set(x, y, v / total);
            }
        }
        Ok(out)
    }

    /// `Phi_{n,k:n}(eta)` through the twisted kernels:
    /// `eta(h_k S_{n,k+1} ... S_{n,n}) / eta(h_k)`.
    pub fn flow_map_via_s(&self, eta: &DiscreteMeasure, k: usize) -> Result<DiscreteMeasure> {
        self.check_pair(k, self.n)?;
        self.check_measure(eta)?;
        let h = &self.future_mass[k];
        let tilted: Vec<f64> = eta.weights().iter().zip(h).map(|(a, b)| a * b).collect();
        let mut cur = DiscreteMeasure::from_unnormalized(tilted)?;
        for j in k + 1..=self.n {
            cur = DiscreteMeasure::from_unnormalized(self.s_kernel_matrix(j)?.left_mul(cur.weights()))?;
        }
        Ok(cur)
    }

    /// Checks the minorization and drift inputs against every `M_{n,j}`.
    fn drift_input_violations(&self, v: &[f64], in_c: &[bool], lambda: f64, b: f64, minorizer: Option<&Minorizer>) -> Vec<String> {
        let mut out = Vec::new();
        for j in 1..=self.n {
            let mj = &self.kernels[j - 1];
            let mv = mj.apply(v);
            for x in 0..self.m {
                let rhs = lambda * v[x] + if in_c[x] { b } else { 0.0 };
                if !le_with_slack(mv[x], rhs) {
                    out.push(format!("drift: M_{{n,{j}}}V({x}) = {} > {}", mv[x], rhs));
                }
                if let (Some(mz), true) = (minorizer, in_c[x]) {
                    for y in 0..self.m {
                        let floor = mz.epsilon * mz.nu.weights()[y];
                        if !le_with_slack(floor, mj.get(x, y)) {
                            out.push(format!("minorization: M_{{n,{j}}}({x},{y}) = {} < {}", mj.get(x, y), floor));
                        }
                    }
                }
            }
        }
        out
    }

    fn tilted_objects(&self, k: usize, v: &[f64], b: f64, mz: &Minorizer) -> Result<TiltedDriftObjects> {
        let h = &self.future_mass[k];
        let nu_mass = mz.nu.integrate(h);
        let eps_nk = mz.epsilon * nu_mass;
        let b_nk = b / eps_nk;
        let nu_nk = DiscreteMeasure::from_unnormalized(mz.nu.weights().iter().zip(h).map(|(a, b)| a * b).collect())?;
        let v_nk = if k == self.n {
            v.to_vec()
        } else {
            let denom = self.kernels[k].apply(&self.future_mass[k + 1]);
            v.iter().zip(&denom).map(|(vx, d)| vx / d).collect()
        };
        Ok(TiltedDriftObjects { eps_nk, b_nk, nu_nk, v_nk })
    }

    /// Tilted minorization/drift objects at step `k` and an entrywise check of
    ///
    /// * `S_{n,k}(x, .) >= eps_{n,k} nu_{n,k}(.)` for `x` in `C`,
    /// * `S_{n,k} V_{n,k}(x) <= lambda V_{n,k-1}(x) + b_{n,k-1} 1_C(x)`,
    ///
    /// where `eps_{n,k} = eps nu(Qtilde_{n,k:n}(1))`, `b_{n,k} = b / eps_{n,k}`,
    /// `nu_{n,k}` is `nu` tilted by `Qtilde_{n,k:n}(1)` and
    /// `V_{n,k} = V / M_{n,k+1}(Qtilde_{n,k+1:n}(1))` with `V_{n,n} = V`.
    /// The drift inequality is also evaluated with `b_{n,k}` in place of
    /// `b_{n,k-1}`. Inputs that do not satisfy the drift/minorization
    /// hypotheses on this model are reported, not raised.
    pub fn tilted_drift_objects(&self, k: usize, drift: &DriftSpec<usize>, minorizer: &Minorizer) -> Result<TiltedDriftReport> {
        if k > self.n {
            return Err(Error::Range(format!("k = {k} exceeds n = {}", self.n)));
        }
        if minorizer.nu.len() != self.m {
            return Err(Error::Range("minorizing measure has the wrong number of states".into()));
        }
        let (lambda, _, b) = drift.constants()?;
        let v = drift.tabulate(self.m);
        let in_c: Vec<bool> = (0..self.m).map(|x| drift.in_small_set(&x)).collect();
        let objects = self.tilted_objects(k, &v, b, minorizer)?;
        let precondition_violations = self.drift_input_violations(&v, &in_c, lambda, b, Some(minorizer));

        let mut report = TiltedDriftReport {
            index: FlowIndex::new(self.n, k)?,
            objects,
            b_previous: None,
            minorization_violations: Vec::new(),
            drift_violations: Vec::new(),
            drift_violations_same_index: Vec::new(),
            precondition_violations,
        };
        if k == 0 {
            return Ok(report);
        }
        let prev = self.tilted_objects(k - 1, &v, b, minorizer)?;
        report.b_previous = Some(prev.b_nk);
        let s = self.s_kernel_matrix(k)?;
        let cur = &report.objects;
        for x in 0..self.m {
            if in_c[x] {
                for y in 0..self.m {
                    let rhs = cur.eps_nk * cur.nu_nk.weights()[y];
                    if !le_with_slack(rhs, s.get(x, y)) {
                        report.minorization_violations.push(Violation { k, x, y: Some(y), lhs: s.get(x, y), rhs });
                    }
                }
            }
        }
        let sv = s.apply(&cur.v_nk);
        for x in 0..self.m {
            let indicator = if in_c[x] { 1.0 } else { 0.0 };
            let printed = lambda * prev.v_nk[x] + prev.b_nk * indicator;
            if !le_with_slack(sv[x], printed) {
                report.drift_violations.push(Violation { k, x, y: None, lhs: sv[x], rhs: printed });
            }
            let same = lambda * prev.v_nk[x] + cur.b_nk * indicator;
            if !le_with_slack(sv[x], same) {
                report.drift_violations_same_index.push(Violation { k, x, y: None, lhs: sv[x], rhs: same });
            }
        }
        Ok(report)
    }

    /// Exact `min_k mu(Qtilde_{n,k:n}(1))` against `exp(-C mu(V))` with
    /// `C = sup_k ||U_{n,k}||_V (1 + b / (1 - lambda))`, plus the intermediate
    /// path-space Jensen bound `exp(-(1/n) sum_l mu M_{n,k:l}(U_{n,l}))`.
    ///
    /// Fails with `Precondition` when `M_{n,k} V <= lambda V + b` does not hold.
    pub fn norm_const_lower_bound_check(&self, drift: &DriftSpec<usize>, mu: &DiscreteMeasure) -> Result<NormConstReport> {
        self.check_measure(mu)?;
        let (lambda, _, b) = drift.constants()?;
        let v = drift.tabulate(self.m);
        let all = vec![true; self.m];
        let bad = self.drift_input_violations(&v, &all, lambda, b, None);
        if !bad.is_empty() {
            return Err(Error::Precondition(format!("drift inputs fail on this model: {}", bad.join("; "))));
        }
        let masses: Vec<f64> = (0..=self.n).map(|k| mu.integrate(&self.future_mass[k])).collect();
        let (argmin_k, min_mass) = masses
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, m)| if m < acc.1 { (k, m) } else { acc });

        let u: Vec<Vec<f64>> = (0..self.n).map(|k| self.u_values(k)).collect::<Result<_>>()?;
        let mut jensen = vec![1.0; self.n + 1];
        for (k, slot) in jensen.iter_mut().enumerate().take(self.n) {
            let mut law = mu.weights().to_vec();
            let mut acc = Vec::with_capacity(self.n - k);
            for (l, u_l) in u.iter().enumerate().skip(k) {
                if l > k {
                    law = self.kernels[l - 1].left_mul(&law);
                }
                acc.push(compensated_sum(law.iter().zip(u_l).map(|(p, v)| p * v)));
            }
            *slot = (-compensated_sum(acc) / self.n as f64).exp();
        }
        let jensen_holds = masses.iter().zip(&jensen).all(|(m, j)| le_with_slack(*j, *m));

        let u_v_norm = self.u_v_norm(&v)?;
        let c_const = lemma3_constant(u_v_norm, lambda, b);
        let mu_v = mu.integrate(&v);
        let bound = (-c_const * mu_v).exp();
        Ok(NormConstReport {
            n: self.n,
            masses,
            jensen_bounds: jensen,
            jensen_holds,
            min_mass,
            argmin_k,
            u_v_norm,
            c_const,
            mu_v,
            bound,
            holds: min_mass >= bound,
        })
    }
}

/// `C = ||U||_V (1 + b / (1 - lambda))`.
pub fn lemma3_constant(u_v_norm: f64, lambda: f64, b: f64) -> f64 {
    u_v_norm * (1.0 + b / (1.0 - lambda))
}

#[derive(Clone, Debug, Serialize)]
pub struct TiltedDriftObjects {
    pub eps_nk: f64,
    pub b_nk: f64,
    #[serde(skip)]
    pub nu_nk: DiscreteMeasure,
    pub v_nk: Vec<f64>,
}

/// A failed entrywise inequality `lhs <= rhs` (or `lhs >= rhs` for minorization).
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Violation {
    pub k: usize,
    pub x: usize,
    pub y: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct TiltedDriftReport {
    pub index: FlowIndex,
    pub objects: TiltedDriftObjects,
    /// `b_{n,k-1}`, absent at `k = 0`.
    pub b_previous: Option<f64>,
    pub minorization_violations: Vec<Violation>,
    /// Drift inequality with offset `b_{n,k-1}`.
    pub drift_violations: Vec<Violation>,
    /// Drift inequality with offset `b_{n,k}`.
    pub drift_violations_same_index: Vec<Violation>,
    pub precondition_violations: Vec<String>,
}

impl TiltedDriftReport {
    pub fn minorization_holds(&self) -> bool {
        self.minorization_violations.is_empty()
    }

    pub fn drift_holds(&self) -> bool {
        self.drift_violations.is_empty()
    }

    pub fn inputs_valid(&self) -> bool {
        self.precondition_violations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormConstReport {
    pub n: usize,
    /// `mu(Qtilde_{n,k:n}(1))` for `k = 0..=n`.
    pub masses: Vec<f64>,
    pub jensen_bounds: Vec<f64>,
    pub jensen_holds: bool,
    pub min_mass: f64,
    pub argmin_k: usize,
    pub u_v_norm: f64,
    pub c_const: f64,
    pub mu_v: f64,
    pub bound: f64,
    pub holds: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::{InitialDistribution, KernelFamily, PotentialFamily};

    fn two_state(n: usize, g1: f64) -> FiniteModel {
        let m = Matrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let kf = KernelFamily::homogeneous(m, n).unwrap();
        let pf = PotentialFamily::from_log_table(vec![vec![0.0, g1.ln()]; n], 0.0).unwrap();
        let mu = DiscreteMeasure::new(vec![0.3, 0.7]).unwrap();
        FiniteModel::from_model(&FKModel::new(kf, pf, InitialDistribution::from_measure(mu)).unwrap()).unwrap()
    }

    #[test]
    fn q_matrix_hand_values() {
        let fm = two_state(3, 0.5);
        let q = fm.q_matrix(1).unwrap();
        let expect = Matrix::from_rows(vec![vec![0.9, 0.1], vec![0.1, 0.4]]).unwrap();
        assert!(q.max_abs_diff(&expect) < 1e-15);
        assert_eq!(q.row_sums().iter().map(|s| (s * 10.0).round() / 10.0).collect::<Vec<_>>(), vec![1.0, 0.5]);
    }

    #[test]
    fn unit_potential_q_is_m() {
        let fm = two_state(2, 1.0);
        assert_eq!(fm.q_matrix(2).unwrap(), *fm.kernel(2).unwrap());
        assert!(fm.s_kernel_matrix(1).unwrap().max_abs_diff(fm.kernel(1).unwrap()) < 1e-15);
    }

    #[test]
    fn semigroup_conventions() {
        let fm = two_state(4, 0.5);
        assert_eq!(fm.q_semigroup(2, 2).unwrap(), Matrix::identity(2));
        assert_eq!(fm.q_semigroup(1, 2).unwrap(), fm.q_matrix(2).unwrap());
        assert!(matches!(fm.q_semigroup(3, 2), Err(Error::Range(_))));
    }

    #[test]
    fn eta_at_zero_is_mu() {
        let fm = two_state(3, 0.5);
        assert_eq!(fm.eta_exact(0).unwrap(), *fm.initial().unwrap());
    }

    #[test]
    fn terminal_s_kernel_is_m() {
        let fm = two_state(3, 0.5);
        assert!(fm.s_kernel_matrix(3).unwrap().max_abs_diff(fm.kernel(3).unwrap()) < 1e-15);
        let eta = DiscreteMeasure::new(vec![0.4, 0.6]).unwrap();
        assert_eq!(fm.flow_map_via_s(&eta, 3).unwrap(), eta);
        assert_eq!(fm.flow_map(&eta, 2, 2).unwrap(), eta);
    }

    #[test]
    fn missing_matrices_unsupported() {
        let kf = KernelFamily::new(2, |_, x: &usize, _| *x).unwrap();
        let pf = PotentialFamily::from_log_table(vec![vec![0.0, 0.0]; 2], 0.0).unwrap();
        let model = FKModel::new(kf, pf, InitialDistribution::dirac(0)).unwrap();
        assert!(matches!(FiniteModel::from_model(&model), Err(Error::Unsupported(_))));
    }
}
