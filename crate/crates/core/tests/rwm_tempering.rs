use fksmc_core::fk::{kernel_step, normalized_log_potential, u_function};
use fksmc_core::rng::stream;
use fksmc_core::rwm::{drift_probe, rwm_kernel_family, rwm_step};
use fksmc_core::{FlowIndex, IncrementDistribution, LogTarget, PotentialFamily, TemperedFamily, TemperingSchedule};

fn gaussian(floor: f64) -> TemperedFamily<Vec<f64>> {
    TemperedFamily::new(LogTarget::gaussian(vec![0.0], 1.0).unwrap(), TemperingSchedule::linear(floor).unwrap())
}

fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let len = xs.len() / batches;
    let means: Vec<f64> = xs.chunks(len).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (var / batches as f64).sqrt())
}

fn ks_statistic(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0_f64);
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn long_chain_moments() {
    let fam = gaussian(0.7);
    let q = IncrementDistribution::gaussian(1.0).unwrap();
    let mut rng = stream(1, 0, 0, 0);
    let mut x = vec![0.0];
    let mut xs = Vec::with_capacity(1_000_000);
    for _ in 0..1_000_000 {
        x = rwm_step(&fam, 1.0, &q, &x, &mut rng).unwrap();
        xs.push(x[0]);
    }
    let (mean, se) = batch_mean_se(&xs, 1000);
    assert!(mean.abs() <= 4.0 * se, "mean {mean} se {se}");
    let sq: Vec<f64> = xs.iter().map(|v| v * v).collect();
    let (var, se2) = batch_mean_se(&sq, 1000);
    assert!((var - 1.0).abs() <= 4.0 * se2, "second moment {var} se {se2}");
}

#[test]
fn detailed_balance_flux() {
    let fam = gaussian(0.7);
    let q = IncrementDistribution::gaussian(1.0).unwrap();
    let mut rng = stream(2, 0, 0, 0);
    let mut x = vec![0.0];
    let bin = |v: f64| (0.0..0.5).contains(&v) as u8 + 2 * (0.5..1.0).contains(&v) as u8;
    let (mut ab, mut ba) = (0u64, 0u64);
    for _ in 0..1_000_000 {
        let y = rwm_step(&fam, 1.0, &q, &x, &mut rng).unwrap();
        match (bin(x[0]), bin(y[0])) {
            (1, 2) => ab += 1,
            (2, 1) => ba += 1,
            _ => {}
        }
        x = y;
    }
    assert!(ab > 1000);
    assert!((ab as f64 - ba as f64).abs() <= 4.0 * ((ab + ba) as f64).sqrt(), "{ab} vs {ba}");
}

#[test]
fn one_kernel_step_preserves_tempered_law() {
    let fam = gaussian(0.5);
    let q = IncrementDistribution::gaussian(1.0).unwrap();
    let n = 10;
    let kf = rwm_kernel_family(&fam, n, &q).unwrap();
    let crit = (-(1e-3_f64 / 2.0).ln() / 2.0).sqrt() * (2.0 / 1e4_f64).sqrt();
    for k in [1, 5, n] {
        let idx = FlowIndex::new(n, k).unwrap();
        let gamma = fam.schedule().at(idx);
        let mut moved: Vec<f64> = (0..10_000u64)
            .map(|i| {
                let x = fam.sample_tempered(gamma, &mut stream(3, k as u64, 0, i)).unwrap();
                kernel_step(&kf, idx, &x, &mut stream(3, k as u64, 1, i)).unwrap()[0]
            })
            .collect();
        let mut fresh: Vec<f64> = (0..10_000u64).map(|i| fam.sample_tempered(gamma, &mut stream(4, k as u64, 0, i)).unwrap()[0]).collect();
        let d = ks_statistic(&mut moved, &mut fresh);
        assert!(d < crit, "k = {k}: D = {d} >= {crit}");
    }
    // k = n targets the untempered law.
    assert_eq!(fam.schedule().at(FlowIndex::new(n, n).unwrap()), 1.0);
    // Same k, larger n: a smaller exponent.
    assert!(fam.schedule().at(FlowIndex::new(20, 5).unwrap()) < fam.schedule().at(FlowIndex::new(10, 5).unwrap()));
}

#[test]
fn drift_probe_contracts_in_the_tails() {
    let fam = gaussian(0.5);
    let q = IncrementDistribution::gaussian(1.0).unwrap();
    let drift = fam.drift_function(0.5).unwrap();
    for gamma in [0.5, 1.0] {
        let rep = drift_probe(&fam, gamma, &q, &drift, &[2.0, 4.0, 6.0], 1, 20_000, 9).unwrap();
        let l: Vec<f64> = rep.shells.iter().map(|s| s.lambda_hat).collect();
        assert!(l[0] > l[1] && l[1] > l[2], "gamma {gamma}: {l:?}");
        assert!(l[2] + rep.shells[2].band < 1.0);
        let again = drift_probe(&fam, gamma, &q, &drift, &[2.0, 4.0, 6.0], 1, 20_000, 10).unwrap();
        for (a, b) in rep.shells.iter().zip(&again.shells) {
            assert!((a.lambda_hat - b.lambda_hat).abs() <= a.band + b.band);
        }
    }
}

#[test]
fn potentials_by_substitution() {
    let fam = gaussian(0.5);
    let pf = fam.build_potentials(10).unwrap();
    for k in [0, 3, 9] {
        let idx = FlowIndex::new(10, k).unwrap();
        assert!((pf.eval_log(idx, &vec![2.0]).unwrap() + 0.1).abs() < 1e-15);
    }
    // gamma(u) = u, written directly as increments of log pibar.
    let pf = PotentialFamily::new(10, 0.0, |_, x: &Vec<f64>| 0.1 * (-x[0] * x[0] / 2.0)).unwrap();
    let idx = FlowIndex::new(10, 0).unwrap();
    assert!((normalized_log_potential(&pf, idx, &vec![2.0]).unwrap() + 0.2).abs() < 1e-15);
    assert!((u_function(&pf, idx, &vec![2.0]).unwrap() - 2.0).abs() < 1e-14);
}

#[test]
fn potentials_flatten_as_n_grows() {
    let fam = gaussian(0.5);
    let grid: Vec<Vec<f64>> = (0..=400).map(|i| vec![-10.0 + i as f64 * 0.05]).collect();
    let max_log = grid.iter().map(|x| fam.target().log_unnorm(x).abs()).fold(0.0, f64::max);
    let mut prev = f64::INFINITY;
    for n in [10, 100, 1000] {
        let pf = fam.build_potentials(n).unwrap();
        let mut worst = 0.0_f64;
        for k in [0, n / 2, n - 1] {
            let idx = FlowIndex::new(n, k).unwrap();
            for x in &grid {
                worst = worst.max(pf.eval_log(idx, x).unwrap().abs());
            }
        }
        assert!(worst <= fam.schedule().lipschitz() / n as f64 * max_log + 1e-12);
        assert!(worst < prev);
        prev = worst;
    }
}

#[test]
fn drift_function_on_grid() {
    let fam = gaussian(0.5);
    let v = fam.drift_function(0.5).unwrap();
    assert!((v.value(&vec![2.0]) - 0.5_f64.exp()).abs() < 1e-14);
    assert_eq!(v.value(&vec![0.0]), 1.0);
    assert!((0..10_000).all(|i| v.value(&vec![-20.0 + i as f64 * 0.004]) >= 1.0));
}

#[test]
fn potentials_and_drift_are_negatively_associated() {
    let fam = gaussian(0.7);
    let v = fam.drift_function(0.5).unwrap();
    let grid: Vec<Vec<f64>> = (0..=80).map(|i| vec![-4.0 + i as f64 * 0.1]).collect();
    for n in [5, 40] {
        let pf = fam.build_potentials(n).unwrap();
        for k in [0, n - 1] {
            let idx = FlowIndex::new(n, k).unwrap();
            for x in &grid {
                for y in &grid {
                    let dg = pf.eval_log(idx, x).unwrap().exp() - pf.eval_log(idx, y).unwrap().exp();
                    let dv = v.value(x) - v.value(y);
                    assert!(dg * dv <= 0.0);
                }
            }
        }
    }
}

#[test]
fn u_over_v_bounded_uniformly_in_n() {
    let fam = gaussian(0.7);
    let v = fam.drift_function(0.5).unwrap();
    let grid: Vec<Vec<f64>> = (0..=2000).map(|i| vec![-20.0 + i as f64 * 0.02]).collect();
    let sup_for = |n: usize| {
        let pf = fam.build_potentials(n).unwrap();
        let mut s = 0.0_f64;
        for k in [0, n / 2, n - 1] {
            let idx = FlowIndex::new(n, k).unwrap();
            for x in &grid {
                s = s.max(u_function(&pf, idx, x).unwrap() / v.value(x));
            }
        }
        s
    };
    let sups: Vec<f64> = [10, 100, 1000].iter().map(|&n| sup_for(n)).collect();
    let bound = sups[0] * 1.01;
    assert!(sups.iter().all(|s| *s <= bound), "{sups:?}");
}

#[test]
fn built_in_schedules_pass_dense_audit() {
    for s in [
        TemperingSchedule::linear(0.5).unwrap(),
        TemperingSchedule::smoothstep(0.5).unwrap(),
        TemperingSchedule::piecewise_linear(vec![(0.0, 0.3), (0.4, 0.5), (1.0, 1.0)]).unwrap(),
    ] {
        assert!(s.audit(10_000).passed(), "{}", s.name());
    }
}
