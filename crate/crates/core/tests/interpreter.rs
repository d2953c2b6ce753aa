use std::sync::OnceLock;

use discovery::cellsim::*;
use discovery::interpreter::*;
use discovery::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn design() -> &'static CellDesign {
    static D: OnceLock<CellDesign> = OnceLock::new();
    D.get_or_init(CellDesign::reference_80ah)
}

fn small_spec(samples: usize) -> BankSpec {
    BankSpec { samples, seed: 11, ..BankSpec::default() }
}

fn bank() -> &'static SimulationBank {
    static B: OnceLock<SimulationBank> = OnceLock::new();
    B.get_or_init(|| SimulationBank::build(design(), &small_spec(5000)).unwrap())
}

#[test]
fn prior_draw_counts_and_determinism() {
    let prior = PriorConfig::default();
    let a = sample_prior(50_000, &prior, 3).unwrap();
    assert_eq!(a.len(), 50_000);
    assert_eq!(a[..10], sample_prior(10, &prior, 3).unwrap()[..]);
    assert_ne!(a[0], sample_prior(1, &prior, 4).unwrap()[0]);
    assert!(a.iter().all(|x| prior.contains(x)));
    for (k, b) in prior.bounds.iter().enumerate().filter(|(_, b)| !b.log) {
        let mean = a.iter().map(|x| x[k]).sum::<f64>() / a.len() as f64;
        let mid = 0.5 * (b.lower + b.upper);
        assert!((mean - mid).abs() < 0.01 * mid, "{}: {mean} vs {mid}", FREE_NAMES[k]);
    }
}

#[test]
fn degenerate_prior_hugs_the_corner() {
    let eps = 1e-9;
    let mut prior = PriorConfig::default();
    for b in prior.bounds.iter_mut() {
        b.lower = b.upper * (1.0 - eps);
    }
    for x in sample_prior(100, &prior, 0).unwrap() {
        for (v, b) in x.iter().zip(&prior.bounds) {
            assert!((v - b.upper).abs() <= eps * b.upper.abs());
        }
    }
}

#[test]
fn invalid_priors_are_rejected() {
    let mut p = PriorConfig::default();
    p.bounds[5] = Bound::linear(1.0, 1.0);
    assert!(matches!(sample_prior(10, &p, 0), Err(Error::InvalidPrior(_))));
    let mut p = PriorConfig::default();
    p.bounds[0] = Bound::log(0.0, 1.0);
    assert!(matches!(sample_prior(10, &p, 0), Err(Error::InvalidPrior(_))));
    assert!(sample_prior(0, &PriorConfig::default(), 0).is_err());
}

#[test]
fn singleton_batch_matches_direct_simulation() {
    let d = design();
    let draw = sample_prior(1, &PriorConfig::default(), 5).unwrap()[0];
    let checkup = Checkup::default();
    let batch = simulate_batch(&[draw], d, &checkup).unwrap();
    let p = derive_full_params(&draw, d).unwrap();
    let direct = checkup.run(&p, d, "sample-0", 1).unwrap();
    assert_eq!(batch.profiles, vec![direct]);
    assert_eq!(batch.params, vec![p]);
}

#[test]
fn batch_order_follows_input_order() {
    let d = design();
    let draws = sample_prior(6, &PriorConfig::default(), 8).unwrap();
    let checkup = Checkup::default();
    let fwd = simulate_batch(&draws, d, &checkup).unwrap();
    let rev: Vec<_> = draws.iter().rev().copied().collect();
    let back = simulate_batch(&rev, d, &checkup).unwrap();
    let n = draws.len();
    for (k, &src) in fwd.source.iter().enumerate() {
        let j = back.source.iter().position(|&s| s == n - 1 - src).unwrap();
        assert_eq!(fwd.params[k], back.params[j]);
        assert_eq!(fwd.profiles[k].signature(), back.profiles[j].signature());
    }
}

#[test]
fn mostly_failing_batch_is_an_error() {
    let d = design();
    let good = free_of(&PhysParams::reference(d));
    let mut bad = good;
    bad[9] = 0.02;
    bad[10] = 0.98;
    let ok = simulate_batch(&[good, good, bad], d, &Checkup::default()).unwrap();
    assert_eq!((ok.params.len(), ok.failed), (2, 1));
    assert!(matches!(
        simulate_batch(&[good, bad, bad], d, &Checkup::default()),
        Err(Error::AllFailed { failed: 2, total: 3 })
    ));
}

#[test]
fn resampled_profile_matches_dense_simulation() {
    let d = design();
    let p = PhysParams::reference(d);
    let dense = Checkup { solver: SolverOptions { dt_max: 0.5, max_dv: 1e-5, ..SolverOptions::default() }, ..Checkup::default() };
    let reference = dense.run(&p, d, "x", 1).unwrap();
    let got = Checkup::default().run(&p, d, "x", 1).unwrap();
    for (a, b) in [(&got.discharge, &reference.discharge), (&got.charge, &reference.charge)] {
        assert_eq!(a.voltage.len(), GRID_POINTS);
        let worst = a.voltage.iter().zip(&b.voltage).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-4, "{:?}: {worst:e}", a.direction);
    }
}

#[test]
fn resample_hits_raw_rows_on_a_linear_segment() {
    let rows: Vec<TimeSeriesRow> = (0..=10)
        .map(|k| TimeSeriesRow {
            time_s: k as f64,
            current_a: 1.0,
            voltage_v: 4.0 - 0.1 * k as f64,
            throughput_ah: 0.5 * k as f64,
            cycle_index: 1,
        })
        .collect();
    let v = resample(&rows, 11).unwrap();
    for (k, x) in v.iter().enumerate() {
        assert!((x - (4.0 - 0.1 * k as f64)).abs() < 1e-12);
    }
}

#[test]
fn acceptance_count_arithmetic() {
    assert_eq!(accept_count(50_000, 0.01), 500);
    assert_eq!(accept_count(5000, 0.04), 200);
    assert_eq!(accept_count(10, 0.01), 1);
}

#[test]
fn identity_toy_concentrates_on_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta: Vec<Vec<f64>> = (0..20_000).map(|_| vec![rng.random::<f64>() * 10.0]).collect();
    let sims: Vec<Vec<f64>> = theta.iter().map(|t| vec![t[0]; 3]).collect();
    let truth = 6.3;
    let w = vec![1.0 / 3.0; 3];
    let mut last = f64::INFINITY;
    for q in [0.2, 0.05, 0.01, 0.001] {
        let acc = abc_reject(&[truth; 3], &sims, &w, q, 1).unwrap();
        let (mean, _) = moments(&theta, &acc.indices);
        let err = (mean[0] - truth).abs();
        assert!(err <= last + 1e-12);
        last = err;
    }
    assert!(last < 1e-3);
}

/// Posterior mean of θ under a U(lo, hi) prior and one N(θ, σ²) observation, by Simpson's rule.
fn truncated_normal_mean(x0: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let (mut z, mut m) = (0.0, 0.0);
    for i in 0..=n {
        let t = lo + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let f = (-0.5 * ((t - x0) / sigma).powi(2)).exp();
        z += w * f;
        m += w * f * t;
    }
    m / z
}

fn gaussian_toy(q: f64) -> (f64, f64, f64) {
    let (lo, hi, sigma, x0) = (0.0, 5.0, 1.0, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let theta: Vec<Vec<f64>> = (0..50_000).map(|_| vec![lo + (hi - lo) * rng.random::<f64>()]).collect();
    let sims: Vec<Vec<f64>> = theta
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(&mut rng);
            vec![t[0] + sigma * z]
        })
        .collect();
    let acc = abc_reject(&[x0], &sims, &[1.0], q, 200).unwrap();
    let (mean, sd) = moments(&theta, &acc.indices);
    (mean[0], sd[0], truncated_normal_mean(x0, sigma, lo, hi))
}

#[test]
fn gaussian_toy_matches_conjugate_posterior() {
    let (mean, _, exact) = gaussian_toy(0.01);
    assert!((mean / exact - 1.0).abs() < 0.05, "{mean} vs {exact}");
}

#[test]
fn posterior_contracts_as_quantile_shrinks() {
    let sds: Vec<f64> = [0.1, 0.05, 0.01].iter().map(|&q| gaussian_toy(q).1).collect();
    assert!(sds[0] >= sds[1] && sds[1] >= sds[2], "{sds:?}");
}

#[test]
fn too_few_acceptances_is_an_error() {
    let sims = vec![vec![0.0]; 1000];
    let r = abc_reject(&[0.0], &sims, &[1.0], 0.01, 200);
    assert!(matches!(r, Err(Error::InsufficientAcceptance { accepted: 10, required: 200 })));
}

#[test]
fn symmetric_cell_has_zero_offset() {
    let mut d = CellDesign::reference_80ah();
    d.ocp_p = d.ocp_n.clone();
    d.thickness_p = d.thickness_n;
    d.c_max_p = d.c_max_n;
    d.v_min = 0.0;
    let mut x = free_of(&PhysParams::reference(design()));
    x[7] = 0.7;
    x[8] = 0.7;
    x[9] = 0.9;
    x[10] = 0.1;
    let p = derive_full_params(&x, &d).unwrap();
    assert!(p.theta_off.abs() < 1e-9, "{}", p.theta_off);
}

#[test]
fn derived_lower_stoichiometry_matches_slow_discharge() {
    let d = design();
    let p = derive_full_params(&free_of(&PhysParams::reference(d)), d).unwrap();
    let mut sim = Simulator::new(p, d, 25.0, SolverOptions::default()).unwrap();
    sim.set_full();
    sim.constant_current(d.nominal_capacity / 3.0, d.v_min).unwrap();
    assert!((sim.mean_stoichiometry().0 - p.theta_l_n).abs() < 0.02);
}

#[test]
fn unbalanced_draw_is_infeasible() {
    let d = design();
    let mut x = free_of(&PhysParams::reference(d));
    x[9] = 0.02;
    x[10] = 0.98;
    assert!(matches!(derive_full_params(&x, d), Err(Error::InfeasibleBalance(_))));
}

proptest! {
    #[test]
    fn derived_windows_are_ordered(u in prop::array::uniform11(0.0f64..1.0)) {
        let prior = PriorConfig::default();
        let x: FreeParams = std::array::from_fn(|k| prior.bounds[k].at(u[k]));
        if let Ok(p) = derive_full_params(&x, design()) {
            prop_assert!(p.theta_h_n > p.theta_l_n);
            prop_assert!(p.theta_h_p < p.theta_l_p);
            prop_assert_eq!(p.theta_off, p.theta_l_n - p.theta_l_p);
        }
    }
}

fn summary(cell: &str, cycle: u32, mean: Vec<f64>) -> PosteriorSummary {
    PosteriorSummary {
        cell_id: cell.into(),
        cycle_index: cycle,
        names: PhysParams::NAMES.iter().map(|s| s.to_string()).collect(),
        log_scale: vec![false; 14],
        sd: vec![0.1; 14],
        mean,
        acceptance_count: 200,
    }
}

#[test]
fn feature_examples() {
    let a = summary("c1", 1, (1..=14).map(f64::from).collect());
    let b = summary("c1", 57, (2..=15).map(f64::from).collect());
    let f = extract_features(&a, &b).unwrap();
    assert_eq!(f.to_vec().len(), 28);
    assert!(f.delta.iter().all(|&x| x == 1.0));
    assert_eq!(f.initial[13], 14.0);
    let same = extract_features(&a, &summary("c1", 57, a.mean.clone())).unwrap();
    assert!(same.delta.iter().all(|&x| x == 0.0));
    assert!(matches!(extract_features(&a, &summary("c2", 57, a.mean.clone())), Err(Error::CellMismatch(..))));
    assert_eq!(FeatureVector28::from_slice(&f.to_vec()).unwrap(), f);
}

#[test]
fn bank_is_shared_by_designs_with_the_same_key() {
    let cache = BankCache::new(None);
    let spec = small_spec(60);
    let a = CellDesign::reference_80ah();
    let mut b = CellDesign::reference_80ah();
    b.name = "other batch".into();
    b.c_e0 = 1100.0;
    let x = cache.get_or_build(&a, &spec).unwrap();
    let y = cache.get_or_build(&b, &spec).unwrap();
    assert!(std::sync::Arc::ptr_eq(&x, &y));
    assert_eq!(cache.stats(), CacheStats { hits: 1, loads: 0, builds: 1 });
    let c = CellDesign::variant("thick", 95e-6, 84e-6);
    cache.get_or_build(&c, &spec).unwrap();
    assert_eq!(cache.stats().builds, 2);
}

#[test]
fn bank_file_round_trip_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(40);
    let d = design();
    let first = BankCache::new(Some(dir.path().to_path_buf()));
    let built = first.get_or_build(d, &spec).unwrap();
    let second = BankCache::new(Some(dir.path().to_path_buf()));
    let loaded = second.get_or_build(d, &spec).unwrap();
    assert_eq!(*built, *loaded);
    assert_eq!(second.stats(), CacheStats { hits: 0, loads: 1, builds: 0 });

    let path = dir.path().join("b.bank");
    built.write(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 99;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(SimulationBank::read(&path), Err(Error::SchemaVersion { found: 99, .. })));
    assert!(matches!(SimulationBank::read(&dir.path().join("missing.bank")), Err(Error::MissingFile(_))));
}

#[test]
fn recovers_most_parameters_of_synthetic_cells() {
    let d = design();
    let prior = PriorConfig::default();
    let cfg = AbcConfig { quantile: 0.04, ..AbcConfig::default() };
    let logs = prior.log_flags14();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut tested = 0;
    while tested < 4 {
        // Cells with a consistent top of charge, as the degradation generator produces.
        let u: [f64; 11] = std::array::from_fn(|_| 0.15 + 0.7 * rng.random::<f64>());
        let free = ReferenceFree {
            d_s_n: prior.bounds[0].at(u[0]),
            d_s_p: prior.bounds[1].at(u[1]),
            k_n: prior.bounds[2].at(u[2]),
            k_p: prior.bounds[3].at(u[3]),
            d_e: prior.bounds[4].at(u[4]),
            sigma_e: prior.bounds[5].at(u[5]),
            r_f: prior.bounds[6].at(u[6]),
            eps_s_n: prior.bounds[7].at(u[7]),
            eps_s_p: prior.bounds[8].at(u[8]),
            theta_h_n: prior.bounds[9].at(u[9]),
        };
        let Ok(truth) = consistent_params(&free, d) else { continue };
        if !prior.contains(&free_of(&truth)) {
            continue;
        }
        let Ok(obs) = Checkup::default().run(&truth, d, "cell", 1) else { continue };
        let post = infer_posterior(&obs, bank(), &prior, &cfg).unwrap().full(bank(), &prior);
        assert_eq!(post.acceptance_count, 200);
        let t = truth.to_array();
        let within = (0..14)
            .filter(|&k| {
                let x = if logs[k] { t[k].log10() } else { t[k] };
                (post.mean[k] - x).abs() <= 2.0 * post.sd[k]
            })
            .count();
        assert!(within >= 12, "only {within}/14 within two sd");
        tested += 1;
    }
}
