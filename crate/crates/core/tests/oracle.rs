#![allow(clippy::needless_range_loop)]

use discovery::cellsim::CyclingCondition;
use discovery::oracle::*;
use discovery::stats::Standardizer;
use discovery::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_regression(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect()).collect();
    let y = x
        .iter()
        .map(|r| 1.5 + 2.0 * r[0] - 0.7 * r[1 % p] + 0.05 * r[p - 1] + 0.3 * (rng.random::<f64>() - 0.5))
        .collect();
    (x, y)
}

/// Accelerated proximal gradient on the same objective, with the intercept
/// as an unpenalized coordinate.
fn fista(z: &[Vec<f64>], y: &[f64], l1: f64, l2: f64, iters: usize) -> (Vec<f64>, f64) {
    let (n, p) = (y.len(), z[0].len());
    // Lipschitz bound of the smooth part: (‖[Z 1]‖_F² / n) + l2.
    let lip = z.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0).sum::<f64>() / n as f64 + l2;
    let step = 1.0 / lip;
    let mut x = vec![0.0; p + 1];
    let mut v = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let mut grad = vec![0.0; p + 1];
        for (row, yi) in z.iter().zip(y) {
            let r = row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + v[p] - yi;
            for j in 0..p {
                grad[j] += r * row[j] / n as f64;
            }
            grad[p] += r / n as f64;
        }
        let mut next = vec![0.0; p + 1];
        for j in 0..p {
            let u = v[j] - step * (grad[j] + l2 * v[j]);
            next[j] = u.signum() * (u.abs() - step * l1).max(0.0);
        }
        next[p] = v[p] - step * grad[p];
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        for j in 0..=p {
            v[j] = next[j] + (t - 1.0) / t_next * (next[j] - x[j]);
        }
        x = next;
        t = t_next;
    }
    let b = x[p];
    x.truncate(p);
    (x, b)
}

#[test]
fn elastic_net_matches_proximal_gradient() {
    let (x, y) = toy_regression(20, 3, 5);
    let s = Standardizer::fit(&x).unwrap();
    let z: Vec<Vec<f64>> = x.iter().map(|r| s.transform(r).unwrap()).collect();
    for (l1, l2) in [(0.05, 0.1), (0.3, 0.0), (0.01, 1.0)] {
        let fit = fit_base(&x, &y, l1, l2).unwrap();
        let (w, b) = fista(&z, &y, l1, l2, 200_000);
        let mine = enet_objective(&z, &y, &fit.weights, fit.bias, l1, l2);
        let reference = enet_objective(&z, &y, &w, b, l1, l2);
        assert!((mine - reference).abs() < 1e-8, "{l1} {l2}: {mine} vs {reference}");
    }
}

#[test]
fn unpenalized_fit_is_least_squares() {
    let (x, y) = toy_regression(30, 3, 9);
    let fit = fit_base(&x, &y, 0.0, 0.0).unwrap();
    // Normal equations on raw features with an intercept column.
    let a: Vec<Vec<f64>> = x.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let m = discovery::linalg::Matrix::from_fn(4, 4, |i, j| a.iter().map(|r| r[i] * r[j]).sum());
    let rhs: Vec<f64> = (0..4).map(|i| a.iter().zip(&y).map(|(r, yi)| r[i] * yi).sum()).collect();
    let beta = discovery::linalg::Cholesky::new(&m).unwrap().solve(&rhs);
    for r in &x {
        let ols = r.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[3];
        assert!((fit.raw_predict(r).unwrap() - ols).abs() < 1e-6);
    }
}

#[test]
fn heavy_lasso_penalty_zeroes_every_weight() {
    let (x, y) = toy_regression(20, 3, 1);
    let fit = fit_base(&x, &y, 1e6, 0.0).unwrap();
    assert!(fit.weights.iter().all(|w| *w == 0.0));
    assert!((fit.bias - y.iter().sum::<f64>() / 20.0).abs() < 1e-12);
}

#[test]
fn constant_target_is_degenerate() {
    let (x, _) = toy_regression(10, 3, 2);
    assert!(matches!(fit_base(&x, &[7.0; 10], 0.1, 0.1), Err(Error::DegenerateData(_))));
    assert!(matches!(fit_base(&x[..1], &[7.0], 0.1, 0.1), Err(Error::DegenerateData(_))));
}

#[test]
fn elastic_net_is_deterministic_and_generic() {
    let (x, y) = toy_regression(20, 3, 3);
    assert_eq!(fit_base(&x, &y, 0.1, 0.1).unwrap(), fit_base(&x, &y, 0.1, 0.1).unwrap());
    let xf: Vec<Vec<f32>> = x.iter().map(|r| r.iter().map(|v| *v as f32).collect()).collect();
    let yf: Vec<f32> = y.iter().map(|v| *v as f32).collect();
    let a = fit_base(&xf, &yf, 0.1, 0.1).unwrap();
    let b = fit_base(&x, &y, 0.1, 0.1).unwrap();
    for (u, v) in a.weights.iter().zip(&b.weights) {
        assert!((*u as f64 - v).abs() < 1e-3);
    }
}

#[test]
fn constant_feature_keeps_zero_weight_and_rejects_other_values() {
    let (mut x, y) = toy_regression(15, 3, 4);
    x.iter_mut().for_each(|r| r[2] = 3.0);
    let fit = fit_base(&x, &y, 0.01, 0.01).unwrap();
    assert_eq!(fit.weights[2], 0.0);
    assert!(matches!(fit.raw_predict(&[0.0, 0.0, 4.0]), Err(Error::Unstandardizable { index: 2 })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn elastic_net_satisfies_kkt(seed in 0u64..1000, l1 in 0.0f64..0.5, l2 in 0.0f64..1.0) {
        let (x, y) = toy_regression(20, 5, seed);
        let fit = fit_base(&x, &y, l1, l2).unwrap();
        prop_assert!(kkt_violation(&fit, &x, &y, l1, l2) < 1e-6);
    }
}

// ---------------------------------------------------------------- SVR

fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        x[r] = (b[r] - (r + 1..n).map(|k| a[r][k] * x[k]).sum::<f64>()) / a[r][r];
    }
    Some(x)
}

fn beta_objective(k: &[Vec<f64>], z: &[f64], eps: f64, beta: &[f64]) -> f64 {
    let n = z.len();
    let mut o = 0.0;
    for i in 0..n {
        for j in 0..n {
            o += 0.5 * beta[i] * beta[j] * k[i][j];
        }
        o += eps * beta[i].abs() - z[i] * beta[i];
    }
    o
}

/// Minimum of the dual over `β ∈ [−C, C]ⁿ, Σβ = 0` by enumerating, for each
/// coordinate, {−C, negative free, 0, positive free, +C}.
fn enumerate_dual(k: &[Vec<f64>], z: &[f64], eps: f64, c: f64) -> f64 {
    let n = z.len();
    let mut best = f64::INFINITY;
    for code in 0..5usize.pow(n as u32) {
        let pat: Vec<usize> = (0..n).map(|i| code / 5usize.pow(i as u32) % 5).collect();
        let mut beta = vec![0.0; n];
        let free: Vec<usize> = (0..n).filter(|&i| pat[i] == 1 || pat[i] == 3).collect();
        for i in 0..n {
            beta[i] = match pat[i] {
                0 => -c,
                4 => c,
                _ => 0.0,
            };
        }
        let fixed_sum: f64 = beta.iter().sum();
        if free.is_empty() {
            if fixed_sum.abs() > 1e-12 {
                continue;
            }
        } else {
            let m = free.len();
            let mut a = vec![vec![0.0; m + 1]; m + 1];
            let mut rhs = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                let s = if pat[i] == 3 { 1.0 } else { -1.0 };
                for (q, &j) in free.iter().enumerate() {
                    a[r][q] = k[i][j];
                }
                a[r][m] = 1.0;
                rhs[r] = z[i] - eps * s - (0..n).filter(|j| !free.contains(j)).map(|j| k[i][j] * beta[j]).sum::<f64>();
            }
            for q in 0..m {
                a[m][q] = 1.0;
            }
            rhs[m] = -fixed_sum;
            let Some(sol) = gauss_solve(a, rhs) else { continue };
            let mut ok = true;
            for (r, &i) in free.iter().enumerate() {
                let s = if pat[i] == 3 { 1.0 } else { -1.0 };
                ok &= s * sol[r] >= -1e-12 && sol[r].abs() <= c + 1e-12;
                beta[i] = sol[r];
            }
            if !ok {
                continue;
            }
        }
        best = best.min(beta_objective(k, z, eps, &beta));
    }
    best
}

#[test]
fn svr_dual_matches_enumerated_qp() {
    let x = [-1.2, -0.3, 0.4, 1.5];
    let z = [0.8, -0.5, 0.3, 1.1];
    for (w, eps, c) in [(0.7, 0.05, 1.0), (1.5, 0.2, 10.0), (0.5, 0.0, 0.3), (3.0, 0.05, 100.0)] {
        let k: Vec<Vec<f64>> = x.iter().map(|a| x.iter().map(|b| rbf(&[*a], &[*b], w)).collect()).collect();
        let sol = solve_dual(&k, &z, eps, c, 1e-10, 1_000_000).unwrap();
        let reference = enumerate_dual(&k, &z, eps, c);
        assert!((sol.objective - reference).abs() < 1e-6, "{w} {eps} {c}: {} vs {reference}", sol.objective);
        assert!((beta_objective(&k, &z, eps, &sol.beta) - sol.objective).abs() < 1e-9);
        assert!(sol.beta.iter().sum::<f64>().abs() < 1e-9);
    }
}

#[test]
fn svr_fits_constant_targets_inside_the_tube() {
    let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.4 - 1.0]).collect();
    let m = fit_svr(&x, &[0.3; 6], &SvrConfig::default()).unwrap();
    for t in [-3.0, 0.0, 0.7, 5.0] {
        assert!((m.predict(&[t]) - 0.3).abs() <= 0.05 + 1e-9);
    }
    // Targets already inside the tube around zero leave no support vectors.
    let m = fit_svr(&x, &[0.01, -0.02, 0.0, 0.03, -0.01, 0.02], &SvrConfig { epsilon: 0.1, ..SvrConfig::default() }).unwrap();
    assert!(m.support.is_empty());
    assert_eq!(m.predict(&[0.5]), m.bias);
}

#[test]
fn svr_reports_nonconvergence() {
    let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
    let z: Vec<f64> = (0..8).map(|i| (i as f64).sin()).collect();
    let cfg = SvrConfig { epsilon: 0.0, c: 100.0, max_iter: 1, ..SvrConfig::default() };
    assert!(matches!(fit_svr(&x, &z, &cfg), Err(Error::NonConvergence(_))));
}

// ---------------------------------------------------------------- oracle

fn cell(id: &str, t: f64, c: f64, d: f64, features: Vec<f64>, life: f64) -> HistoricalCell {
    HistoricalCell { cell_id: id.into(), condition: CyclingCondition::new(t, c, d), features, life }
}

fn corpus(conditions: &[(f64, f64, f64)], per: usize, seed: u64) -> Vec<HistoricalCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (k, &(t, c, d)) in conditions.iter().enumerate() {
        let scale = 2000.0 * (-(t - 25.0).abs() / 40.0).exp() / (c + d);
        for i in 0..per {
            let f: Vec<f64> = (0..28).map(|_| rng.random::<f64>()).collect();
            let life = scale * (1.0 + 0.4 * (f[0] - 0.5) - 0.2 * (f[14] - 0.5)) * (1.0 + 0.01 * rng.random::<f64>());
            out.push(cell(&format!("h{k}_{i}"), t, c, d, f, life));
        }
    }
    out
}

#[test]
fn clustering_examples() {
    let two = corpus(&[(25.0, 0.5, 0.5), (45.0, 0.5, 0.5)], 5, 0);
    let cl = cluster_conditions(&two, 4).unwrap();
    assert_eq!(cl.iter().map(|c| c.members.len()).collect::<Vec<_>>(), vec![5, 5]);

    let three = corpus(&[(25.0, 0.5, 0.5), (45.0, 0.5, 0.5), (25.0, 1.0, 1.0)], 4, 0);
    assert_eq!(cluster_conditions(&three, 4).unwrap().len(), 3);

    let mut lone = corpus(&[(25.0, 0.5, 0.5), (45.0, 0.5, 0.5)], 5, 0);
    lone.push(cell("x", 40.0, 0.5, 0.5, vec![0.0; 28], 100.0));
    let cl = cluster_conditions(&lone, 4).unwrap();
    assert_eq!(cl.len(), 2);
    let hot = cl.iter().find(|c| c.representative.ambient_t == 45.0).unwrap();
    assert!(hot.members.contains(&"x".to_string()));
    assert_eq!(cl.iter().map(|c| c.members.len()).sum::<usize>(), 11);

    let single = corpus(&[(25.0, 0.5, 0.5)], 6, 0);
    assert!(matches!(cluster_conditions(&single, 4), Err(Error::SingleCondition)));
}

#[test]
fn equidistant_merge_prefers_lower_temperature() {
    let mut cells = corpus(&[(15.0, 1.0, 1.0), (35.0, 1.0, 1.0)], 5, 1);
    cells.push(cell("mid", 25.0, 1.0, 1.0, vec![0.0; 28], 100.0));
    let cl = cluster_conditions(&cells, 4).unwrap();
    let cold = cl.iter().find(|c| c.representative.ambient_t == 15.0).unwrap();
    assert!(cold.members.contains(&"mid".to_string()));
}

fn weights(w0: f64, bias: f64) -> BaseWeights<f64> {
    let s = Standardizer { mean: vec![0.0; 28], sd: vec![1.0; 28] };
    let mut w = vec![0.0; 28];
    w[0] = w0;
    BaseWeights { weights: w, bias, standardization: s }
}

fn clusters(conds: &[(f64, f64, f64)]) -> Vec<ConditionCluster> {
    conds
        .iter()
        .enumerate()
        .map(|(k, &(t, c, d))| ConditionCluster {
            cluster_id: format!("c{k}"),
            representative: CyclingCondition::new(t, c, d),
            members: vec![],
        })
        .collect()
}

#[test]
fn identical_cluster_weights_give_a_constant_meta_predictor() {
    let cl = clusters(&[(15.0, 0.5, 0.5), (25.0, 1.0, 1.0), (45.0, 1.5, 1.0)]);
    let m = fit_meta(&cl, &vec![weights(3.0, 800.0); 3], &SvrConfig::default()).unwrap();
    assert_eq!(m.meta.len(), 29);
    for cond in [CyclingCondition::new(20.0, 0.7, 0.7), CyclingCondition::new(60.0, 3.0, 2.0)] {
        let w = m.predict_weights(&cond).weights;
        assert!((w.weights[0] - 3.0).abs() < 1e-9 && (w.bias - 800.0).abs() < 1e-9);
    }
}

#[test]
fn bias_only_weights_predict_the_bias() {
    let cl = clusters(&[(15.0, 0.5, 0.5), (25.0, 1.0, 1.0)]);
    let m = fit_meta(&cl, &[weights(0.0, 800.0), weights(0.0, 800.0)], &SvrConfig::default()).unwrap();
    let f: Vec<f64> = (0..28).map(|i| i as f64).collect();
    assert_eq!(m.predict_life(&f, &CyclingCondition::new(30.0, 1.0, 1.0)).unwrap(), 800.0);
}

#[test]
fn knot_weights_stay_within_the_tube() {
    let conds = [(15.0, 0.5, 0.5), (25.0, 1.0, 1.0), (35.0, 1.5, 1.0), (45.0, 1.0, 0.5)];
    let cl = clusters(&conds);
    let ws: Vec<_> = [(1.0, 700.0), (4.0, 1200.0), (-2.0, 400.0), (0.5, 900.0)].iter().map(|&(a, b)| weights(a, b)).collect();
    let svr = SvrConfig { c: 1e4, ..SvrConfig::default() };
    let m = fit_meta(&cl, &ws, &svr).unwrap();
    for (c, w) in cl.iter().zip(&ws) {
        let p = m.predict_weights(&c.representative);
        assert!(!p.extrapolated);
        let sd_w0 = m.target_standardization.sd[0];
        let sd_b = m.target_standardization.sd[28];
        assert!((p.weights.weights[0] - w.weights[0]).abs() <= (svr.epsilon + 1e-5) * sd_w0);
        assert!((p.weights.bias - w.bias).abs() <= (svr.epsilon + 1e-5) * sd_b);
        assert_eq!(p, m.predict_weights(&c.representative));
    }
    assert!(m.predict_weights(&CyclingCondition::new(60.0, 1.0, 1.0)).extrapolated);

    // |∂f/∂x| ≤ Σ|β| · e^{-1/2} / w for an RBF expansion, in standardized units.
    let h = 0.01;
    for j in [0usize, 28] {
        let meta = &m.meta[j];
        let bound = meta.coef.iter().map(|b| b.abs()).sum::<f64>() * (-0.5f64).exp() / meta.width
            * m.target_standardization.sd[j]
            / m.condition_standardization.sd[0];
        for t in [10.0, 20.0, 30.0, 40.0, 50.0] {
            let at = |t: f64| {
                let w = m.predict_weights(&CyclingCondition::new(t, 1.0, 1.0)).weights;
                if j == 28 { w.bias } else { w.weights[j] }
            };
            let slope = (at(t + h) - at(t - h)).abs() / (2.0 * h);
            assert!(slope <= bound * (1.0 + 1e-6), "coefficient {j} at {t}: {slope} > {bound}");
        }
    }
}

#[test]
fn oracle_reproduces_base_fit_at_the_cluster_centroid() {
    let conds = [(15.0, 0.5, 0.5), (25.0, 1.0, 1.0), (35.0, 1.5, 1.0), (45.0, 1.0, 0.5)];
    let cells = corpus(&conds, 6, 3);
    let hyper = OracleHyper { l1: 5.0, l2: 0.1, svr: SvrConfig { c: 1e4, epsilon: 0.01, ..SvrConfig::default() } };
    let m = fit_oracle_with(&cells, &hyper, &OracleConfig::default()).unwrap();
    for (k, cl) in m.clusters.iter().enumerate() {
        let members: Vec<_> = cells.iter().filter(|c| cl.members.contains(&c.cell_id)).collect();
        let centroid: Vec<f64> =
            (0..28).map(|j| members.iter().map(|c| c.features[j]).sum::<f64>() / members.len() as f64).collect();
        let base = m.cluster_weights[k].raw_predict(&centroid).unwrap();
        let oracle = m.predict_life(&centroid, &cl.representative).unwrap();
        // Each coefficient moves at most ε·sd; bound the sum by |z| weights.
        let z = m.feature_standardization.transform(&centroid).unwrap();
        let tol = 0.01
            * (m.target_standardization.sd[28]
                + z.iter().zip(&m.target_standardization.sd).map(|(a, s)| a.abs() * s).sum::<f64>())
            + 1e-6;
        assert!((base - oracle).abs() <= tol, "{}: {base} vs {oracle} (tol {tol})", cl.cluster_id);
    }
}

#[test]
fn cross_validated_oracle_round_trips_through_json() {
    let conds = [(15.0, 0.5, 0.5), (25.0, 1.0, 1.0), (35.0, 1.5, 1.0), (45.0, 1.0, 0.5)];
    let cells = corpus(&conds, 5, 7);
    let cfg = OracleConfig {
        grid: OracleGrid { l1_scale: vec![0.01, 0.1], l2: vec![0.1], width: vec![1.5], epsilon: vec![0.05], c: vec![10.0] },
        ..OracleConfig::default()
    };
    let fit = fit_oracle(&cells, &cfg).unwrap();
    assert_eq!(fit.cv.len(), 2);
    assert!(fit.cv.iter().all(|s| s.mape.is_finite()));
    let again = fit_oracle(&cells, &cfg).unwrap();
    assert_eq!(fit.model, again.model);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.json");
    fit.model.save(&path).unwrap();
    let back = OracleModel::load(&path).unwrap();
    let f = &cells[0].features;
    assert_eq!(back.predict_life(f, &cells[0].condition).unwrap(), fit.model.predict_life(f, &cells[0].condition).unwrap());

    let mut bumped: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    bumped["version"] = 99.into();
    std::fs::write(&path, bumped.to_string()).unwrap();
    assert!(matches!(OracleModel::load(&path), Err(Error::SchemaVersion { found: 99, .. })));
    assert!(matches!(OracleModel::load(&dir.path().join("none.json")), Err(Error::MissingFile(_))));
}

#[test]
fn filter_drops_cells_before_training() {
    let conds = [(15.0, 0.5, 0.5), (25.0, 1.0, 1.0), (45.0, 1.0, 0.5)];
    let mut cells = corpus(&conds, 5, 2);
    cells[0].life = f64::NAN;
    let hyper = OracleHyper { l1: 1.0, l2: 0.1, svr: SvrConfig::default() };
    let m = fit_oracle_with(&cells, &hyper, &OracleConfig::default()).unwrap();
    assert!(m.clusters.iter().all(|c| !c.members.contains(&cells[0].cell_id)));
}
