#![allow(clippy::needless_range_loop)]

use std::collections::BTreeSet;

use discovery::cellsim::{CyclingCondition, Protocol};
use discovery::learner::*;
use proptest::prelude::*;

fn group(id: &str, ty: &str, t: f64, c: f64, d: f64) -> CellGroup {
    CellGroup {
        group_id: id.into(),
        cell_type: ty.into(),
        members: vec![format!("{id}-1")],
        condition: CyclingCondition::new(t, c, d),
        protocol: Protocol::cc_cc(),
    }
}

/// Eight types with 6, 6, 6, 5, 4, 4, 4 and 2 groups at distinct conditions.
fn eight_types() -> Vec<CellGroup> {
    let sizes = [6, 6, 6, 5, 4, 4, 4, 2];
    let temps = [10.0, 25.0, 45.0, 15.0, 35.0, 55.0];
    let rates = [0.5, 1.0, 1.5, 2.0];
    let mut out = Vec::new();
    for (t, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let id = format!("T{t}G{i}");
            out.push(group(&id, &format!("T{t}"), temps[i], rates[(i + t) % 4], 0.5 + 0.2 * t as f64));
        }
    }
    out
}

fn life(c: &CyclingCondition) -> f64 {
    3000.0 * (-(c.ambient_t - 25.0).abs() / 30.0).exp() / (c.c_chg + c.c_dis)
}

#[test]
fn budget_arithmetic() {
    assert_eq!(type_budget(5, 0.7), 3);
    assert_eq!(type_budget(6, 0.7), 4);
    assert_eq!(type_budget(4, 0.7), 2);
    assert_eq!(type_budget(2, 0.7), 1);
    assert_eq!(type_budget(1, 0.7), 1);
    assert_eq!(type_budget(10, 0.7), 7);
    assert_eq!(type_budget(2, 1.0), 2);
}

#[test]
fn query_counts_on_eight_types() {
    let groups = eight_types();
    assert_eq!(groups.len(), 37);
    let picks = unsupervised_query(&groups, 0.7).unwrap();
    assert_eq!(picks.len(), 22);
    let five = picks.iter().filter(|p| p.group_id.starts_with("T3")).count();
    assert_eq!(five, 3);
    for ty in 0..8 {
        let size = groups.iter().filter(|g| g.cell_type == format!("T{ty}")).count();
        let n = picks.iter().filter(|p| p.group_id.starts_with(&format!("T{ty}G"))).count();
        assert!(n <= (0.7 * size as f64).floor().max(1.0) as usize);
    }

    let chosen: BTreeSet<&str> = picks.iter().map(|p| p.group_id.as_str()).collect();
    let (sel, rest): (Vec<&CellGroup>, Vec<&CellGroup>) = groups.iter().partition(|g| chosen.contains(g.group_id.as_str()));
    let conds: Vec<CyclingCondition> = sel.iter().map(|g| g.condition).collect();
    let labels: Vec<f64> = conds.iter().map(life).collect();
    let gp = fit_gp(&conds, &labels, &GpConfig::default()).unwrap();
    let rest: Vec<CellGroup> = rest.into_iter().cloned().collect();
    assert_eq!(rest.len(), 15);
    let q = supervised_query(&gp, &rest);
    assert_eq!(q.selected.len(), 4);
    assert_eq!(chosen.len() + q.selected.len(), 26);
    assert_eq!(q, supervised_query(&gp, &rest));
}

#[test]
fn boundary_temperatures_come_first() {
    let g = vec![group("a", "X", 25.0, 1.0, 1.0), group("b", "X", 10.0, 1.0, 1.0), group("c", "X", 45.0, 1.0, 1.0)];
    let picks = unsupervised_query(&g, 0.7).unwrap();
    let ids: BTreeSet<&str> = picks.iter().map(|p| p.group_id.as_str()).collect();
    assert_eq!(ids, BTreeSet::from(["b", "c"]));
    assert!(picks.iter().all(|p| p.criterion == Criterion::TemperatureBoundary));
}

#[test]
fn warm_groups_prefer_lower_charge_rate() {
    let g = vec![group("fast", "X", 45.0, 1.0, 1.0), group("slow", "X", 45.0, 0.5, 1.0)];
    let picks = unsupervised_query(&g, 0.7).unwrap();
    assert_eq!(picks.len(), 1);
    assert_eq!(picks[0].group_id, "slow");
    // Below the corpus median the higher rate is preferred.
    let mut g = g.clone();
    g.extend([group("w1", "Y", 55.0, 1.0, 1.0), group("w2", "Y", 55.0, 1.0, 2.0), group("w3", "Y", 60.0, 1.0, 1.0)]);
    let picks = unsupervised_query(&g, 0.5).unwrap();
    assert!(picks.iter().any(|p| p.group_id == "fast"));
}

#[test]
fn spread_fills_the_remaining_budget() {
    let g: Vec<CellGroup> =
        [0.5, 1.0, 1.5, 2.0, 3.0].iter().enumerate().map(|(i, &c)| group(&format!("g{i}"), "X", 25.0, c, 1.0)).collect();
    let picks = unsupervised_query(&g, 0.7).unwrap();
    assert_eq!(picks.len(), 3);
    assert_eq!(picks[0].group_id, "g0");
    assert_eq!(picks[1], Pick { group_id: "g4".into(), criterion: Criterion::CrateSpread });
    assert_eq!(picks[2].group_id, "g2");
}

#[test]
fn full_cap_selects_everything() {
    let g = eight_types();
    assert_eq!(unsupervised_query(&g, 1.0).unwrap().len(), 37);
    assert!(unsupervised_query(&[], 0.7).is_err());
    assert!(unsupervised_query(&g, 0.0).is_err());
}

#[test]
fn upper_quartile_rule() {
    let stds: Vec<(String, f64)> = (1..=8).map(|i| (format!("g{i}"), i as f64)).collect();
    let q = supervised_query_stds(&stds);
    assert_eq!(q.q3, 6.25);
    assert_eq!(q.selected, vec!["g7".to_string(), "g8".to_string()]);
    let flat: Vec<(String, f64)> = (0..5).map(|i| (format!("g{i}"), 3.0)).collect();
    assert!(supervised_query_stds(&flat).selected.is_empty());
}

// ---------------------------------------------------------------- GP

fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    r
}

#[test]
fn gp_posterior_matches_direct_inverse() {
    let xs = [-0.8, 0.1, 1.3];
    let ys = [0.4, -0.2, 1.1];
    let (l, s2, n2) = (0.9, 1.7, 0.05);
    let k = |a: f64, b: f64| s2 * (-(a - b) * (a - b) / (2.0 * l * l)).exp();
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = k(xs[i], xs[j]) + if i == j { n2 } else { 0.0 };
        }
    }
    let inv = inv3(m);
    let hyper = GpHyper { length_scales: vec![l], signal_var: s2, noise_var: n2 };
    let gp = Gp::fit_fixed(xs.iter().map(|x| vec![*x]).collect(), ys.to_vec(), hyper).unwrap();
    for x in [-2.0, -0.8, 0.5, 1.3, 3.0] {
        let kv: Vec<f64> = xs.iter().map(|a| k(*a, x)).collect();
        let mut mean = 0.0;
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                mean += kv[i] * inv[i][j] * ys[j];
                q += kv[i] * inv[i][j] * kv[j];
            }
        }
        let (pm, pv) = gp.predict(&[x]);
        assert!((pm - mean).abs() < 1e-8 && (pv - (s2 - q)).abs() < 1e-8, "{x}: {pm} {pv} vs {mean} {}", s2 - q);
    }
}

#[test]
fn likelihood_gradient_matches_finite_differences() {
    let x: Vec<Vec<f64>> = vec![vec![0.0, 1.0], vec![0.5, -0.3], vec![1.2, 0.4], vec![-0.7, 0.9], vec![0.3, 0.2]];
    let y = vec![0.3, -0.5, 1.0, 0.2, -0.1];
    let h = GpHyper { length_scales: vec![0.8, 1.3], signal_var: 1.1, noise_var: 0.07 };
    let gp = Gp::fit_fixed(x.clone(), y.clone(), h.clone()).unwrap();
    let g = gp.lml_gradient();
    let theta = [h.length_scales[0].ln(), h.length_scales[1].ln(), h.signal_var.ln(), h.noise_var.ln()];
    let lml = |t: &[f64]| {
        let h = GpHyper { length_scales: vec![t[0].exp(), t[1].exp()], signal_var: t[2].exp(), noise_var: t[3].exp() };
        Gp::fit_fixed(x.clone(), y.clone(), h).unwrap().log_marginal_likelihood()
    };
    for k in 0..4 {
        let (mut a, mut b) = (theta, theta);
        a[k] += 1e-6;
        b[k] -= 1e-6;
        let fd = (lml(&a) - lml(&b)) / 2e-6;
        assert!((fd - g[k]).abs() < 1e-6, "{k}: {fd} vs {}", g[k]);
    }
}

fn smooth_corpus() -> (Vec<CyclingCondition>, Vec<f64>) {
    let conds: Vec<CyclingCondition> = [(10.0, 0.5), (20.0, 1.0), (30.0, 0.7), (40.0, 1.5), (50.0, 1.2), (25.0, 2.0)]
        .iter()
        .map(|&(t, c)| CyclingCondition::new(t, c, 1.0))
        .collect();
    let labels = conds.iter().map(life).collect();
    (conds, labels)
}

#[test]
fn gp_interpolates_with_a_tiny_noise_floor() {
    let (conds, labels) = smooth_corpus();
    let hyper = GpHyper { length_scales: vec![1.0, 1.0, 1.0], signal_var: 1.0, noise_var: 1e-9 };
    let x: Vec<Vec<f64>> = {
        let m = fit_gp(&conds, &labels, &GpConfig::default()).unwrap();
        conds.iter().map(|c| m.inputs.transform_lenient(&c.as_array())).collect()
    };
    let gp = Gp::fit_fixed(x.clone(), labels.clone(), hyper).unwrap();
    for (xi, yi) in x.iter().zip(&labels) {
        let (m, v) = gp.predict(xi);
        assert!(((m - yi) / yi).abs() < 1e-6);
        assert!(v.sqrt() <= 1e-3);
    }

    let cfg = GpConfig { noise_floor: 1e-9, ..GpConfig::default() };
    let model = fit_gp(&conds, &labels, &cfg).unwrap();
    for (c, y) in conds.iter().zip(&labels) {
        let (m, _) = model.predict_with_std(c);
        assert!(((m - y) / y).abs() < 0.05, "{m} vs {y}");
    }
}

#[test]
fn far_predictions_revert_to_the_prior() {
    let (conds, labels) = smooth_corpus();
    let model = fit_gp(&conds, &labels, &GpConfig::default()).unwrap();
    let far = CyclingCondition::new(5000.0, 1.0, 1.0);
    let (m, s) = model.predict_with_std(&far);
    let prior_sd = model.y_sd * model.hyper().signal_var.sqrt();
    let ymean = labels.iter().sum::<f64>() / labels.len() as f64;
    assert!((m - ymean).abs() <= 0.01 * ymean);
    assert!((s - prior_sd).abs() <= 0.01 * prior_sd);
    // Between two distant points the std exceeds the std at a training point.
    let (_, s_train) = model.predict_with_std(&conds[0]);
    let (_, s_mid) = model.predict_with_std(&CyclingCondition::new(45.0, 0.6, 1.0));
    assert!(s_mid > s_train);
}

#[test]
fn gp_fit_is_deterministic_and_rejects_small_inputs() {
    let (conds, labels) = smooth_corpus();
    let a = fit_gp(&conds, &labels, &GpConfig::default()).unwrap();
    let b = fit_gp(&conds, &labels, &GpConfig::default()).unwrap();
    assert_eq!(a.hyper(), b.hyper());
    assert!(fit_gp(&conds[..2], &labels[..2], &GpConfig::default()).is_err());
}

#[test]
fn secondary_inference_tracks_labelled_conditions() {
    let (conds, labels) = smooth_corpus();
    let cfg = GpConfig { noise_floor: 1e-8, ..GpConfig::default() };
    let model = fit_gp(&conds, &labels, &cfg).unwrap();
    let twin = group("twin", "X", conds[2].ambient_t, conds[2].c_chg, conds[2].c_dis);
    let out = secondary_inference(&model, &[twin]);
    let noise_sd = model.y_sd * model.hyper().noise_var.sqrt();
    assert!((out["twin"] - labels[2]).abs() <= 3.0 * noise_sd + 1e-6 * labels[2]);
    assert!(secondary_inference(&model, &[]).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn more_data_never_increases_variance(
        pts in prop::collection::vec(-2.0f64..2.0, 2..6),
        extra in -2.0f64..2.0,
        test in -3.0f64..3.0,
    ) {
        let h = GpHyper { length_scales: vec![0.7], signal_var: 1.0, noise_var: 0.01 };
        let x: Vec<Vec<f64>> = pts.iter().map(|p| vec![*p]).collect();
        let y = vec![0.0; x.len()];
        let base = Gp::fit_fixed(x.clone(), y.clone(), h.clone()).unwrap();
        let mut x2 = x;
        x2.push(vec![extra]);
        let more = Gp::fit_fixed(x2, vec![0.0; y.len() + 1], h).unwrap();
        prop_assert!(more.predict(&[test]).1 <= base.predict(&[test]).1 + 1e-10);
    }
}
