use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use punc::estimators::{
    beta_width, confidence_membership, ols_fit, penalized_value, solve_policy_enum, tabular_mu, ConfidenceSpec,
    DEFAULT_ENUM_CAP,
};
use punc::experiments::{run_experiment, summarize, ExperimentConfig, RuleSpec};
use punc::instances::{
    gen_minimax_lb_instance, gen_separation_instance, sample_dataset, CbInstance, Dataset, MinimaxVariant, RewardModel,
    TabularDesign, TabularInstance,
};
use punc::linalg::{align_rotation, lp_norm, sym_matrix_power, Exponent, MatrixPower};
use punc::metrics::{complexity_cq, hellinger_grid_min};

fn exponent() -> impl Strategy<Value = Exponent> {
    prop_oneof![
        Just(Exponent::ONE),
        Just(Exponent::TWO),
        Just(Exponent::Infinity),
        (1.0f64..10.0).prop_map(Exponent::Finite),
    ]
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d)
}

fn psd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * (d + 2)).prop_map(move |v| {
        let a = DMatrix::from_column_slice(d, d + 2, &v);
        &a * a.transpose() + DMatrix::identity(d, d) * 0.05
    })
}

fn orthogonal(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |v| DMatrix::from_column_slice(d, d, &v).qr().q())
}

fn tabular(max_states: usize, max_actions: usize) -> impl Strategy<Value = TabularInstance> {
    (1..=max_states, 1..=max_actions).prop_flat_map(|(s, a)| {
        (
            prop::collection::vec(prop::collection::vec(1u64..200, a), s),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, a), s),
            prop::collection::vec(0.05f64..1.0, s),
        )
            .prop_map(move |(counts, means, raw)| {
                let total: f64 = raw.iter().sum();
                TabularInstance {
                    states: s,
                    actions: a,
                    design: TabularDesign::Fixed { counts },
                    rewards: means
                        .into_iter()
                        .map(|row| row.into_iter().map(|mean| RewardModel::Gaussian { mean }).collect())
                        .collect(),
                    rho: raw.iter().map(|r| r / total).collect(),
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn inverse_sqrt_times_sqrt_is_identity(m in (1usize..6).prop_flat_map(psd), ridge in 0.0f64..0.5) {
        let d = m.nrows();
        let a = sym_matrix_power(&m, MatrixPower::InvSqrt, ridge).unwrap();
        let b = sym_matrix_power(&m, MatrixPower::Sqrt, ridge).unwrap();
        prop_assert!((a * b - DMatrix::<f64>::identity(d, d)).abs().max() <= 1e-8);
    }

    #[test]
    fn l1_embedding(v in (1usize..12).prop_flat_map(vector), q in 1.0f64..20.0) {
        let d = v.len() as f64;
        let lhs = lp_norm(&v, Exponent::ONE);
        let rhs = d.powf(1.0 - 1.0 / q) * lp_norm(&v, Exponent::Finite(q));
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
    }

    #[test]
    fn rotation_bracket((x, v) in (2usize..8).prop_flat_map(|d| (vector(d), orthogonal(d)))) {
        let x = DVector::from_vec(x);
        prop_assume!(x.norm() > 1e-6);
        let d = x.len() as f64;
        let l1 = lp_norm((&v * &x).as_slice(), Exponent::ONE);
        prop_assert!(x.norm() <= l1 * (1.0 + 1e-12));
        prop_assert!(l1 <= d.sqrt() * x.norm() * (1.0 + 1e-12));
        let aligned = align_rotation(&x).unwrap();
        let attained = lp_norm((&aligned * &x).as_slice(), Exponent::ONE);
        prop_assert!((attained - x.norm()).abs() <= 1e-9 * x.norm());
    }

    #[test]
    fn beta_width_monotone_in_p(d in 1usize..200, n in 1u64..100_000, delta in 0.001f64..0.5, p in 1.0f64..50.0) {
        let b_inf = beta_width(Exponent::Infinity, d, n, delta);
        let b_p = beta_width(Exponent::Finite(p), d, n, delta);
        let b_1 = beta_width(Exponent::ONE, d, n, delta);
        prop_assert!(b_inf <= b_p * (1.0 + 1e-12));
        prop_assert!(b_p <= b_1 * (1.0 + 1e-12));
        prop_assert!((b_1 - d as f64 * b_inf).abs() <= 1e-12 * b_1);
    }

    #[test]
    fn complexity_nonincreasing_in_q(t in tabular(4, 3), q in 1.0f64..8.0) {
        let inst = CbInstance::Tabular(t);
        let c1 = complexity_cq(&inst, Exponent::ONE, 0.0).unwrap();
        let cq = complexity_cq(&inst, Exponent::Finite(q), 0.0).unwrap();
        let c_inf = complexity_cq(&inst, Exponent::Infinity, 0.0).unwrap();
        let d = inst.dim() as f64;
        prop_assert!(c_inf <= cq * (1.0 + 1e-12));
        prop_assert!(cq <= c1 * (1.0 + 1e-12));
        prop_assert!(c1 <= d.powf(1.0 - 1.0 / q) * cq * (1.0 + 1e-12));
    }

    #[test]
    fn pessimism_holds_whenever_covered(t in tabular(3, 3), seed in any::<u64>(), p in exponent()) {
        let inst = CbInstance::Tabular(t.clone());
        let model = ols_fit(&sample_dataset(&inst, seed).unwrap(), 0.0).unwrap();
        let spec = ConfidenceSpec::new(p, beta_width(p, inst.dim(), inst.n(), 0.1));
        let theta_star = inst.theta_star();
        prop_assume!(confidence_membership(&theta_star, &model, &spec).member);
        let mut policy = vec![0usize; t.states];
        loop {
            let mu = tabular_mu(t.states, t.actions, &t.rho, &policy);
            prop_assert!(penalized_value(&mu, &model, &spec) <= mu.dot(&theta_star) + 1e-12);
            let Some(s) = (0..t.states).rev().find(|&s| policy[s] + 1 < t.actions) else { break };
            policy[s] += 1;
            policy[s + 1..].iter_mut().for_each(|a| *a = 0);
        }
    }

    #[test]
    fn enumeration_is_deterministic(t in tabular(4, 3), seed in any::<u64>(), p in exponent(), beta in 0.0f64..2.0) {
        let inst = CbInstance::Tabular(t.clone());
        let model = ols_fit(&sample_dataset(&inst, seed).unwrap(), 0.0).unwrap();
        let spec = ConfidenceSpec::new(p, beta);
        prop_assert_eq!(
            solve_policy_enum(&t, &model, &spec, DEFAULT_ENUM_CAP),
            solve_policy_enum(&t, &model, &spec, DEFAULT_ENUM_CAP)
        );
    }

    #[test]
    fn dataset_sampling_is_seed_deterministic(t in tabular(4, 3), seed in any::<u64>()) {
        let inst = CbInstance::Tabular(t);
        prop_assert_eq!(sample_dataset(&inst, seed).unwrap(), sample_dataset(&inst, seed).unwrap());
    }

    #[test]
    fn separation_counts_sum_to_n(half in 2usize..12, k in 1u64..4, p in exponent()) {
        let d = 2 * half;
        let n = 9 * (half as u64).pow(3) * k;
        let inst = gen_separation_instance(d, n, p, 1.0).unwrap();
        prop_assert!(inst.validate().is_ok());
        let t = inst.as_tabular().unwrap();
        let TabularDesign::Fixed { counts } = &t.design else { panic!("fixed design expected") };
        prop_assert_eq!(counts.iter().flatten().sum::<u64>(), n);
        prop_assert_eq!(gen_separation_instance(d, n, p, 1.0).unwrap(), inst);
    }

    #[test]
    fn minimax_instances_are_members(d in 4usize..40, q in exponent(), scale in 1.0f64..4.0, mult in 1.0f64..10.0) {
        let inv_p = q.dual().reciprocal();
        let lambda = (8f64.sqrt() * (d as f64).powf(0.5 - inv_p)).max(2.0) * scale;
        let n = ((d as f64).powf(2.0 * inv_p).max(1.0) * lambda * lambda * mult).ceil() as u64;
        if let Ok(inst) = gen_minimax_lb_instance(d, q, lambda, n, MinimaxVariant::Standard) {
            prop_assert!(inst.validate().is_ok());
            prop_assert!(complexity_cq(&inst, q, 0.0).unwrap() <= lambda * (1.0 + 1e-12));
        }
    }
}

fn small_config(rules: Vec<RuleSpec>) -> ExperimentConfig {
    let mut config = ExperimentConfig::from_json(
        r#"{"preset": "prop", "workload": {"kind": "plugin-mab", "actions": 8},
            "rules": [], "n_grid": [64, 128], "trials": 20, "master_seed": 5, "delta": 0.1}"#,
    )
    .unwrap();
    config.rules = rules;
    config
}

#[test]
fn removing_cells_leaves_other_records_unchanged() {
    let plugin = RuleSpec::new(punc::experiments::RuleKind::Plugin, None);
    let punc = RuleSpec::lp(Exponent::Infinity);
    let full = run_experiment(&small_config(vec![plugin.clone(), punc.clone()])).unwrap();
    let only = run_experiment(&small_config(vec![punc])).unwrap();
    let kept: Vec<_> = full.records.iter().filter(|r| r.rule == "lp-inf").cloned().collect();
    assert_eq!(kept, only.records);
}

#[test]
fn summary_interval_contains_mean() {
    let out = run_experiment(&small_config(vec![RuleSpec::new(punc::experiments::RuleKind::Plugin, None)])).unwrap();
    for row in summarize(&out.records, 0.9, 5).unwrap() {
        assert!(row.ci_lo <= row.mean && row.mean <= row.ci_hi, "{row:?}");
    }
}

#[test]
fn hellinger_grid_refines_towards_closed_form() {
    let target = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    let values: Vec<f64> = [0.1, 0.05, 0.01].iter().map(|&h| hellinger_grid_min(h).value).collect();
    assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-15), "{values:?}");
    assert!(values.iter().all(|&v| v >= target - 1e-12));
    assert!(values[2] - target < 1e-2);
}

#[test]
fn explicit_tabular_fit_recovers_cell_means() {
    let counts = [[3u64, 2], [4, 1]];
    let rewards = [[0.5, -1.0], [2.0, 0.25]];
    let mut rows = Vec::new();
    let mut r = Vec::new();
    for s in 0..2 {
        for a in 0..2 {
            for k in 0..counts[s][a] {
                let mut phi = vec![0.0; 4];
                phi[2 * s + a] = 1.0;
                rows.push(phi);
                r.push(rewards[s][a] + 0.1 * k as f64);
            }
        }
    }
    let features = DMatrix::from_fn(rows.len(), 4, |i, j| rows[i][j]);
    let fit = ols_fit(&Dataset::Explicit { features, rewards: DVector::from_vec(r) }, 0.0).unwrap();
    for s in 0..2 {
        for a in 0..2 {
            let c = counts[s][a] as f64;
            let mean = rewards[s][a] + 0.1 * (c - 1.0) / 2.0;
            assert!((fit.theta_hat[2 * s + a] - mean).abs() < 1e-12);
        }
    }
}
