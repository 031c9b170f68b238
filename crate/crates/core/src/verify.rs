//! Self-check suites run by `punc verify`. Each suite samples its own random
//! cases from a seed and reports one line per property.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::estimators::{
    lcb_tabular, ols_fit, penalized_value, pevi_policy, solve_policy_enum, ConfidenceSpec, FittedModel,
    DEFAULT_ENUM_CAP,
};
use crate::instances::{
    gen_concentrability_example, gen_minimax_lb_instance, gen_separation_instance, random_orthogonal, CbInstance,
    Dataset, MinimaxVariant, RewardModel, TabularDesign, TabularInstance, TabularStats,
};
use crate::linalg::{align_rotation, lp_norm, sqrt_and_inv_sqrt, Exponent, Matrix, Vector};
use crate::metrics::{complexity_cq, concentrability, validity_report};
use crate::rng::{derive_seed, label_hash, stream, Stream};

pub const SUITES: [&str; 5] = ["linalg", "duality", "lcb-equiv", "validity", "complexity"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(suite: &'static str, name: &str, passed: bool, detail: String) -> Check {
    Check { suite, name: name.to_string(), passed, detail }
}

/// Runs one suite by name, or every suite for `"all"`.
pub fn run_suite(name: &str, seed: u64) -> Option<Vec<Check>> {
    let one = |suite: &str| -> Option<Vec<Check>> {
        let s = derive_seed(&[seed, label_hash(suite)]);
        Some(match suite {
            "linalg" => linalg_suite(s),
            "duality" => duality_suite(s),
            "lcb-equiv" => lcb_equiv_suite(s),
            "validity" => validity_suite(s),
            "complexity" => complexity_suite(s),
            _ => return None,
        })
    };
    if name == "all" {
        let mut out = Vec::new();
        for s in SUITES {
            out.extend(one(s)?);
        }
        Some(out)
    } else {
        one(name)
    }
}

fn gaussian_vec(d: usize, rng: &mut Stream) -> Vector {
    Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn linalg_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream(seed);
    let mut worst_inverse: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..8);
        let a = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let m = &a * a.transpose();
        let ridge = rng.random_range(0.01..1.0);
        let (sqrt, inv) = sqrt_and_inv_sqrt(&m, ridge).expect("ridged PSD matrix is invertible");
        worst_inverse = worst_inverse.max((inv * sqrt - Matrix::identity(d, d)).amax());
    }
    let mut holder_ok = true;
    let mut bracket_ok = true;
    for _ in 0..200 {
        let d = rng.random_range(1..12);
        let v = gaussian_vec(d, &mut rng);
        let q = rng.random_range(1.0..10.0);
        let lhs = lp_norm(v.as_slice(), Exponent::ONE);
        let rhs = (d as f64).powf(1.0 - 1.0 / q) * lp_norm(v.as_slice(), Exponent::Finite(q));
        holder_ok &= lhs <= rhs + 1e-12 * rhs.max(1.0);
        let l2 = v.norm();
        let u = align_rotation(&v).expect("gaussian vector is nonzero");
        bracket_ok &= ((&u * &v).lp_norm(1) - l2).abs() <= 1e-10 * l2.max(1.0);
        let rot = random_orthogonal(d, &mut rng);
        let l1 = (&rot * &v).lp_norm(1);
        bracket_ok &= l1 >= l2 - 1e-10 && l1 <= (d as f64).sqrt() * l2 + 1e-10;
    }
    vec![
        check(
            "linalg",
            "inverse root times root is identity",
            worst_inverse <= 1e-8,
            format!("max error {worst_inverse:.2e}"),
        ),
        check("linalg", "l1 <= d^(1-1/q) lq", holder_ok, "200 random vectors".into()),
        check("linalg", "rotation bracket and alignment", bracket_ok, "200 random vectors".into()),
    ]
}

/// Random dense model with covariance spectrum in `[0.5, 2]`.
fn random_dense_model(d: usize, rng: &mut Stream) -> FittedModel {
    let q = random_orthogonal(d, rng);
    let spectrum = Vector::from_fn(d, |_, _| rng.random_range(0.5..2.0));
    let sigma = &q * Matrix::from_diagonal(&spectrum) * q.transpose();
    let theta = gaussian_vec(d, rng);
    ols_fit(&Dataset::LinearStats { sigma_d: sigma, theta_hat: theta, n: 100 }, 0.0).expect("well-conditioned")
}

/// Minimum of `μᵀθ` over sampled points on the boundary of `Θ_p`.
pub fn boundary_oracle(
    mu: &Vector,
    model: &FittedModel,
    spec: &ConfidenceSpec,
    samples: usize,
    rng: &mut Stream,
) -> f64 {
    let d = mu.len();
    let w = model.whiten(mu).expect("dense model");
    let base = mu.dot(&model.theta_hat);
    let mut best = f64::INFINITY;
    for _ in 0..samples {
        let a = (rng.random_range(-1.0..1.0) * 4f64.ln()).exp();
        let u = Vector::from_fn(d, |_, _| {
            let g: f64 = rng.sample(StandardNormal);
            g.signum() * g.abs().powf(a)
        });
        let norm = lp_norm(u.as_slice(), spec.p);
        if norm == 0.0 {
            continue;
        }
        best = best.min(base + 0.5 * spec.beta * w.dot(&u) / norm);
    }
    best
}

fn duality_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream(seed);
    let ps = [Exponent::ONE, Exponent::Finite(1.5), Exponent::TWO, Exponent::Finite(4.0), Exponent::Infinity];
    let mut worst_gap: f64 = 0.0;
    let mut worst_under: f64 = 0.0;
    for case in 0..50 {
        let d = rng.random_range(2..4);
        let model = random_dense_model(d, &mut rng);
        let mu = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let spec = ConfidenceSpec::new(ps[case % ps.len()], rng.random_range(0.05..0.2));
        let exact = penalized_value(&mu, &model, &spec);
        let oracle = boundary_oracle(&mu, &model, &spec, 20_000, &mut rng);
        worst_gap = worst_gap.max((oracle - exact).abs());
        worst_under = worst_under.max(exact - oracle);
    }
    vec![
        check(
            "duality",
            "max-only value matches boundary oracle",
            worst_gap <= 2e-3,
            format!("oracle gap {worst_gap:.2e} (50 cases)"),
        ),
        check(
            "duality",
            "oracle never below max-only value",
            worst_under <= 1e-9,
            format!("max undershoot {worst_under:.2e}"),
        ),
    ]
}

/// Random tabular statistics with positive counts and Gaussian means.
fn random_tabular(rng: &mut Stream) -> (TabularInstance, TabularStats) {
    let states = rng.random_range(1..=5);
    let actions = rng.random_range(1..=4);
    let counts: Vec<Vec<u64>> = (0..states).map(|_| (0..actions).map(|_| rng.random_range(1..60)).collect()).collect();
    let means: Vec<Vec<Option<f64>>> =
        (0..states).map(|_| (0..actions).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect()).collect();
    let raw: Vec<f64> = (0..states).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let rho: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let n = counts.iter().flatten().sum();
    let inst = TabularInstance {
        states,
        actions,
        design: TabularDesign::Fixed { counts: counts.clone() },
        rewards: vec![vec![RewardModel::Constant { mean: 0.0 }; actions]; states],
        rho,
    };
    (inst, TabularStats { counts, means, n })
}

fn lcb_equiv_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream(seed);
    let mut lcb_matches = 0;
    let mut pevi_matches = 0;
    let total = 100;
    for _ in 0..total {
        let (inst, stats) = random_tabular(&mut rng);
        let model = ols_fit(&Dataset::TabularStats(stats), 0.0).expect("positive counts");
        let beta = rng.random_range(0.01..2.0);
        let enumerated =
            solve_policy_enum(&inst, &model, &ConfidenceSpec::new(Exponent::Infinity, beta), DEFAULT_ENUM_CAP);
        let lcb = lcb_tabular(&model, beta, &inst.rho);
        let pevi = pevi_policy(&model, 0.5 * beta, &inst);
        lcb_matches += usize::from(enumerated.is_ok() && enumerated == lcb);
        pevi_matches += usize::from(lcb.is_ok() && pevi == lcb);
    }
    vec![
        check(
            "lcb-equiv",
            "enumerated p = inf equals LCB",
            lcb_matches == total,
            format!("{lcb_matches}/{total} instance matches"),
        ),
        check(
            "lcb-equiv",
            "PEVI(beta/2) equals LCB(beta)",
            pevi_matches == total,
            format!("{pevi_matches}/{total} instance matches"),
        ),
    ]
}

/// Three-state, two-action Gaussian instance with `n = 600`.
pub fn validity_fixture() -> CbInstance {
    let g = |mean| RewardModel::Gaussian { mean };
    CbInstance::Tabular(TabularInstance {
        states: 3,
        actions: 2,
        design: TabularDesign::Fixed { counts: vec![vec![150, 50], vec![100, 100], vec![120, 80]] },
        rewards: vec![vec![g(0.3), g(0.5)], vec![g(0.1), g(-0.2)], vec![g(0.7), g(0.65)]],
        rho: vec![0.5, 0.3, 0.2],
    })
}

fn validity_suite(seed: u64) -> Vec<Check> {
    let inst = validity_fixture();
    let (delta, trials) = (0.1, 2000);
    let floor = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
    let mut out = Vec::new();
    for p in [Exponent::ONE, Exponent::TWO, Exponent::Infinity] {
        let r = match validity_report(&inst, p, delta, trials, seed) {
            Ok(r) => r,
            Err(e) => {
                out.push(check("validity", &format!("p = {p}: report"), false, e.to_string()));
                continue;
            }
        };
        out.push(check(
            "validity",
            &format!("p = {p}: coverage"),
            r.coverage() >= floor,
            format!("{:.4} >= {floor:.4}", r.coverage()),
        ));
        out.push(check(
            "validity",
            &format!("p = {p}: radius on covered trials"),
            r.max_radius <= 0.5 * r.beta,
            format!("{:.4} <= {:.4}", r.max_radius, 0.5 * r.beta),
        ));
        out.push(check(
            "validity",
            &format!("p = {p}: pessimism"),
            r.pessimism_violations == 0,
            format!("{} violations", r.pessimism_violations),
        ));
        out.push(check(
            "validity",
            &format!("p = {p}: suboptimality bound"),
            r.bound_violations == 0,
            format!("{} violations", r.bound_violations),
        ));
    }
    out
}

fn random_minimax_tuple(rng: &mut Stream) -> (usize, Exponent, f64, u64) {
    let d = rng.random_range(4..41);
    let pick = rng.random_range(0..5);
    if pick == 0 {
        let lambda: f64 = rng.random_range(2.0..20.0);
        let n = (lambda * lambda * rng.random_range(1.0f64..10.0)).ceil() as u64;
        return (d, Exponent::ONE, lambda, n);
    }
    let q = match pick {
        1 => Exponent::Infinity,
        2 => Exponent::TWO,
        _ => Exponent::Finite(rng.random_range(1.05..8.0)),
    };
    let inv_p = q.dual().reciprocal();
    let floor = 8f64.sqrt() * (d as f64).powf(0.5 - inv_p);
    let lambda = floor * rng.random_range(1.0..4.0);
    let n = ((d as f64).powf(2.0 * inv_p) * lambda * lambda * rng.random_range(1.0..10.0)).ceil() as u64;
    (d, q, lambda, n)
}

fn complexity_suite(seed: u64) -> Vec<Check> {
    let mut rng = stream(seed);
    let mut out = Vec::new();

    let mut sep_err: f64 = 0.0;
    for d in [4usize, 8, 16, 20] {
        let s = (d / 2) as f64;
        let n = 9 * (d as u64 / 2).pow(3) * 3;
        match gen_separation_instance(d, n, Exponent::TWO, 1.0) {
            Ok(inst) => {
                let c1 = complexity_cq(&inst, Exponent::ONE, 0.0).unwrap_or(f64::NAN);
                sep_err = sep_err.max((c1 - (4.0 * s.sqrt() - 1.0 / s.sqrt())).abs());
            }
            Err(_) => sep_err = f64::INFINITY,
        }
    }
    out.push(check(
        "complexity",
        "separation c_1 = 4 sqrt(S) - 1/sqrt(S)",
        sep_err <= 1e-9,
        format!("max error {sep_err:.2e}"),
    ));

    let mut conc_err: f64 = 0.0;
    for states in [2usize, 3, 7, 12] {
        let s = states as f64;
        let inst = gen_concentrability_example(states, 1000).expect("valid");
        let t = inst.as_tabular().expect("tabular");
        conc_err = conc_err.max((concentrability(t, None) - s * s).abs());
        let c1 = complexity_cq(&inst, Exponent::ONE, 0.0).unwrap_or(f64::NAN);
        conc_err = conc_err.max((c1 - (2.0 * s.sqrt() - 1.0 / s.sqrt())).abs());
    }
    out.push(check(
        "complexity",
        "C* = S^2 and c_1 = 2 sqrt(S) - 1/sqrt(S)",
        conc_err <= 1e-9,
        format!("max error {conc_err:.2e}"),
    ));

    let mut members = 0;
    let mut worst = String::new();
    for _ in 0..200 {
        let (d, q, lambda, n) = random_minimax_tuple(&mut rng);
        match gen_minimax_lb_instance(d, q, lambda, n, MinimaxVariant::Standard) {
            Ok(inst) => {
                let cq = complexity_cq(&inst, q, 0.0).unwrap_or(f64::INFINITY);
                if cq <= lambda * (1.0 + 1e-12) {
                    members += 1;
                } else {
                    worst = format!("d={d} q={q} lambda={lambda} n={n}: c_q = {cq}");
                }
            }
            Err(e) => worst = format!("d={d} q={q} lambda={lambda} n={n}: {e}"),
        }
    }
    out.push(check("complexity", "minimax membership c_q <= lambda", members == 200, format!("{members}/200 {worst}")));

    let mut inclusion = true;
    let mut monotone = true;
    for _ in 0..200 {
        let states = rng.random_range(1..6);
        let actions = rng.random_range(2..4);
        let raw: Vec<Vec<f64>> =
            (0..states).map(|_| (0..actions).map(|_| rng.random_range(0.01..1.0)).collect()).collect();
        let total: f64 = raw.iter().flatten().sum();
        let behavior: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|x| x / total).collect()).collect();
        let rho_raw: Vec<f64> = (0..states).map(|_| rng.random_range(0.01..1.0)).collect();
        let rs: f64 = rho_raw.iter().sum();
        let rewards =
            (0..states).map(|_| (0..actions).map(|_| RewardModel::Constant { mean: rng.random() }).collect()).collect();
        let inst = CbInstance::Tabular(TabularInstance {
            states,
            actions,
            design: TabularDesign::Random { behavior, n: 100 },
            rewards,
            rho: rho_raw.iter().map(|r| r / rs).collect(),
        });
        let t = inst.as_tabular().expect("tabular");
        let c1 = complexity_cq(&inst, Exponent::ONE, 0.0).unwrap_or(f64::INFINITY);
        inclusion &= c1 <= (states as f64 * concentrability(t, None)).sqrt() * (1.0 + 1e-12);
        let c2 = complexity_cq(&inst, Exponent::TWO, 0.0).unwrap_or(f64::INFINITY);
        let ci = complexity_cq(&inst, Exponent::Infinity, 0.0).unwrap_or(f64::INFINITY);
        monotone &= ci <= c2 * (1.0 + 1e-12) && c2 <= c1 * (1.0 + 1e-12);
    }
    out.push(check("complexity", "c_1 <= sqrt(S C*)", inclusion, "200 random instances".into()));
    out.push(check("complexity", "c_q nonincreasing in q", monotone, "200 random instances".into()));
    out
}
