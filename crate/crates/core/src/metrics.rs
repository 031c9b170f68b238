//! Ground-truth evaluation: values, suboptimality, complexity measures,
//! Monte Carlo validity checks and the two-armed Hellinger computation.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{
    beta_width, confidence_membership, ols_fit, penalized_value, solve_policy_enum, tabular_mu, ConfidenceSpec,
    EstimatorError, FittedModel, Policy, DEFAULT_ENUM_CAP,
};
use crate::instances::{sample_dataset, CbInstance, InstanceError, TabularInstance};
use crate::linalg::{lp_norm, sym_matrix_power, Exponent, MatrixPower, Vector};
use crate::rng::{derive_seed, label_hash};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("policy kind does not match the instance kind")]
    KindMismatch,
    #[error("policy has {got} states, instance has {expected}")]
    ShapeMismatch { got: usize, expected: usize },
    #[error("design covariance is singular along the optimal policy's feature")]
    Singular,
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// `V(π) = E_{s∼ρ}[r(s, π(s))]` from the true means.
pub fn value_of(instance: &CbInstance, policy: &Policy) -> Result<f64, MetricsError> {
    match (instance, policy) {
        (CbInstance::Tabular(t), Policy::FiniteMap(actions)) => {
            if actions.len() != t.states {
                return Err(MetricsError::ShapeMismatch { got: actions.len(), expected: t.states });
            }
            if actions.iter().any(|&a| a >= t.actions) {
                return Err(MetricsError::KindMismatch);
            }
            Ok((0..t.states).map(|s| t.rho[s] * t.mean(s, actions[s])).sum())
        }
        (CbInstance::Ball(b), Policy::UnitVector(v)) if v.len() == b.d => Ok(v.dot(&b.theta_star)),
        _ => Err(MetricsError::KindMismatch),
    }
}

/// `π★`: per-state argmax of the true means, or the `θ★` direction on the ball.
pub fn optimal_policy(instance: &CbInstance) -> Policy {
    match instance {
        CbInstance::Tabular(t) => Policy::FiniteMap(t.optimal_actions()),
        CbInstance::Ball(b) => {
            let norm = b.theta_star.norm();
            if norm > 0.0 {
                Policy::UnitVector(&b.theta_star / norm)
            } else {
                let mut e = Vector::zeros(b.d);
                e[0] = 1.0;
                Policy::UnitVector(e)
            }
        }
    }
}

/// `V(π★) − V(π)`.
pub fn suboptimality(instance: &CbInstance, policy: &Policy) -> Result<f64, MetricsError> {
    let best = value_of(instance, &optimal_policy(instance))?;
    Ok(best - value_of(instance, policy)?)
}

/// `μ_{π★} = E_{s∼ρ}[φ(s, π★(s))]`.
pub fn mu_pistar(instance: &CbInstance) -> Vector {
    match (instance, optimal_policy(instance)) {
        (CbInstance::Tabular(t), Policy::FiniteMap(a)) => tabular_mu(t.states, t.actions, &t.rho, &a),
        (_, Policy::UnitVector(v)) => v,
        _ => unreachable!("optimal policy kind follows the instance kind"),
    }
}

/// `𝔠_q = ‖Σ_D^{−1/2} μ_{π★}‖_q` under the instance's design covariance
/// (empirical rows for ball instances, `n(s,a)/n` or behavior for tabular).
pub fn complexity_cq(instance: &CbInstance, q: Exponent, ridge: f64) -> Result<f64, MetricsError> {
    let mu = mu_pistar(instance);
    match instance {
        CbInstance::Tabular(t) => tabular_cq(t, &mu, q, ridge),
        CbInstance::Ball(b) => {
            let sigma = b.design.tr_mul(&b.design) / b.n as f64;
            let inv = sym_matrix_power(&sigma, MatrixPower::InvSqrt, ridge)?;
            Ok(lp_norm((inv * mu).as_slice(), q))
        }
    }
}

/// `𝔠_q` with the population covariance of a ball instance's design.
pub fn complexity_cq_population(instance: &CbInstance, q: Exponent) -> Result<f64, MetricsError> {
    match instance {
        CbInstance::Ball(b) => {
            let inv = sym_matrix_power(&b.covariance, MatrixPower::InvSqrt, 0.0)?;
            Ok(lp_norm((inv * mu_pistar(instance)).as_slice(), q))
        }
        CbInstance::Tabular(_) => complexity_cq(instance, q, 0.0),
    }
}

fn tabular_cq(t: &TabularInstance, mu: &Vector, q: Exponent, ridge: f64) -> Result<f64, MetricsError> {
    let weights: Vec<f64> = t.coverage().into_iter().flatten().collect();
    let mut out = Vec::with_capacity(mu.len());
    for (i, &m) in mu.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let w = weights[i] + ridge;
        if w <= 0.0 {
            return Err(MetricsError::Singular);
        }
        out.push(m / w.sqrt());
    }
    Ok(lp_norm(&out, q))
}

/// `‖Σ_D^{−1/2} μ‖_q` under a fitted model; `∞` on unobserved directions.
pub fn model_complexity(model: &FittedModel, mu: &Vector, q: Exponent) -> f64 {
    match model.whiten(mu) {
        Some(w) => lp_norm(w.as_slice(), q),
        None => f64::INFINITY,
    }
}

/// `C★ = sup_s ρ(s)/μ(s, π★(s))`; `∞` when an optimal action is unsupported.
///
/// Without an explicit behavior distribution the design's coverage is used.
pub fn concentrability(instance: &TabularInstance, behavior: Option<&[Vec<f64>]>) -> f64 {
    let coverage;
    let mu = match behavior {
        Some(b) => b,
        None => {
            coverage = instance.coverage();
            &coverage[..]
        }
    };
    let star = instance.optimal_actions();
    let mut sup: f64 = 0.0;
    for s in 0..instance.states {
        if instance.rho[s] <= 0.0 {
            continue;
        }
        let m = mu[s][star[s]];
        if m <= 0.0 {
            return f64::INFINITY;
        }
        sup = sup.max(instance.rho[s] / m);
    }
    sup
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub c_q: Vec<(Exponent, f64)>,
    pub c_star: Option<f64>,
    pub mu_pistar: Vector,
}

pub fn complexity_report(instance: &CbInstance, qs: &[Exponent]) -> Result<ComplexityReport, MetricsError> {
    let c_q = qs.iter().map(|&q| complexity_cq(instance, q, 0.0).map(|c| (q, c))).collect::<Result<_, _>>()?;
    let c_star = instance.as_tabular().map(|t| concentrability(t, None));
    Ok(ComplexityReport { c_q, c_star, mu_pistar: mu_pistar(instance) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport {
    pub p: Exponent,
    pub beta: f64,
    pub trials: usize,
    pub covered: usize,
    /// Largest `‖Σ_D^{1/2}(θ★ − θ̂)‖_p` among covered trials.
    pub max_radius: f64,
    /// Covered trials where some policy's pessimistic value exceeded its true value.
    pub pessimism_violations: usize,
    /// Covered trials where `π̂_p`'s suboptimality exceeded `β·𝔠_q + 1e−9`.
    pub bound_violations: usize,
    /// Largest `suboptimality(π̂_p) − β·𝔠_q` among covered trials.
    pub max_bound_slack: f64,
}

impl ValidityReport {
    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.trials.max(1) as f64
    }
}

struct TrialCheck {
    covered: bool,
    radius: f64,
    pessimism_violation: bool,
    bound_excess: f64,
}

fn validity_trial(
    t: &TabularInstance,
    instance: &CbInstance,
    p: Exponent,
    beta: f64,
    seed: u64,
) -> Result<TrialCheck, MetricsError> {
    let model = ols_fit(&sample_dataset(instance, seed)?, 0.0)?;
    let spec = ConfidenceSpec::new(p, beta);
    let theta_star = instance.theta_star();
    let m = confidence_membership(&theta_star, &model, &spec);
    if !m.member {
        return Ok(TrialCheck { covered: false, radius: m.radius, pessimism_violation: false, bound_excess: 0.0 });
    }
    let mut violation = false;
    let mut policy = vec![0usize; t.states];
    let total = (t.actions as u64).pow(t.states as u32);
    for _ in 0..total {
        let mu = tabular_mu(t.states, t.actions, &t.rho, &policy);
        if penalized_value(&mu, &model, &spec) > mu.dot(&theta_star) + 1e-12 {
            violation = true;
        }
        for s in (0..t.states).rev() {
            policy[s] += 1;
            if policy[s] < t.actions {
                break;
            }
            policy[s] = 0;
        }
    }
    let chosen = solve_policy_enum(t, &model, &spec, DEFAULT_ENUM_CAP)?;
    let gap = suboptimality(instance, &chosen)?;
    let bound = beta * model_complexity(&model, &mu_pistar(instance), p.dual());
    Ok(TrialCheck { covered: true, radius: m.radius, pessimism_violation: violation, bound_excess: gap - bound })
}

/// Coverage of `θ★` by `Θ_p` with `β` from [`beta_width`], plus per-trial
/// pessimism and suboptimality-bound checks on covered trials.
pub fn validity_report(
    instance: &CbInstance,
    p: Exponent,
    delta: f64,
    trials: usize,
    master_seed: u64,
) -> Result<ValidityReport, MetricsError> {
    let t = instance.as_tabular().ok_or(MetricsError::KindMismatch)?;
    let beta = beta_width(p, t.dim(), t.n(), delta);
    let tag = label_hash("validity");
    let run = |i: usize| validity_trial(t, instance, p, beta, derive_seed(&[master_seed, tag, i as u64]));
    #[cfg(feature = "parallel")]
    let checks: Vec<Result<TrialCheck, MetricsError>> = (0..trials).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let checks: Vec<Result<TrialCheck, MetricsError>> = (0..trials).map(run).collect();

    let mut report = ValidityReport {
        p,
        beta,
        trials,
        covered: 0,
        max_radius: 0.0,
        pessimism_violations: 0,
        bound_violations: 0,
        max_bound_slack: f64::NEG_INFINITY,
    };
    for c in checks {
        let c = c?;
        if !c.covered {
            continue;
        }
        report.covered += 1;
        report.max_radius = report.max_radius.max(c.radius);
        report.pessimism_violations += usize::from(c.pessimism_violation);
        report.bound_violations += usize::from(c.bound_excess > 1e-9);
        report.max_bound_slack = report.max_bound_slack.max(c.bound_excess);
    }
    Ok(report)
}

/// Squared Hellinger distance between the reference two-armed instance and
/// its alternative with parameters `(p, α, β)`.
pub fn hellinger_sq(p: f64, alpha: f64, beta: f64) -> f64 {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let v = 0.5
        * ((r - (p * alpha).sqrt()).powi(2)
            + p * (1.0 - alpha)
            + (1.0 - p) * beta
            + (r - ((1.0 - p) * (1.0 - beta)).sqrt()).powi(2));
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HellingerMin {
    pub value: f64,
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
}

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let k = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=k).map(|i| (lo + i as f64 * step).min(hi)).collect()
}

fn search(ps: &[f64], alphas: &[f64], betas: &[f64]) -> Option<HellingerMin> {
    let mut best: Option<HellingerMin> = None;
    for &p in ps {
        for &alpha in alphas {
            for &beta in betas {
                if beta <= alpha {
                    continue;
                }
                let value = hellinger_sq(p, alpha, beta);
                if best.is_none_or(|b| value < b.value) {
                    best = Some(HellingerMin { value, p, alpha, beta });
                }
            }
        }
    }
    best
}

/// Minimum of [`hellinger_sq`] over the grid `{0, h, 2h, …, 1}³` restricted to `β > α`.
pub fn hellinger_grid_min(step: f64) -> HellingerMin {
    let g = grid(0.0, 1.0, step);
    search(&g, &g, &g).expect("grid has at least one pair with beta > alpha")
}

/// Two-level search: a coarse grid, then a fine grid in a window of one
/// coarse step around the coarse minimizer.
pub fn hellinger_infimum(coarse: f64, fine: f64) -> HellingerMin {
    let c = hellinger_grid_min(coarse);
    let window = |x: f64| grid((x - coarse).max(0.0), (x + coarse).min(1.0), fine);
    search(&window(c.p), &window(c.alpha), &window(c.beta)).map_or(c, |f| if f.value < c.value { f } else { c })
}
