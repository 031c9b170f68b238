//! OLS fitting and the pessimistic learning rules.
//!
//! All rules share one β convention: the confidence set is
//! `Θ_p = {θ : ‖Σ_D^{1/2}(θ − θ̂)‖_p ≤ β/2}` and its max-only penalty is
//! `(β/2)·‖Σ_D^{−1/2}μ_π‖_q`. Tabular LCB with coefficient `b` on
//! `√(n/n(s,a))` therefore corresponds to `β = 2b`, and PEVI with coefficient
//! `β` is LCB at `2β`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instances::{Dataset, TabularInstance, TabularStats};
use crate::linalg::{lp_norm, sqrt_and_inv_sqrt, symmetrize, Exponent, LinalgError, Matrix, Vector, MIN_EIGENVALUE};
use crate::rng::stream;

/// Default bound on `A^S` for exact policy enumeration.
pub const DEFAULT_ENUM_CAP: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{policies} policies exceed the enumeration cap {cap}{hint}")]
    CapExceeded { policies: f64, cap: u64, hint: &'static str },
    #[error("state {state} has no observed action to choose from")]
    NoFeasibleAction { state: usize },
    #[error("degenerate estimate: theta_hat is zero")]
    Degenerate,
    #[error("{0}")]
    Unsupported(String),
}

/// Design covariance `Σ_D` of a fitted model.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Tabular designs: `diag(n(s,a)/n)`. Entries may be zero for unobserved
    /// pairs; those directions carry infinite penalty.
    Diagonal {
        weights: Vec<f64>,
    },
    Dense {
        sigma: Matrix,
        sqrt: Matrix,
        inv_sqrt: Matrix,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub theta_hat: Vector,
    pub covariance: Covariance,
    pub n: u64,
    pub d: usize,
    pub ridge: f64,
}

impl FittedModel {
    /// `Σ_D` itself, without the ridge.
    pub fn sigma_d(&self) -> Matrix {
        match &self.covariance {
            Covariance::Diagonal { weights } => Matrix::from_diagonal(&Vector::from_column_slice(weights)),
            Covariance::Dense { sigma, .. } => sigma.clone(),
        }
    }

    /// `(Σ_D + λI)^{−1/2} v`, or `None` when `v` has mass on an unobserved
    /// direction of a diagonal design.
    pub fn whiten(&self, v: &Vector) -> Option<Vector> {
        match &self.covariance {
            Covariance::Diagonal { weights } => {
                let mut out = Vector::zeros(v.len());
                for (i, (&x, &w)) in v.iter().zip(weights).enumerate() {
                    if x == 0.0 {
                        continue;
                    }
                    let w = w + self.ridge;
                    if w <= 0.0 {
                        return None;
                    }
                    out[i] = x / w.sqrt();
                }
                Some(out)
            }
            Covariance::Dense { inv_sqrt, .. } => Some(inv_sqrt * v),
        }
    }

    /// `(Σ_D + λI)^{1/2} v`.
    pub fn color(&self, v: &Vector) -> Vector {
        match &self.covariance {
            Covariance::Diagonal { weights } => {
                Vector::from_iterator(v.len(), v.iter().zip(weights).map(|(&x, &w)| x * (w + self.ridge).sqrt()))
            }
            Covariance::Dense { sqrt, .. } => sqrt * v,
        }
    }

    /// Diagonal weight of coordinate `i` including the ridge (diagonal designs only).
    fn weight(&self, i: usize) -> Option<f64> {
        match &self.covariance {
            Covariance::Diagonal { weights } => Some(weights[i] + self.ridge),
            Covariance::Dense { .. } => None,
        }
    }

    /// `‖Σ_D^{−1/2} e_i‖₂`.
    fn basis_penalty(&self, i: usize) -> f64 {
        match &self.covariance {
            Covariance::Diagonal { weights } => {
                let w = weights[i] + self.ridge;
                if w > 0.0 {
                    1.0 / w.sqrt()
                } else {
                    f64::INFINITY
                }
            }
            Covariance::Dense { inv_sqrt, .. } => inv_sqrt.column(i).norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceSpec {
    pub p: Exponent,
    /// Full width; the set radius is `beta / 2`.
    pub beta: f64,
}

impl ConfidenceSpec {
    pub fn new(p: Exponent, beta: f64) -> Self {
        ConfidenceSpec { p, beta }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    FiniteMap(Vec<usize>),
    UnitVector(Vector),
}

impl Policy {
    pub fn actions(&self) -> Option<&[usize]> {
        match self {
            Policy::FiniteMap(a) => Some(a),
            Policy::UnitVector(_) => None,
        }
    }

    pub fn direction(&self) -> Option<&Vector> {
        match self {
            Policy::UnitVector(v) => Some(v),
            Policy::FiniteMap(_) => None,
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Policy::FiniteMap(a) => {
                let parts: Vec<String> = a.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(", "))
            }
            Policy::UnitVector(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
                write!(f, "({})", parts.join(", "))
            }
        }
    }
}

/// Least-squares fit with optional ridge `λ`: `θ̂ = (ΦᵀΦ + nλI)^{−1}Φᵀr`.
pub fn ols_fit(dataset: &Dataset, ridge: f64) -> Result<FittedModel, EstimatorError> {
    match dataset {
        Dataset::Explicit { features, rewards } => {
            let n = features.nrows();
            if n == 0 {
                return Err(EstimatorError::EmptyDataset);
            }
            let d = features.ncols();
            let nf = n as f64;
            let sigma = symmetrize(&(features.tr_mul(features) / nf));
            let moment = features.tr_mul(rewards) / nf;
            let theta_hat = solve_spd(&sigma, ridge, &moment)?;
            dense_model(sigma, theta_hat, n as u64, d, ridge)
        }
        Dataset::LinearStats { sigma_d, theta_hat, n } => {
            if *n == 0 {
                return Err(EstimatorError::EmptyDataset);
            }
            dense_model(symmetrize(sigma_d), theta_hat.clone(), *n, theta_hat.len(), ridge)
        }
        Dataset::TabularStats(stats) => tabular_model(stats, ridge),
    }
}

fn solve_spd(sigma: &Matrix, ridge: f64, rhs: &Vector) -> Result<Vector, EstimatorError> {
    let d = sigma.nrows();
    let reg = sigma + Matrix::identity(d, d) * ridge;
    match reg.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => {
            let min = reg.symmetric_eigenvalues().min();
            Err(LinalgError::Singular { min_eigenvalue: min.min(MIN_EIGENVALUE * 0.5) }.into())
        }
    }
}

fn dense_model(sigma: Matrix, theta_hat: Vector, n: u64, d: usize, ridge: f64) -> Result<FittedModel, EstimatorError> {
    let (sqrt, inv_sqrt) = sqrt_and_inv_sqrt(&sigma, ridge)?;
    Ok(FittedModel { theta_hat, covariance: Covariance::Dense { sigma, sqrt, inv_sqrt }, n, d, ridge })
}

fn tabular_model(stats: &TabularStats, ridge: f64) -> Result<FittedModel, EstimatorError> {
    if stats.n == 0 {
        return Err(EstimatorError::EmptyDataset);
    }
    let nf = stats.n as f64;
    let weights: Vec<f64> = stats.counts.iter().flatten().map(|&c| c as f64 / nf).collect();
    let d = weights.len();
    let theta_hat = Vector::from_iterator(d, stats.means.iter().flatten().map(|m| m.unwrap_or(0.0)));
    Ok(FittedModel { theta_hat, covariance: Covariance::Diagonal { weights }, n: stats.n, d, ridge })
}

/// `β = d^{1/p} √(8 log(d/δ)/n)`.
pub fn beta_width(p: Exponent, d: usize, n: u64, delta: f64) -> f64 {
    let d = d as f64;
    d.powf(p.reciprocal()) * (8.0 * (d / delta).ln() / n as f64).sqrt()
}

/// `β = √(16 S log(SA/δ)/n)` for the tight tabular ℓ2 rule.
pub fn l2_tight_beta(states: usize, actions: usize, n: u64, delta: f64) -> f64 {
    let s = states as f64;
    (16.0 * s * (s * actions as f64 / delta).ln() / n as f64).sqrt()
}

/// Max-only pessimistic value `μᵀθ̂ − (β/2)‖Σ_D^{−1/2}μ‖_q`, `q` dual to `p`.
///
/// Returns `−∞` when `μ` loads an unobserved direction and `β > 0`.
pub fn penalized_value(mu_pi: &Vector, model: &FittedModel, spec: &ConfidenceSpec) -> f64 {
    let linear = mu_pi.dot(&model.theta_hat);
    if spec.beta == 0.0 {
        return linear;
    }
    match model.whiten(mu_pi) {
        Some(w) => linear - 0.5 * spec.beta * lp_norm(w.as_slice(), spec.p.dual()),
        None => f64::NEG_INFINITY,
    }
}

/// `μ_π = E_{s∼ρ}[e_{s,π(s)}]` for a tabular policy.
pub fn tabular_mu(states: usize, actions: usize, rho: &[f64], policy: &[usize]) -> Vector {
    let mut mu = Vector::zeros(states * actions);
    for s in 0..states {
        mu[s * actions + policy[s]] += rho[s];
    }
    mu
}

fn check_cap(actions: usize, active: usize, cap: u64, hint: &'static str) -> Result<(), EstimatorError> {
    let count = (actions as f64).powi(active as i32);
    if count > cap as f64 {
        return Err(EstimatorError::CapExceeded { policies: count, cap, hint });
    }
    Ok(())
}

/// Exact maximizer of `score` over all deterministic policies on the states
/// with `ρ(s) > 0`, visited in lexicographic order; the first strict maximum wins.
fn enumerate_policies(
    states: usize,
    actions: usize,
    rho: &[f64],
    cap: u64,
    hint: &'static str,
    mut score: impl FnMut(&[usize]) -> f64,
) -> Result<Vec<usize>, EstimatorError> {
    let active: Vec<usize> = (0..states).filter(|&s| rho[s] > 0.0).collect();
    check_cap(actions, active.len(), cap, hint)?;
    let mut policy = vec![0usize; states];
    let mut best = policy.clone();
    let mut best_score = f64::NEG_INFINITY;
    loop {
        let v = score(&policy);
        if v > best_score {
            best_score = v;
            best.clone_from(&policy);
        }
        // odometer over active states, last state fastest
        let mut k = active.len();
        loop {
            if k == 0 {
                if best_score == f64::NEG_INFINITY {
                    let state = active.first().copied().unwrap_or(0);
                    return Err(EstimatorError::NoFeasibleAction { state });
                }
                return Ok(best);
            }
            k -= 1;
            let s = active[k];
            policy[s] += 1;
            if policy[s] < actions {
                break;
            }
            policy[s] = 0;
        }
    }
}

/// `π̂_p` on a tabular instance by exhaustive enumeration of `A^S` policies.
pub fn solve_policy_enum(
    instance: &TabularInstance,
    model: &FittedModel,
    spec: &ConfidenceSpec,
    cap: u64,
) -> Result<Policy, EstimatorError> {
    let (states, actions, rho) = (instance.states, instance.actions, &instance.rho);
    let hint = if spec.p.is_infinite() { "; use lcb_tabular for p = inf" } else { "" };
    let q = spec.p.dual();
    let half = 0.5 * spec.beta;
    let policy = if model.weight(0).is_some() {
        let mut entries = vec![0.0; states];
        enumerate_policies(states, actions, rho, cap, hint, |pi| {
            let mut linear = 0.0;
            for s in 0..states {
                let i = s * actions + pi[s];
                linear += rho[s] * model.theta_hat[i];
                entries[s] = if rho[s] > 0.0 {
                    let w = model.weight(i).unwrap_or(0.0);
                    if w > 0.0 {
                        rho[s] / w.sqrt()
                    } else {
                        f64::INFINITY
                    }
                } else {
                    0.0
                };
            }
            if half == 0.0 {
                linear
            } else if entries.iter().any(|e| e.is_infinite()) {
                f64::NEG_INFINITY
            } else {
                linear - half * lp_norm(&entries, q)
            }
        })?
    } else {
        enumerate_policies(states, actions, rho, cap, hint, |pi| {
            penalized_value(&tabular_mu(states, actions, rho, pi), model, spec)
        })?
    };
    Ok(Policy::FiniteMap(policy))
}

/// Per-state argmax of `score(s, a)`; ties resolve to the smallest index and
/// states with `ρ(s) = 0` get action 0.
fn per_state_argmax(
    states: usize,
    actions: usize,
    rho: &[f64],
    score: impl Fn(usize, usize) -> f64,
) -> Result<Policy, EstimatorError> {
    let mut policy = vec![0usize; states];
    for s in 0..states {
        if rho[s] <= 0.0 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        let mut found = false;
        for a in 0..actions {
            let v = score(s, a);
            if v > best {
                best = v;
                policy[s] = a;
                found = true;
            }
        }
        if !found {
            return Err(EstimatorError::NoFeasibleAction { state: s });
        }
    }
    Ok(Policy::FiniteMap(policy))
}

fn shape_of(model: &FittedModel, rho: &[f64]) -> Result<(usize, usize), EstimatorError> {
    let states = rho.len();
    if states == 0 || !model.d.is_multiple_of(states) {
        return Err(EstimatorError::Unsupported(format!("dimension {} is not S x A for S = {states}", model.d)));
    }
    Ok((states, model.d / states))
}

/// Tabular LCB: `argmax_a r̂(s,a) − (β/2)·√(n/n(s,a))` per state.
pub fn lcb_tabular(model: &FittedModel, beta: f64, rho: &[f64]) -> Result<Policy, EstimatorError> {
    let (states, actions) = shape_of(model, rho)?;
    if model.weight(0).is_none() {
        return Err(EstimatorError::Unsupported("lcb_tabular needs a tabular fit".into()));
    }
    let half = 0.5 * beta;
    per_state_argmax(states, actions, rho, |s, a| {
        let i = s * actions + a;
        if half == 0.0 {
            return model.theta_hat[i];
        }
        let w = model.weight(i).unwrap_or(0.0);
        if w > 0.0 {
            model.theta_hat[i] - half / w.sqrt()
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// PEVI: `argmax_a φ(s,a)ᵀθ̂ − β‖Σ_D^{−1/2}φ(s,a)‖₂` per state.
pub fn pevi_policy(model: &FittedModel, beta: f64, instance: &TabularInstance) -> Result<Policy, EstimatorError> {
    let actions = instance.actions;
    per_state_argmax(instance.states, actions, &instance.rho, |s, a| {
        let i = s * actions + a;
        if beta == 0.0 {
            return model.theta_hat[i];
        }
        let pen = model.basis_penalty(i);
        if pen.is_finite() {
            model.theta_hat[i] - beta * pen
        } else {
            f64::NEG_INFINITY
        }
    })
}

/// Plug-in rule on a tabular instance: per-state argmax of `θ̂`.
pub fn plugin_policy_tabular(model: &FittedModel, instance: &TabularInstance) -> Result<Policy, EstimatorError> {
    let actions = instance.actions;
    per_state_argmax(instance.states, actions, &instance.rho, |s, a| model.theta_hat[s * actions + a])
}

/// Plug-in rule on the unit ball: `θ̂/‖θ̂‖₂`.
pub fn plugin_policy_ball(model: &FittedModel) -> Result<Policy, EstimatorError> {
    let norm = model.theta_hat.norm();
    if norm == 0.0 {
        return Err(EstimatorError::Degenerate);
    }
    Ok(Policy::UnitVector(&model.theta_hat / norm))
}

/// Tight tabular ℓ2 rule with `β = √(16 S log(SA/δ)/n)`.
pub fn l2_tight_tabular(stats: &TabularStats, rho: &[f64], delta: f64, cap: u64) -> Result<Policy, EstimatorError> {
    let model = tabular_model(stats, 0.0)?;
    let (states, actions) = (stats.states(), stats.actions());
    let beta = l2_tight_beta(states, actions, stats.n, delta);
    let shell = TabularInstance {
        states,
        actions,
        design: crate::instances::TabularDesign::Fixed { counts: stats.counts.clone() },
        rewards: Vec::new(),
        rho: rho.to_vec(),
    };
    solve_policy_enum(&shell, &model, &ConfidenceSpec::new(Exponent::TWO, beta), cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallSolverOptions {
    pub restarts: usize,
    pub iterations: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for BallSolverOptions {
    fn default() -> Self {
        BallSolverOptions { restarts: 4, iterations: 500, step: 0.1, tolerance: 1e-10 }
    }
}

/// `f(π) = πᵀθ̂ − (β/2)‖Σ_D^{−1/2}π‖_q` on the unit sphere.
pub fn ball_objective(pi: &Vector, model: &FittedModel, spec: &ConfidenceSpec) -> f64 {
    penalized_value(pi, model, spec)
}

/// Subgradient of `‖y‖_q` (with `sign(0) = 0`).
fn norm_subgradient(y: &Vector, q: Exponent) -> Vector {
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    match q {
        Exponent::Infinity => {
            let mut g = Vector::zeros(y.len());
            if let Some((i, _)) = y.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())) {
                g[i] = sign(y[i]);
            }
            g
        }
        Exponent::Finite(1.0) => y.map(sign),
        Exponent::Finite(q) => {
            let norm = lp_norm(y.as_slice(), Exponent::Finite(q));
            if norm == 0.0 {
                return Vector::zeros(y.len());
            }
            y.map(|x| sign(x) * (x.abs() / norm).powf(q - 1.0))
        }
    }
}

/// Projected subgradient ascent of [`ball_objective`] over the unit sphere.
///
/// Starts from the `θ̂` direction and `restarts − 1` seeded random unit
/// vectors; each run takes steps `step/√t` and keeps its best iterate.
pub fn solve_policy_ball(
    model: &FittedModel,
    spec: &ConfidenceSpec,
    options: &BallSolverOptions,
    seed: u64,
) -> Result<Policy, EstimatorError> {
    let d = model.d;
    let Covariance::Dense { inv_sqrt, .. } = &model.covariance else {
        return Err(EstimatorError::Unsupported("ball solver needs a dense design covariance".into()));
    };
    if options.restarts == 0 {
        return Err(EstimatorError::Unsupported("restarts must be >= 1".into()));
    }
    let theta_norm = model.theta_hat.norm();
    if theta_norm == 0.0 {
        return Err(EstimatorError::Degenerate);
    }
    let q = spec.p.dual();
    let half = 0.5 * spec.beta;
    let objective = |pi: &Vector| pi.dot(&model.theta_hat) - half * lp_norm((inv_sqrt * pi).as_slice(), q);

    let mut rng = stream(seed);
    let mut best = &model.theta_hat / theta_norm;
    let mut best_value = objective(&best);
    for r in 0..options.restarts {
        let mut x = if r == 0 {
            &model.theta_hat / theta_norm
        } else {
            let g = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let n = g.norm();
            g / n
        };
        let mut prev = objective(&x);
        if prev > best_value {
            best_value = prev;
            best.clone_from(&x);
        }
        if half == 0.0 {
            continue;
        }
        for t in 1..=options.iterations {
            let y = inv_sqrt * &x;
            let grad = &model.theta_hat - inv_sqrt.tr_mul(&norm_subgradient(&y, q)) * half;
            let step = options.step / (t as f64).sqrt();
            let moved = &x + grad * step;
            let norm = moved.norm();
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
            x = moved / norm;
            let value = objective(&x);
            if value > best_value {
                best_value = value;
                best.clone_from(&x);
            }
            if (value - prev).abs() < options.tolerance {
                break;
            }
            prev = value;
        }
    }
    Ok(Policy::UnitVector(best))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub member: bool,
    /// Realized `‖Σ_D^{1/2}(θ − θ̂)‖_p`.
    pub radius: f64,
}

/// Whether `θ ∈ Θ_p`, with the realized radius.
pub fn confidence_membership(theta: &Vector, model: &FittedModel, spec: &ConfidenceSpec) -> Membership {
    let radius = lp_norm(model.color(&(theta - &model.theta_hat)).as_slice(), spec.p);
    Membership { member: radius <= 0.5 * spec.beta, radius }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{RewardModel, TabularDesign};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn stats(counts: Vec<Vec<u64>>, means: Vec<Vec<f64>>) -> TabularStats {
        let n = counts.iter().flatten().sum();
        let means = counts
            .iter()
            .zip(means)
            .map(|(c, m)| c.iter().zip(m).map(|(&c, m)| (c > 0).then_some(m)).collect())
            .collect();
        TabularStats { counts, means, n }
    }

    fn shell(counts: &[Vec<u64>], rho: Vec<f64>) -> TabularInstance {
        TabularInstance {
            states: counts.len(),
            actions: counts[0].len(),
            design: TabularDesign::Fixed { counts: counts.to_vec() },
            rewards: vec![vec![RewardModel::Constant { mean: 0.0 }; counts[0].len()]; counts.len()],
            rho,
        }
    }

    fn two_arm_example() -> (TabularInstance, FittedModel) {
        let counts = vec![vec![4, 100]];
        let st = stats(counts.clone(), vec![vec![0.7, 0.4]]);
        (shell(&counts, vec![1.0]), ols_fit(&Dataset::TabularStats(st), 0.0).unwrap())
    }

    #[test]
    fn identity_design_fit() {
        let d = 4;
        let v = Vector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let ds = Dataset::Explicit { features: Matrix::identity(d, d), rewards: v.clone() };
        let m = ols_fit(&ds, 0.0).unwrap();
        assert_abs_diff_eq!(m.theta_hat, v, epsilon = 1e-12);
        assert_abs_diff_eq!(m.sigma_d(), Matrix::identity(d, d) / d as f64, epsilon = 1e-15);
    }

    #[test]
    fn tabular_fit_covariance() {
        let m = ols_fit(&Dataset::TabularStats(stats(vec![vec![4, 12]], vec![vec![1.0, 2.0]])), 0.0).unwrap();
        assert_eq!(m.sigma_d(), Matrix::from_diagonal(&Vector::from_vec(vec![0.25, 0.75])));
    }

    #[test]
    fn noiseless_interpolation() {
        let mut rng = stream(11);
        let phi = Matrix::from_fn(20, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
        let theta = Vector::from_vec(vec![0.3, -1.0, 2.0, 0.1]);
        let ds = Dataset::Explicit { rewards: &phi * &theta, features: phi };
        let m = ols_fit(&ds, 0.0).unwrap();
        assert_abs_diff_eq!(m.theta_hat, theta, epsilon = 1e-8);
    }

    #[test]
    fn singular_design_is_rejected() {
        let phi = Matrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let ds = Dataset::Explicit { rewards: Vector::zeros(3), features: phi };
        assert!(matches!(ols_fit(&ds, 0.0), Err(EstimatorError::Linalg(LinalgError::Singular { .. }))));
        assert!(ols_fit(&ds, 1e-3).is_ok());
    }

    #[test]
    fn beta_width_values() {
        assert_abs_diff_eq!(beta_width(Exponent::Infinity, 16, 1000, 0.05), 0.2148175, epsilon = 1e-7);
        assert_abs_diff_eq!(beta_width(Exponent::TWO, 4, 800, 0.1), 0.3841291, epsilon = 1e-7);
        let inf = beta_width(Exponent::Infinity, 7, 300, 0.2);
        assert_abs_diff_eq!(beta_width(Exponent::ONE, 7, 300, 0.2), 7.0 * inf, epsilon = 1e-12);
        assert_abs_diff_eq!(l2_tight_beta(2, 2, 100, 0.1), 1.0864812, epsilon = 1e-7);
    }

    #[test]
    fn penalized_value_limits() {
        let (_, m) = two_arm_example();
        let mu = Vector::from_vec(vec![0.0, 1.0]);
        assert_eq!(penalized_value(&mu, &m, &ConfidenceSpec::new(Exponent::TWO, 0.0)), 0.4);
        let ident = FittedModel {
            theta_hat: Vector::from_vec(vec![0.2, 0.9]),
            covariance: Covariance::Diagonal { weights: vec![1.0, 1.0] },
            n: 10,
            d: 2,
            ridge: 0.0,
        };
        let u = Vector::from_vec(vec![0.6, 0.8]);
        let v = penalized_value(&u, &ident, &ConfidenceSpec::new(Exponent::TWO, 0.3));
        assert_abs_diff_eq!(v, 0.12 + 0.72 - 0.15, epsilon = 1e-15);
    }

    #[test]
    fn two_arm_worked_example() {
        let (inst, m) = two_arm_example();
        let spec = ConfidenceSpec::new(Exponent::Infinity, 0.2);
        assert_eq!(solve_policy_enum(&inst, &m, &spec, DEFAULT_ENUM_CAP).unwrap(), Policy::FiniteMap(vec![1]));
        assert_eq!(lcb_tabular(&m, 0.2, &[1.0]).unwrap(), Policy::FiniteMap(vec![1]));
        assert_eq!(pevi_policy(&m, 0.1, &inst).unwrap(), Policy::FiniteMap(vec![1]));
        assert_eq!(plugin_policy_tabular(&m, &inst).unwrap(), Policy::FiniteMap(vec![0]));
        let a1 = penalized_value(&Vector::from_vec(vec![1.0, 0.0]), &m, &spec);
        let a2 = penalized_value(&Vector::from_vec(vec![0.0, 1.0]), &m, &spec);
        assert_abs_diff_eq!(a1, 0.7 - 0.1 * 26f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(a2, 0.4 - 0.1 * 1.04f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn huge_beta_picks_most_sampled() {
        let counts = vec![vec![5, 30, 10], vec![40, 2, 3]];
        let st = stats(counts.clone(), vec![vec![0.9, 0.1, 0.5], vec![-1.0, 3.0, 2.0]]);
        let m = ols_fit(&Dataset::TabularStats(st), 0.0).unwrap();
        assert_eq!(lcb_tabular(&m, 1e6, &[0.5, 0.5]).unwrap(), Policy::FiniteMap(vec![1, 0]));
    }

    #[test]
    fn equal_counts_reduce_to_plugin() {
        let counts = vec![vec![10, 10], vec![10, 10], vec![10, 10]];
        let st = stats(counts.clone(), vec![vec![0.1, 0.2], vec![0.5, -0.5], vec![0.0, 0.3]]);
        let inst = shell(&counts, vec![1.0 / 3.0; 3]);
        let m = ols_fit(&Dataset::TabularStats(st.clone()), 0.0).unwrap();
        let plug = plugin_policy_tabular(&m, &inst).unwrap();
        assert_eq!(plug, Policy::FiniteMap(vec![1, 0, 1]));
        assert_eq!(lcb_tabular(&m, 0.7, &inst.rho).unwrap(), plug);
        assert_eq!(pevi_policy(&m, 0.7, &inst).unwrap(), plug);
        assert_eq!(l2_tight_tabular(&st, &inst.rho, 0.1, DEFAULT_ENUM_CAP).unwrap(), plug);
        let zero = ConfidenceSpec::new(Exponent::TWO, 0.0);
        assert_eq!(solve_policy_enum(&inst, &m, &zero, DEFAULT_ENUM_CAP).unwrap(), plug);
    }

    #[test]
    fn zero_rho_states_are_ignored() {
        let counts = vec![vec![10, 0], vec![0, 0]];
        let st = stats(counts.clone(), vec![vec![0.1, 0.0], vec![0.0, 0.0]]);
        let inst = shell(&counts, vec![1.0, 0.0]);
        let m = ols_fit(&Dataset::TabularStats(st), 0.0).unwrap();
        let spec = ConfidenceSpec::new(Exponent::TWO, 0.5);
        assert_eq!(solve_policy_enum(&inst, &m, &spec, DEFAULT_ENUM_CAP).unwrap(), Policy::FiniteMap(vec![0, 0]));
        let blind = shell(&counts, vec![0.5, 0.5]);
        assert!(matches!(lcb_tabular(&m, 0.5, &blind.rho), Err(EstimatorError::NoFeasibleAction { state: 1 })));
    }

    #[test]
    fn enumeration_cap() {
        let counts = vec![vec![1, 1]; 21];
        let st = stats(counts.clone(), vec![vec![0.0, 0.0]; 21]);
        let inst = shell(&counts, vec![1.0 / 21.0; 21]);
        let m = ols_fit(&Dataset::TabularStats(st), 0.0).unwrap();
        let err = solve_policy_enum(&inst, &m, &ConfidenceSpec::new(Exponent::Infinity, 0.1), DEFAULT_ENUM_CAP);
        match err {
            Err(EstimatorError::CapExceeded { hint, .. }) => assert!(hint.contains("lcb_tabular")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn membership_examples() {
        let ident = FittedModel {
            theta_hat: Vector::from_vec(vec![0.2, 0.9, -0.1]),
            covariance: Covariance::Diagonal { weights: vec![1.0; 3] },
            n: 3,
            d: 3,
            ridge: 0.0,
        };
        let beta = 0.4;
        let m = confidence_membership(&ident.theta_hat, &ident, &ConfidenceSpec::new(Exponent::TWO, beta));
        assert!(m.member);
        assert_eq!(m.radius, 0.0);
        let edge = &ident.theta_hat + Vector::from_vec(vec![beta / 2.0, 0.0, 0.0]);
        let m = confidence_membership(&edge, &ident, &ConfidenceSpec::new(Exponent::TWO, beta));
        assert!(m.member);
        assert_abs_diff_eq!(m.radius, beta / 2.0, epsilon = 1e-15);
        let far = ident.theta_hat.add_scalar(beta);
        let m = confidence_membership(&far, &ident, &ConfidenceSpec::new(Exponent::Infinity, beta));
        assert!(!m.member);
        assert_abs_diff_eq!(m.radius, beta, epsilon = 1e-15);
    }

    fn dense_from(sigma: Matrix, theta: Vector) -> FittedModel {
        let d = theta.len();
        ols_fit(&Dataset::LinearStats { sigma_d: sigma, theta_hat: theta, n: 100 }, 0.0)
            .map(|mut m| {
                m.d = d;
                m
            })
            .unwrap()
    }

    #[test]
    fn ball_identity_covariance_returns_direction() {
        let theta = Vector::from_vec(vec![0.3, -0.4, 1.2]);
        let m = dense_from(Matrix::identity(3, 3), theta.clone());
        let pi =
            solve_policy_ball(&m, &ConfidenceSpec::new(Exponent::TWO, 0.5), &BallSolverOptions::default(), 1).unwrap();
        let dir = pi.direction().unwrap();
        assert!((dir - &theta / theta.norm()).norm() < 1e-6);
        assert_eq!(
            plugin_policy_ball(&dense_from(Matrix::identity(3, 3), Vector::from_vec(vec![3.0, 4.0, 0.0]))).unwrap(),
            Policy::UnitVector(Vector::from_vec(vec![0.6, 0.8, 0.0]))
        );
    }

    #[test]
    fn ball_zero_estimate_is_degenerate() {
        let m = dense_from(Matrix::identity(2, 2), Vector::zeros(2));
        assert_eq!(
            solve_policy_ball(&m, &ConfidenceSpec::new(Exponent::TWO, 0.5), &BallSolverOptions::default(), 0),
            Err(EstimatorError::Degenerate)
        );
    }

    proptest! {
        #[test]
        fn widths_are_monotone(p in 1.0f64..50.0, d in 1usize..200, n in 1u64..100_000, delta in 0.001f64..0.5) {
            let inf = beta_width(Exponent::Infinity, d, n, delta);
            let mid = beta_width(Exponent::Finite(p), d, n, delta);
            let one = beta_width(Exponent::ONE, d, n, delta);
            prop_assert!(inf <= mid * (1.0 + 1e-12));
            prop_assert!(mid <= one * (1.0 + 1e-12));
            prop_assert!((one - d as f64 * inf).abs() <= 1e-12 * one);
        }

        #[test]
        fn enumeration_is_deterministic(seed in 0u64..1000) {
            let mut rng = stream(seed);
            let counts: Vec<Vec<u64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(1..20)).collect()).collect();
            let means: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
            let inst = shell(&counts, vec![0.2, 0.3, 0.5]);
            let m = ols_fit(&Dataset::TabularStats(stats(counts, means)), 0.0).unwrap();
            let spec = ConfidenceSpec::new(Exponent::Finite(1.5), 0.3);
            prop_assert_eq!(
                solve_policy_enum(&inst, &m, &spec, DEFAULT_ENUM_CAP).unwrap(),
                solve_policy_enum(&inst, &m, &spec, DEFAULT_ENUM_CAP).unwrap()
            );
        }

        #[test]
        fn pevi_is_lcb_at_double_width(seed in 0u64..1000, beta in 0.01f64..2.0) {
            let mut rng = stream(seed);
            let counts: Vec<Vec<u64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(1..50)).collect()).collect();
            let means: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
            let inst = shell(&counts, vec![0.25; 4]);
            let m = ols_fit(&Dataset::TabularStats(stats(counts, means)), 0.0).unwrap();
            prop_assert_eq!(pevi_policy(&m, beta, &inst).unwrap(), lcb_tabular(&m, 2.0 * beta, &inst.rho).unwrap());
        }
    }
}
