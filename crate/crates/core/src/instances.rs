//! Offline contextual-bandit instances, their sampled datasets, and the
//! generators for every hard-instance construction used by the harness.
//!
//! Two instance families exist:
//!
//! * **Tabular**: canonical-basis features `φ(s,a) = e_{sa}` (so `d = S·A`,
//!   coordinate `s·A + a`), either with fixed per-pair counts or with a
//!   behavior distribution from which counts are drawn at sampling time.
//! * **Ball**: a single state whose action set is the unit ℓ2 ball, with a
//!   fixed Gaussian design regenerated from `(d, rotate, design_seed, n)`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::Deserialize;
use thiserror::Error;

use crate::linalg::{lp_norm, sym_matrix_power, Exponent, LinalgError, Matrix, MatrixPower, Vector};
use crate::rng::{derive_seed, stream, Stream};

const RHO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invariant `{invariant}` violated: {detail}")]
    Invariant { invariant: String, detail: String },
    #[error("instance file parse error at line {line}, column {column}: {message}")]
    Parse { message: String, line: usize, column: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn invariant(name: impl Into<String>, detail: impl Into<String>) -> InstanceError {
    InstanceError::Invariant { invariant: name.into(), detail: detail.into() }
}

fn precondition(msg: impl Into<String>) -> InstanceError {
    InstanceError::Precondition(msg.into())
}

/// Reward distribution of one state-action pair. Gaussian noise has unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardModel {
    Gaussian { mean: f64 },
    Bernoulli { mean: f64 },
    Constant { mean: f64 },
}

impl RewardModel {
    pub fn mean(&self) -> f64 {
        match *self {
            RewardModel::Gaussian { mean } | RewardModel::Bernoulli { mean } | RewardModel::Constant { mean } => mean,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            RewardModel::Gaussian { .. } => "gaussian",
            RewardModel::Bernoulli { .. } => "bernoulli",
            RewardModel::Constant { .. } => "constant",
        }
    }

    fn validate(&self, at: &str) -> Result<(), InstanceError> {
        let m = self.mean();
        if !m.is_finite() {
            return Err(invariant(format!("rewards{at}"), "mean must be finite"));
        }
        if let RewardModel::Bernoulli { mean } = self {
            if !(0.0..=1.0).contains(mean) {
                return Err(invariant(format!("rewards{at}"), format!("Bernoulli mean {mean} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Exact draw of the empirical mean of `count` independent rewards.
    fn sample_mean(&self, count: u64, rng: &mut Stream) -> f64 {
        debug_assert!(count > 0);
        match *self {
            RewardModel::Constant { mean } => mean,
            RewardModel::Gaussian { mean } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + z / (count as f64).sqrt()
            }
            RewardModel::Bernoulli { mean } => {
                let successes = Binomial::new(count, mean).expect("validated Bernoulli mean").sample(rng);
                successes as f64 / count as f64
            }
        }
    }
}

/// How the covariates of a tabular instance are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum TabularDesign {
    /// Fixed design: exact per-pair counts; the sample size is their sum.
    Fixed { counts: Vec<Vec<u64>> },
    /// Random design: `n` pairs drawn i.i.d. from `behavior` at sampling time.
    Random { behavior: Vec<Vec<f64>>, n: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularInstance {
    pub states: usize,
    pub actions: usize,
    pub design: TabularDesign,
    pub rewards: Vec<Vec<RewardModel>>,
    pub rho: Vec<f64>,
}

impl TabularInstance {
    pub fn dim(&self) -> usize {
        self.states * self.actions
    }

    pub fn index(&self, state: usize, action: usize) -> usize {
        state * self.actions + action
    }

    /// Sample size of one dataset.
    pub fn n(&self) -> u64 {
        match &self.design {
            TabularDesign::Fixed { counts } => counts.iter().flatten().sum(),
            TabularDesign::Random { n, .. } => *n,
        }
    }

    /// `θ★`: true mean rewards laid out on the canonical basis.
    pub fn theta_star(&self) -> Vector {
        Vector::from_iterator(self.dim(), self.rewards.iter().flatten().map(RewardModel::mean))
    }

    pub fn mean(&self, state: usize, action: usize) -> f64 {
        self.rewards[state][action].mean()
    }

    /// Per-state optimal action; ties resolve to the smallest index.
    pub fn optimal_actions(&self) -> Vec<usize> {
        self.rewards
            .iter()
            .map(|row| {
                let mut best = 0;
                for (a, m) in row.iter().enumerate() {
                    if m.mean() > row[best].mean() {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Diagonal of the design covariance: `n(s,a)/n` for fixed designs,
    /// `μ(s,a)` for random designs.
    pub fn coverage(&self) -> Vec<Vec<f64>> {
        match &self.design {
            TabularDesign::Fixed { counts } => {
                let n = self.n().max(1) as f64;
                counts.iter().map(|row| row.iter().map(|&c| c as f64 / n).collect()).collect()
            }
            TabularDesign::Random { behavior, .. } => behavior.clone(),
        }
    }

    fn validate(&self) -> Result<(), InstanceError> {
        if self.states == 0 || self.actions == 0 {
            return Err(invariant("shape", "S and A must be positive"));
        }
        if self.rho.len() != self.states {
            return Err(invariant("rho", format!("length {} but S = {}", self.rho.len(), self.states)));
        }
        if self.rho.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(invariant("rho", "entries must be finite and nonnegative"));
        }
        let total: f64 = self.rho.iter().sum();
        if (total - 1.0).abs() > RHO_TOLERANCE {
            return Err(invariant("rho", format!("sums to {total}, expected 1")));
        }
        if self.rewards.len() != self.states || self.rewards.iter().any(|r| r.len() != self.actions) {
            return Err(invariant("rewards", "must be an S x A table"));
        }
        for (s, row) in self.rewards.iter().enumerate() {
            for (a, m) in row.iter().enumerate() {
                m.validate(&format!("[{s}][{a}]"))?;
            }
        }
        match &self.design {
            TabularDesign::Fixed { counts } => {
                if counts.len() != self.states || counts.iter().any(|r| r.len() != self.actions) {
                    return Err(invariant("counts", "must be an S x A table"));
                }
                if self.n() == 0 {
                    return Err(invariant("counts", "total count must be positive"));
                }
            }
            TabularDesign::Random { behavior, n } => {
                if behavior.len() != self.states || behavior.iter().any(|r| r.len() != self.actions) {
                    return Err(invariant("behavior", "must be an S x A table"));
                }
                if behavior.iter().flatten().any(|m| !m.is_finite() || *m < 0.0) {
                    return Err(invariant("behavior", "entries must be finite and nonnegative"));
                }
                let total: f64 = behavior.iter().flatten().sum();
                if (total - 1.0).abs() > RHO_TOLERANCE {
                    return Err(invariant("behavior", format!("sums to {total}, expected 1")));
                }
                if *n == 0 {
                    return Err(invariant("n", "sample size must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Single-state instance with the unit ℓ2 ball as action set.
#[derive(Debug, Clone, PartialEq)]
pub struct BallInstance {
    pub d: usize,
    pub n: u64,
    pub design_seed: u64,
    pub rotate: bool,
    pub theta_star: Vector,
    /// Population covariance the design rows are drawn from.
    pub covariance: Matrix,
    /// `n × d` fixed design.
    pub design: Matrix,
}

impl BallInstance {
    fn validate(&self) -> Result<(), InstanceError> {
        if self.theta_star.len() != self.d {
            return Err(invariant("theta_star", format!("length {} but d = {}", self.theta_star.len(), self.d)));
        }
        if self.theta_star.iter().any(|x| !x.is_finite()) {
            return Err(invariant("theta_star", "entries must be finite"));
        }
        if self.design.nrows() as u64 != self.n || self.design.ncols() != self.d {
            return Err(invariant("design", "design shape must be n x d"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CbInstance {
    Tabular(TabularInstance),
    Ball(BallInstance),
}

impl CbInstance {
    pub fn dim(&self) -> usize {
        match self {
            CbInstance::Tabular(t) => t.dim(),
            CbInstance::Ball(b) => b.d,
        }
    }

    pub fn n(&self) -> u64 {
        match self {
            CbInstance::Tabular(t) => t.n(),
            CbInstance::Ball(b) => b.n,
        }
    }

    pub fn theta_star(&self) -> Vector {
        match self {
            CbInstance::Tabular(t) => t.theta_star(),
            CbInstance::Ball(b) => b.theta_star.clone(),
        }
    }

    pub fn as_tabular(&self) -> Option<&TabularInstance> {
        match self {
            CbInstance::Tabular(t) => Some(t),
            CbInstance::Ball(_) => None,
        }
    }

    pub fn as_ball(&self) -> Option<&BallInstance> {
        match self {
            CbInstance::Ball(b) => Some(b),
            CbInstance::Tabular(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        match self {
            CbInstance::Tabular(t) => t.validate(),
            CbInstance::Ball(b) => b.validate(),
        }
    }
}

// ── Datasets ──────────────────────────────────────────────────────────

/// Sufficient statistics of a tabular dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularStats {
    pub counts: Vec<Vec<u64>>,
    /// Empirical mean reward; `None` where the pair was never observed.
    pub means: Vec<Vec<Option<f64>>>,
    pub n: u64,
}

impl TabularStats {
    pub fn states(&self) -> usize {
        self.counts.len()
    }

    pub fn actions(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Feature rows `Φ` and rewards `r`.
    Explicit {
        features: Matrix,
        rewards: Vector,
    },
    TabularStats(TabularStats),
    /// Exact OLS draw for a Gaussian linear model: `Σ_D` and `θ̂`.
    LinearStats {
        sigma_d: Matrix,
        theta_hat: Vector,
        n: u64,
    },
}

impl Dataset {
    pub fn n(&self) -> u64 {
        match self {
            Dataset::Explicit { features, .. } => features.nrows() as u64,
            Dataset::TabularStats(s) => s.n,
            Dataset::LinearStats { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleOptions {
    /// Draw `θ̂ = θ★ + n^{-1/2} Σ_D^{-1/2} z` directly for ball instances.
    pub ball_shortcut: bool,
}

/// One reward realization on the instance's design, deterministic in `seed`.
pub fn sample_dataset(instance: &CbInstance, seed: u64) -> Result<Dataset, InstanceError> {
    sample_dataset_with(instance, seed, SampleOptions::default())
}

pub fn sample_dataset_with(instance: &CbInstance, seed: u64, options: SampleOptions) -> Result<Dataset, InstanceError> {
    let mut rng = stream(seed);
    match instance {
        CbInstance::Tabular(t) => Ok(Dataset::TabularStats(sample_tabular(t, &mut rng))),
        CbInstance::Ball(b) if options.ball_shortcut => {
            let n = b.n as f64;
            let sigma_d = b.design.tr_mul(&b.design) / n;
            let inv_sqrt = sym_matrix_power(&sigma_d, MatrixPower::InvSqrt, 0.0)?;
            let z = Vector::from_fn(b.d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let theta_hat = &b.theta_star + inv_sqrt * z / n.sqrt();
            Ok(Dataset::LinearStats { sigma_d, theta_hat, n: b.n })
        }
        CbInstance::Ball(b) => {
            let mut rewards = &b.design * &b.theta_star;
            for r in rewards.iter_mut() {
                *r += rng.sample::<f64, _>(StandardNormal);
            }
            Ok(Dataset::Explicit { features: b.design.clone(), rewards })
        }
    }
}

fn sample_tabular(t: &TabularInstance, rng: &mut Stream) -> TabularStats {
    let counts = match &t.design {
        TabularDesign::Fixed { counts } => counts.clone(),
        TabularDesign::Random { behavior, n } => sample_multinomial(behavior, *n, t.actions, rng),
    };
    let means = counts
        .iter()
        .zip(&t.rewards)
        .map(|(crow, rrow)| {
            crow.iter().zip(rrow).map(|(&c, model)| (c > 0).then(|| model.sample_mean(c, rng))).collect()
        })
        .collect();
    let n = counts.iter().flatten().sum();
    TabularStats { counts, means, n }
}

/// Multinomial counts via sequential conditional binomials.
fn sample_multinomial(behavior: &[Vec<f64>], n: u64, actions: usize, rng: &mut Stream) -> Vec<Vec<u64>> {
    let flat: Vec<f64> = behavior.iter().flatten().copied().collect();
    let mut out = vec![0u64; flat.len()];
    let mut remaining = n;
    let mut mass: f64 = flat.iter().sum();
    for (i, &w) in flat.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if i + 1 == flat.len() {
            out[i] = remaining;
            break;
        }
        let prob = if mass > 0.0 { (w / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(remaining, prob).expect("probability in [0, 1]").sample(rng);
        out[i] = k;
        remaining -= k;
        mass -= w;
    }
    out.chunks(actions).map(<[u64]>::to_vec).collect()
}

// ── Generators ────────────────────────────────────────────────────────

fn uniform(states: usize) -> Vec<f64> {
    vec![1.0 / states as f64; states]
}

/// Two-action tabular instance where only state 1's decision is hard.
///
/// `n` must be a multiple of `9S³` with `S = ⌊d/2⌋`. State 1 sees its
/// optimal action `n/(9S³)` times; the other states only ever see their
/// optimal action.
pub fn gen_separation_instance(d: usize, n: u64, p: Exponent, k_xi: f64) -> Result<CbInstance, InstanceError> {
    if d < 4 {
        return Err(precondition(format!("separation instance needs d >= 4, got {d}")));
    }
    if !(k_xi > 0.0 && k_xi.is_finite()) {
        return Err(precondition(format!("K_xi must be positive, got {k_xi}")));
    }
    let s = (d / 2) as u64;
    let block = 9 * s * s * s;
    if n == 0 || !n.is_multiple_of(block) {
        return Err(precondition(format!("n = {n} must be a positive multiple of 9 S^3 = {block}")));
    }
    let sf = s as f64;
    let gamma = k_xi * sf.powf(p.reciprocal() + 1.5) / (n as f64).sqrt();
    let rare = n / block;
    let per_state = n / s;
    let mut counts = vec![vec![per_state, 0]; s as usize];
    counts[0] = vec![rare, per_state - rare];
    let mut rewards =
        vec![
            vec![RewardModel::Constant { mean: 1.0 / (n as f64).sqrt() }, RewardModel::Constant { mean: 0.0 }];
            s as usize
        ];
    rewards[0] = vec![RewardModel::Gaussian { mean: gamma }, RewardModel::Gaussian { mean: 0.0 }];
    let inst = CbInstance::Tabular(TabularInstance {
        states: s as usize,
        actions: 2,
        design: TabularDesign::Fixed { counts },
        rewards,
        rho: uniform(s as usize),
    });
    inst.validate()?;
    Ok(inst)
}

/// Gap `γ` placed on state 1's optimal action by [`gen_separation_instance`].
pub fn separation_gap(d: usize, n: u64, p: Exponent, k_xi: f64) -> f64 {
    let s = (d / 2) as f64;
    k_xi * s.powf(p.reciprocal() + 1.5) / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MinimaxVariant {
    /// Uniform test distribution over `S = ⌊d/2⌋` states (sparse over `T`
    /// states when `q = 1`).
    #[default]
    Standard,
    /// `q ∈ (1, 2]` construction with an extra heavy state 0; requires
    /// `Λ ≥ √12` and `n ≥ d^{2/q} Λ²`.
    ExtendedRange,
}

fn floor_count(x: f64) -> u64 {
    (x + 1e-9).floor().max(0.0) as u64
}

/// Design and test distribution of the minimax lower-bound family `CB_q(Λ)`.
///
/// Reward means are all zero; only the design and `ρ` are constrained by the
/// construction. The generator checks `𝔠_q ≤ Λ` before returning.
pub fn gen_minimax_lb_instance(
    d: usize,
    q: Exponent,
    lambda: f64,
    n: u64,
    variant: MinimaxVariant,
) -> Result<CbInstance, InstanceError> {
    if d < 2 {
        return Err(precondition(format!("minimax instance needs d >= 2, got {d}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(precondition(format!("lambda must be positive, got {lambda}")));
    }
    let s = d / 2;
    let sf = s as f64;
    let df = d as f64;
    let nf = n as f64;
    let lam2 = lambda * lambda;

    let (rho, counts) = match variant {
        MinimaxVariant::ExtendedRange => {
            let qv = match q {
                Exponent::Finite(qv) if qv > 1.0 && qv <= 2.0 => qv,
                _ => return Err(precondition("extended-range construction needs q in (1, 2]")),
            };
            if lambda < 12f64.sqrt() {
                return Err(precondition(format!("lambda = {lambda} below sqrt(12)")));
            }
            if nf < df.powf(2.0 / qv) * lam2 {
                return Err(precondition(format!("n = {n} below d^(2/q) lambda^2 = {}", df.powf(2.0 / qv) * lam2)));
            }
            let rho0 = 1.0 - sf.powf(1.0 - 2.0 / qv) / 4.0;
            let gamma0 = lam2 / (8.0 * rho0);
            let gamma1 = lam2 / 2.0;
            if gamma0 < 2.0 || gamma1 < 2.0 {
                return Err(precondition(format!("Gamma0 = {gamma0}, Gamma1 = {gamma1}; both must be >= 2")));
            }
            let rest = (1.0 - rho0) / sf;
            let mut rho = vec![rho0];
            rho.extend(std::iter::repeat_n(rest, s));
            let mut counts =
                vec![vec![floor_count(nf * rho0 / gamma0), floor_count(nf * rho0 * (gamma0 - 1.0) / gamma0)]];
            counts.extend(std::iter::repeat_n(
                vec![floor_count(nf * rest / gamma1), floor_count(nf * rest * (gamma1 - 1.0) / gamma1)],
                s,
            ));
            (rho, counts)
        }
        MinimaxVariant::Standard if q == Exponent::ONE => {
            if lambda < 2.0 {
                return Err(precondition(format!("lambda = {lambda} below 2 (q = 1 branch)")));
            }
            if nf < lam2 {
                return Err(precondition(format!("n = {n} below lambda^2 = {lam2}")));
            }
            let gamma = (lam2 / (2.0 * sf)).max(2.0);
            let t = ((lam2 / (2.0 * gamma) + 1e-9).floor() as usize).clamp(1, s);
            let tf = t as f64;
            let mut rho = vec![0.0; s];
            let mut counts = vec![vec![0, 0]; s];
            for st in 0..t {
                rho[st] = 1.0 / tf;
                counts[st] = vec![floor_count(nf / (tf * gamma)), floor_count(nf * (gamma - 1.0) / (tf * gamma))];
            }
            (rho, counts)
        }
        MinimaxVariant::Standard => {
            let inv_p = q.dual().reciprocal();
            let floor_lambda = 8f64.sqrt() * df.powf(0.5 - inv_p);
            if lambda < floor_lambda {
                return Err(precondition(format!("lambda = {lambda} below sqrt(8) d^(1/q - 1/2) = {floor_lambda}")));
            }
            let n_min = df.powf(2.0 * inv_p) * lam2;
            if nf < n_min {
                return Err(precondition(format!("n = {n} below d^(2/p) lambda^2 = {n_min}")));
            }
            let gamma = sf.powf(2.0 * inv_p - 1.0) * lam2 / 2.0;
            if gamma < 2.0 {
                return Err(precondition(format!("Gamma = {gamma} below 2")));
            }
            let row = vec![floor_count(nf / (sf * gamma)), floor_count(nf * (gamma - 1.0) / (sf * gamma))];
            (uniform(s), vec![row; s])
        }
    };

    let states = rho.len();
    for (st, row) in counts.iter().enumerate() {
        if rho[st] > 0.0 && row.contains(&0) {
            return Err(precondition(format!("state {st} received a zero count; increase n")));
        }
    }
    let tab = TabularInstance {
        states,
        actions: 2,
        design: TabularDesign::Fixed { counts },
        rewards: vec![vec![RewardModel::Constant { mean: 0.0 }; 2]; states],
        rho,
    };
    tab.validate()?;
    let cq = tabular_complexity(&tab, q);
    if cq > lambda * (1.0 + 1e-12) {
        return Err(invariant("membership", format!("c_q = {cq} exceeds lambda = {lambda}")));
    }
    Ok(CbInstance::Tabular(tab))
}

/// `‖Σ^{-1/2} E_ρ φ(s, π★(s))‖_q` for a tabular instance (no ridge).
pub(crate) fn tabular_complexity(t: &TabularInstance, q: Exponent) -> f64 {
    let cov = t.coverage();
    let star = t.optimal_actions();
    let entries: Vec<f64> = (0..t.states)
        .filter(|&s| t.rho[s] > 0.0)
        .map(|s| {
            let w = cov[s][star[s]];
            if w > 0.0 {
                t.rho[s] / w.sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    if entries.iter().any(|e| e.is_infinite()) {
        return f64::INFINITY;
    }
    lp_norm(&entries, q)
}

/// Multi-armed bandit on which the plug-in rule fails: behavior `2^{-k}`,
/// arm 1 pays 0.99 deterministically, all others are fair coins.
pub fn gen_plugin_separation_mab(actions: usize, n: u64) -> Result<CbInstance, InstanceError> {
    if actions < 8 {
        return Err(precondition(format!("plug-in separation needs A >= 8, got {actions}")));
    }
    if n == 0 {
        return Err(precondition("n must be positive"));
    }
    let mut behavior: Vec<f64> = (1..actions).map(|k| 0.5f64.powi(k as i32)).collect();
    behavior.push(0.5f64.powi(actions as i32 - 1));
    let mut rewards = vec![RewardModel::Bernoulli { mean: 0.5 }; actions];
    rewards[0] = RewardModel::Constant { mean: 0.99 };
    let inst = CbInstance::Tabular(TabularInstance {
        states: 1,
        actions,
        design: TabularDesign::Random { behavior: vec![behavior], n },
        rewards: vec![rewards],
        rho: vec![1.0],
    });
    inst.validate()?;
    Ok(inst)
}

/// Index (1-based) of the coordinate carrying `θ★` in ball instances.
pub const BALL_SIGNAL_INDEX: usize = 20;

/// Diagonal spectrum `D_ii = i^{-1} / Σ_j j^{-1}`.
pub fn harmonic_spectrum(d: usize) -> Vector {
    let h: f64 = (1..=d).map(|i| 1.0 / i as f64).sum();
    Vector::from_fn(d, |i, _| 1.0 / ((i + 1) as f64 * h))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal(d: usize, rng: &mut Stream) -> Matrix {
    let g = Matrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Gaussian design on the unit ball, basis-aligned or randomly rotated.
///
/// The rotation depends only on `seed`, so instances built for different `n`
/// share `θ★` and the population covariance.
pub fn gen_ball_instance(d: usize, rotate: bool, seed: u64, n: u64) -> Result<CbInstance, InstanceError> {
    if d < BALL_SIGNAL_INDEX {
        return Err(precondition(format!("ball instance needs d >= {BALL_SIGNAL_INDEX}, got {d}")));
    }
    if n < d as u64 {
        return Err(precondition(format!("ball instance needs n >= d, got n = {n}, d = {d}")));
    }
    let spectrum = harmonic_spectrum(d);
    let rotation =
        if rotate { random_orthogonal(d, &mut stream(derive_seed(&[seed, 1]))) } else { Matrix::identity(d, d) };
    let theta_star = rotation.column(BALL_SIGNAL_INDEX - 1).into_owned();
    let covariance = &rotation * Matrix::from_diagonal(&spectrum) * rotation.transpose();
    let design = draw_design(&rotation, &spectrum, seed, n);
    let inst = CbInstance::Ball(BallInstance { d, n, design_seed: seed, rotate, theta_star, covariance, design });
    inst.validate()?;
    Ok(inst)
}

fn draw_design(rotation: &Matrix, spectrum: &Vector, seed: u64, n: u64) -> Matrix {
    let d = spectrum.len();
    let mut rng = stream(derive_seed(&[seed, 2, n]));
    let z = Matrix::from_fn(n as usize, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    // rows φ = Q D^{1/2} z
    let factor = rotation * Matrix::from_diagonal(&spectrum.map(f64::sqrt));
    z * factor.transpose()
}

/// Alternative two-armed instance `Q₂`: `μ(a₁) = p`, `R(a₁) = Ber(α)`, `R(a₂) = Ber(β)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternativeParams {
    pub p: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl AlternativeParams {
    /// Parameters under which `Q₂` coincides with `Q₁`.
    pub const REFERENCE: AlternativeParams = AlternativeParams { p: 0.5, alpha: 1.0, beta: 0.0 };
}

/// Sample size attached to the random-design counterexample instances.
pub const COUNTEREXAMPLE_N: u64 = 100;

fn two_armed(params: AlternativeParams) -> Result<CbInstance, InstanceError> {
    let inst = CbInstance::Tabular(TabularInstance {
        states: 1,
        actions: 2,
        design: TabularDesign::Random { behavior: vec![vec![params.p, 1.0 - params.p]], n: COUNTEREXAMPLE_N },
        rewards: vec![vec![
            RewardModel::Bernoulli { mean: params.alpha },
            RewardModel::Bernoulli { mean: params.beta },
        ]],
        rho: vec![1.0],
    });
    inst.validate()?;
    Ok(inst)
}

/// `(Q₁, Q₂)`: the fixed two-armed Bernoulli instance and its parameterized alternative.
pub fn gen_counterexample_pair(alternative: AlternativeParams) -> Result<(CbInstance, CbInstance), InstanceError> {
    for (name, v) in [("p", alternative.p), ("alpha", alternative.alpha), ("beta", alternative.beta)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(precondition(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok((two_armed(AlternativeParams::REFERENCE)?, two_armed(alternative)?))
}

/// Uniform `ρ`; state 1's optimal action has behavior mass `1/S³`, every other
/// state's optimal action has mass `1/S`. Here `C★ = S²` while `𝔠_1 = 2√S − 1/√S`.
pub fn gen_concentrability_example(states: usize, n: u64) -> Result<CbInstance, InstanceError> {
    if states < 2 {
        return Err(precondition(format!("needs S >= 2, got {states}")));
    }
    let sf = states as f64;
    let mut behavior = vec![vec![1.0 / sf, 0.0]; states];
    behavior[0] = vec![sf.powi(-3), 1.0 / sf - sf.powi(-3)];
    let inst = CbInstance::Tabular(TabularInstance {
        states,
        actions: 2,
        design: TabularDesign::Random { behavior, n },
        rewards: vec![vec![RewardModel::Constant { mean: 1.0 }, RewardModel::Constant { mean: 0.0 }]; states],
        rho: uniform(states),
    });
    inst.validate()?;
    Ok(inst)
}

// ── JSON schema ───────────────────────────────────────────────────────

/// Float formatting shared by every file format: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    let parts: Vec<String> = items.iter().map(f).collect();
    format!("[{}]", parts.join(", "))
}

/// Serializes to the instance JSON schema.
pub fn instance_to_json(instance: &CbInstance) -> String {
    let mut out = String::from("{\n");
    match instance {
        CbInstance::Tabular(t) => {
            let _ = writeln!(out, "  \"kind\": \"tabular\",");
            let _ = writeln!(out, "  \"S\": {},", t.states);
            let _ = writeln!(out, "  \"A\": {},", t.actions);
            let _ = writeln!(out, "  \"n\": {},", t.n());
            match &t.design {
                TabularDesign::Fixed { counts } => {
                    let _ = writeln!(out, "  \"counts\": {},", json_list(counts, |r| json_list(r, |c| c.to_string())));
                }
                TabularDesign::Random { behavior, .. } => {
                    let _ =
                        writeln!(out, "  \"behavior\": {},", json_list(behavior, |r| json_list(r, |m| fmt_f64(*m))));
                }
            }
            let rewards = json_list(&t.rewards, |row| {
                json_list(row, |m| format!("{{\"kind\": \"{}\", \"mean\": {}}}", m.kind(), fmt_f64(m.mean())))
            });
            let _ = writeln!(out, "  \"rewards\": {rewards},");
            let _ = writeln!(out, "  \"rho\": {}", json_list(&t.rho, |r| fmt_f64(*r)));
        }
        CbInstance::Ball(b) => {
            let _ = writeln!(out, "  \"kind\": \"ball\",");
            let _ = writeln!(out, "  \"d\": {},", b.d);
            let _ = writeln!(out, "  \"n\": {},", b.n);
            let _ = writeln!(out, "  \"design_seed\": {},", b.design_seed);
            let _ = writeln!(out, "  \"rotate\": {},", b.rotate);
            let _ = writeln!(out, "  \"theta_star\": {}", json_list(b.theta_star.as_slice(), |x| fmt_f64(*x)));
        }
    }
    out.push_str("}\n");
    out
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawKind {
    Tabular,
    Ball,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReward {
    kind: String,
    mean: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    kind: RawKind,
    #[serde(rename = "S")]
    states: Option<usize>,
    #[serde(rename = "A")]
    actions: Option<usize>,
    counts: Option<Vec<Vec<u64>>>,
    behavior: Option<Vec<Vec<f64>>>,
    rewards: Option<Vec<Vec<RawReward>>>,
    rho: Option<Vec<f64>>,
    d: Option<usize>,
    theta_star: Option<Vec<f64>>,
    design_seed: Option<u64>,
    n: Option<u64>,
    rotate: Option<bool>,
}

fn required<T>(value: Option<T>, field: &str) -> Result<T, InstanceError> {
    value.ok_or_else(|| invariant(field, "required field is missing"))
}

/// Parses and validates the instance JSON schema.
pub fn instance_from_json(text: &str) -> Result<CbInstance, InstanceError> {
    let raw: RawInstance = serde_json::from_str(text).map_err(|e| InstanceError::Parse {
        message: e.to_string(),
        line: e.line(),
        column: e.column(),
    })?;
    let inst = match raw.kind {
        RawKind::Tabular => {
            let states = required(raw.states, "S")?;
            let actions = required(raw.actions, "A")?;
            let rewards = required(raw.rewards, "rewards")?
                .into_iter()
                .enumerate()
                .map(|(s, row)| {
                    row.into_iter()
                        .enumerate()
                        .map(|(a, r)| match r.kind.as_str() {
                            "gaussian" => Ok(RewardModel::Gaussian { mean: r.mean }),
                            "bernoulli" => Ok(RewardModel::Bernoulli { mean: r.mean }),
                            "constant" => Ok(RewardModel::Constant { mean: r.mean }),
                            other => Err(invariant(format!("rewards[{s}][{a}]"), format!("unknown kind `{other}`"))),
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            let design = match (raw.counts, raw.behavior) {
                (Some(counts), None) => {
                    let inst_n: u64 = counts.iter().flatten().sum();
                    if let Some(n) = raw.n {
                        if n != inst_n {
                            return Err(invariant("counts", format!("counts sum to {inst_n} but n = {n}")));
                        }
                    }
                    TabularDesign::Fixed { counts }
                }
                (None, Some(behavior)) => TabularDesign::Random { behavior, n: required(raw.n, "n")? },
                (Some(_), Some(_)) => return Err(invariant("design", "give either counts or behavior, not both")),
                (None, None) => return Err(invariant("counts", "required field is missing")),
            };
            CbInstance::Tabular(TabularInstance { states, actions, design, rewards, rho: required(raw.rho, "rho")? })
        }
        RawKind::Ball => {
            let d = required(raw.d, "d")?;
            let n = required(raw.n, "n")?;
            let seed = required(raw.design_seed, "design_seed")?;
            let rotate = required(raw.rotate, "rotate")?;
            let theta = required(raw.theta_star, "theta_star")?;
            if theta.len() != d {
                return Err(invariant("theta_star", format!("length {} but d = {d}", theta.len())));
            }
            let mut inst = gen_ball_instance(d, rotate, seed, n)?;
            if let CbInstance::Ball(b) = &mut inst {
                b.theta_star = Vector::from_vec(theta);
            }
            inst
        }
    };
    inst.validate()?;
    Ok(inst)
}

pub fn instance_from_config(path: &Path) -> Result<CbInstance, InstanceError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| InstanceError::Io { path: path.display().to_string(), source })?;
    instance_from_json(&text)
}

pub fn write_instance(instance: &CbInstance, path: &Path) -> Result<(), InstanceError> {
    std::fs::write(path, instance_to_json(instance))
        .map_err(|source| InstanceError::Io { path: path.display().to_string(), source })
}
