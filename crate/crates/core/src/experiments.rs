//! Seeded Monte Carlo harness: sweeps of (instance × rule × n × trial),
//! percentile-bootstrap summaries, CSV persistence and the named presets.
//!
//! Every trial draws its dataset from a seed derived from
//! `(master_seed, rule label, n, trial)`, so the output is fully determined by
//! the configuration regardless of how trials are scheduled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::estimators::{
    beta_width, confidence_membership, l2_tight_beta, lcb_tabular, ols_fit, pevi_policy, plugin_policy_ball,
    plugin_policy_tabular, solve_policy_ball, solve_policy_enum, BallSolverOptions, ConfidenceSpec, EstimatorError,
    FittedModel, Policy, DEFAULT_ENUM_CAP,
};
use crate::instances::{
    fmt_f64, gen_ball_instance, gen_concentrability_example, gen_minimax_lb_instance, gen_plugin_separation_mab,
    gen_separation_instance, instance_from_config, sample_dataset_with, CbInstance, Dataset, InstanceError,
    MinimaxVariant, SampleOptions, TabularDesign,
};
use crate::linalg::Exponent;
use crate::metrics::{hellinger_infimum, suboptimality, MetricsError};
use crate::rng::{derive_seed, label_hash, stream};

pub const PRESETS: [&str; 6] =
    ["fig2-rotated", "fig2-aligned", "separation", "plugin-mab", "minimax-staircase", "counterexample"];

pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

pub const RECORDS_HEADER: [&str; 10] =
    ["preset", "rule", "p", "n", "trial", "seed", "suboptimality", "coverage", "wall_ms", "error"];
pub const SUMMARY_HEADER: [&str; 8] = ["preset", "rule", "p", "n", "trials", "mean", "ci_lo", "ci_hi"];
pub const STAIRCASE_HEADER: [&str; 7] = ["d", "lambda", "epsilon", "p_class", "p_rule", "n_rule", "n_lower"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset `{0}`; valid presets: {list}", list = PRESETS.join(", "))]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("no records to summarize")]
    EmptySummary,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Plugin,
    Lp,
    Lcb,
    Pevi,
    L2tight,
}

/// Width schedule: `Auto` derives β from δ, `Fixed` pins it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BetaPolicy {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for BetaPolicy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            BetaPolicy::Auto => serializer.serialize_str("auto"),
            BetaPolicy::Fixed(b) => serializer.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for BetaPolicy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Num(b) if b >= 0.0 && b.is_finite() => Ok(BetaPolicy::Fixed(b)),
            Raw::Num(b) => Err(serde::de::Error::custom(format!("beta must be finite and >= 0, got {b}"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl std::str::FromStr for BetaPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(BetaPolicy::Auto);
        }
        match s.trim().parse::<f64>() {
            Ok(b) if b >= 0.0 && b.is_finite() => Ok(BetaPolicy::Fixed(b)),
            _ => Err(format!("beta must be `auto` or a nonnegative number, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub rule: RuleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Exponent>,
    #[serde(default)]
    pub beta: BetaPolicy,
}

impl RuleSpec {
    pub fn new(rule: RuleKind, p: Option<Exponent>) -> Self {
        RuleSpec { rule, p, beta: BetaPolicy::Auto }
    }

    pub fn lp(p: Exponent) -> Self {
        RuleSpec::new(RuleKind::Lp, Some(p))
    }

    /// Norm index of the rule's confidence set; `None` for the plug-in rule.
    pub fn exponent(&self) -> Option<Exponent> {
        match self.rule {
            RuleKind::Plugin => None,
            RuleKind::Lp => Some(self.p.unwrap_or(Exponent::TWO)),
            RuleKind::Lcb | RuleKind::Pevi => Some(Exponent::Infinity),
            RuleKind::L2tight => Some(Exponent::TWO),
        }
    }

    pub fn label(&self) -> String {
        let base = match self.rule {
            RuleKind::Plugin => "plugin".to_string(),
            RuleKind::Lp => format!("lp-{}", self.exponent().unwrap_or(Exponent::TWO)),
            RuleKind::Lcb => "lcb".to_string(),
            RuleKind::Pevi => "pevi".to_string(),
            RuleKind::L2tight => "l2tight".to_string(),
        };
        match self.beta {
            BetaPolicy::Auto => base,
            BetaPolicy::Fixed(b) => format!("{base}@{b}"),
        }
    }
}

/// What a config sweeps over. The last two variants are analytic jobs with
/// no sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Workload {
    Separation {
        d: usize,
        p: Exponent,
        k_xi: f64,
    },
    Ball {
        d: usize,
        rotate: bool,
        #[serde(default)]
        design_seed: Option<u64>,
        #[serde(default)]
        shortcut: bool,
    },
    PluginMab {
        actions: usize,
    },
    Minimax {
        d: usize,
        q: Exponent,
        lambda: f64,
        #[serde(default)]
        extended: bool,
    },
    Concentrability {
        states: usize,
    },
    File {
        path: PathBuf,
    },
    Staircase {
        d: usize,
        lambda: f64,
        epsilon: f64,
        classes: Vec<Exponent>,
    },
    Counterexample {
        coarse: f64,
        fine: f64,
    },
}

fn default_ci() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub workload: Workload,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub n_grid: Vec<u64>,
    #[serde(default)]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub delta: f64,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub ball_solver: BallSolverOptions,
    #[serde(default)]
    pub enum_cap: Option<u64>,
    /// Record wall-clock time per trial. Off by default so output files are
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text)
            .map_err(|e| ExperimentError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }

    fn is_analytic(&self) -> bool {
        matches!(self.workload, Workload::Staircase { .. } | Workload::Counterexample { .. })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return bad(format!("ci_level must lie in (0, 1), got {}", self.ci_level));
        }
        if self.is_analytic() {
            return Ok(());
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.rules.is_empty() {
            return bad("at least one rule is required".into());
        }
        if self.n_grid.is_empty() {
            return bad("n_grid must not be empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("n_grid must be strictly increasing, got {:?}", self.n_grid));
        }
        for r in &self.rules {
            if r.rule == RuleKind::Lp && r.p.is_none() {
                return bad("rule `lp` needs a p".into());
            }
        }
        Ok(())
    }

    fn design_seed(&self) -> u64 {
        derive_seed(&[self.master_seed, label_hash("design")])
    }

    /// Instance used at sample size `n`.
    pub fn instance_for(&self, n: u64) -> Result<CbInstance, ExperimentError> {
        let inst = match &self.workload {
            Workload::Separation { d, p, k_xi } => gen_separation_instance(*d, n, *p, *k_xi)?,
            Workload::Ball { d, rotate, design_seed, .. } => {
                gen_ball_instance(*d, *rotate, design_seed.unwrap_or_else(|| self.design_seed()), n)?
            }
            Workload::PluginMab { actions } => gen_plugin_separation_mab(*actions, n)?,
            Workload::Minimax { d, q, lambda, extended } => {
                let variant = if *extended { MinimaxVariant::ExtendedRange } else { MinimaxVariant::Standard };
                gen_minimax_lb_instance(*d, *q, *lambda, n, variant)?
            }
            Workload::Concentrability { states } => gen_concentrability_example(*states, n)?,
            Workload::File { path } => {
                let mut inst = instance_from_config(path)?;
                match &mut inst {
                    CbInstance::Tabular(t) => {
                        let current = t.n();
                        match &mut t.design {
                            TabularDesign::Random { n: size, .. } => *size = n,
                            TabularDesign::Fixed { .. } if current != n => {
                                return Err(ExperimentError::Config(format!(
                                    "fixed-design instance has n = {current}, grid asks for {n}"
                                )))
                            }
                            TabularDesign::Fixed { .. } => {}
                        }
                    }
                    CbInstance::Ball(b) => {
                        if b.n != n {
                            let theta = b.theta_star.clone();
                            let mut rebuilt = gen_ball_instance(b.d, b.rotate, b.design_seed, n)?;
                            if let CbInstance::Ball(r) = &mut rebuilt {
                                r.theta_star = theta;
                            }
                            inst = rebuilt;
                        }
                    }
                }
                inst
            }
            Workload::Staircase { .. } | Workload::Counterexample { .. } => {
                return Err(ExperimentError::Config("analytic workloads have no instance".into()))
            }
        };
        Ok(inst)
    }

    fn sample_options(&self) -> SampleOptions {
        SampleOptions { ball_shortcut: matches!(self.workload, Workload::Ball { shortcut: true, .. }) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub preset: String,
    pub rule: String,
    pub p: Option<Exponent>,
    pub n: u64,
    pub trial: usize,
    pub seed: u64,
    /// `None` on failure rows.
    pub suboptimality: Option<f64>,
    /// Whether `θ★` fell inside the rule's confidence set; `None` for plug-in.
    pub coverage: Option<bool>,
    pub wall_ms: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub preset: String,
    pub rule: String,
    pub p: Option<Exponent>,
    pub n: u64,
    pub trials: usize,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Sample complexity to reach suboptimality `ε` on the class `CB_q(Λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaircaseRow {
    pub d: usize,
    pub lambda: f64,
    pub epsilon: f64,
    /// `p` dual to the class index `q`.
    pub p_class: Exponent,
    pub p_rule: Exponent,
    /// `8 log(d/δ) d^{2 max(1/p̃, 1/p)} Λ²/ε²`: the rule's upper bound inverted.
    pub n_rule: f64,
    /// `d^{2/p} Λ²/ε²`: the minimax rate without constants.
    pub n_lower: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
    pub staircase: Vec<StaircaseRow>,
}

impl ExperimentOutput {
    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Width actually used by `rule` on a dataset of `n` rows in dimension `d`.
pub fn rule_beta(rule: &RuleSpec, instance: &CbInstance, n: u64, delta: f64) -> f64 {
    if let BetaPolicy::Fixed(b) = rule.beta {
        return b;
    }
    let d = instance.dim();
    match rule.rule {
        RuleKind::Plugin => 0.0,
        RuleKind::Lp => beta_width(rule.exponent().unwrap_or(Exponent::TWO), d, n, delta),
        RuleKind::Lcb => beta_width(Exponent::Infinity, d, n, delta),
        RuleKind::Pevi => 0.5 * beta_width(Exponent::Infinity, d, n, delta),
        RuleKind::L2tight => match instance.as_tabular() {
            Some(t) => l2_tight_beta(t.states, t.actions, n, delta),
            None => beta_width(Exponent::TWO, d, n, delta),
        },
    }
}

#[derive(Debug, Clone)]
pub struct RuleOutcome {
    pub policy: Policy,
    pub model: FittedModel,
    /// Confidence set the rule implicitly uses; `None` for plug-in.
    pub spec: Option<ConfidenceSpec>,
}

/// Fits the dataset and applies `rule`.
pub fn apply_rule(
    instance: &CbInstance,
    dataset: &Dataset,
    rule: &RuleSpec,
    delta: f64,
    solver: &BallSolverOptions,
    enum_cap: u64,
    seed: u64,
) -> Result<RuleOutcome, ExperimentError> {
    let model = ols_fit(dataset, 0.0)?;
    let beta = rule_beta(rule, instance, dataset.n(), delta);
    let tabular = instance.as_tabular();
    let unsupported = |what: &str| ExperimentError::Estimator(EstimatorError::Unsupported(what.to_string()));
    let (policy, spec) = match rule.rule {
        RuleKind::Plugin => {
            let policy = match tabular {
                Some(t) => plugin_policy_tabular(&model, t)?,
                None => plugin_policy_ball(&model)?,
            };
            (policy, None)
        }
        RuleKind::Lp => {
            let spec = ConfidenceSpec::new(rule.exponent().unwrap_or(Exponent::TWO), beta);
            let policy = match tabular {
                Some(t) => solve_policy_enum(t, &model, &spec, enum_cap)?,
                None => solve_policy_ball(&model, &spec, solver, derive_seed(&[seed, label_hash("solver")]))?,
            };
            (policy, Some(spec))
        }
        RuleKind::Lcb => {
            let t = tabular.ok_or_else(|| unsupported("lcb needs a tabular instance"))?;
            (lcb_tabular(&model, beta, &t.rho)?, Some(ConfidenceSpec::new(Exponent::Infinity, beta)))
        }
        RuleKind::Pevi => {
            let t = tabular.ok_or_else(|| unsupported("pevi needs a tabular instance"))?;
            (pevi_policy(&model, beta, t)?, Some(ConfidenceSpec::new(Exponent::Infinity, 2.0 * beta)))
        }
        RuleKind::L2tight => {
            let t = tabular.ok_or_else(|| unsupported("l2tight needs a tabular instance"))?;
            let spec = ConfidenceSpec::new(Exponent::TWO, beta);
            (solve_policy_enum(t, &model, &spec, enum_cap)?, Some(spec))
        }
    };
    Ok(RuleOutcome { policy, model, spec })
}

fn run_trial(
    config: &ExperimentConfig,
    instance: &CbInstance,
    rule: &RuleSpec,
    label: &str,
    n: u64,
    trial: usize,
) -> TrialRecord {
    let seed = derive_seed(&[config.master_seed, label_hash(label), n, trial as u64]);
    let start = Instant::now();
    let outcome = (|| -> Result<(f64, Option<bool>), ExperimentError> {
        let dataset = sample_dataset_with(instance, seed, config.sample_options())?;
        let cap = config.enum_cap.unwrap_or(DEFAULT_ENUM_CAP);
        let out = apply_rule(instance, &dataset, rule, config.delta, &config.ball_solver, cap, seed)?;
        let gap = suboptimality(instance, &out.policy)?;
        let covered = out.spec.map(|s| confidence_membership(&instance.theta_star(), &out.model, &s).member);
        Ok((gap, covered))
    })();
    let wall_ms = if config.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let (suboptimality, coverage, error) = match outcome {
        Ok((g, c)) => (Some(g), c, None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    TrialRecord {
        preset: config.preset.clone(),
        rule: label.to_string(),
        p: rule.exponent(),
        n,
        trial,
        seed,
        suboptimality,
        coverage,
        wall_ms,
        error,
    }
}

/// Runs the sweep. Records come back in `(rule, n, trial)` order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    match &config.workload {
        Workload::Staircase { d, lambda, epsilon, classes } => {
            let staircase = staircase_table(*d, *lambda, *epsilon, classes, config.delta);
            return Ok(ExperimentOutput { staircase, ..Default::default() });
        }
        Workload::Counterexample { coarse, fine } => {
            let h = hellinger_infimum(*coarse, *fine);
            let row = SummaryRow {
                preset: config.preset.clone(),
                rule: "hellinger-inf".into(),
                p: None,
                n: 0,
                trials: 0,
                mean: h.value,
                ci_lo: h.value,
                ci_hi: h.value,
            };
            return Ok(ExperimentOutput { summary: vec![row], ..Default::default() });
        }
        _ => {}
    }

    let instances: Vec<CbInstance> = config.n_grid.iter().map(|&n| config.instance_for(n)).collect::<Result<_, _>>()?;
    let labels: Vec<String> = config.rules.iter().map(RuleSpec::label).collect();
    let mut tasks = Vec::with_capacity(config.rules.len() * instances.len() * config.trials);
    for ri in 0..config.rules.len() {
        for ni in 0..instances.len() {
            for trial in 0..config.trials {
                tasks.push((ri, ni, trial));
            }
        }
    }
    let work = |&(ri, ni, trial): &(usize, usize, usize)| {
        run_trial(config, &instances[ni], &config.rules[ri], &labels[ri], config.n_grid[ni], trial)
    };
    #[cfg(feature = "parallel")]
    let records: Vec<TrialRecord> = tasks.par_iter().map(work).collect();
    #[cfg(not(feature = "parallel"))]
    let records: Vec<TrialRecord> = tasks.iter().map(work).collect();

    let summary = summarize(&records, config.ci_level, config.master_seed)?;
    Ok(ExperimentOutput { records, summary, staircase: Vec::new() })
}

fn staircase_table(d: usize, lambda: f64, epsilon: f64, classes: &[Exponent], delta: f64) -> Vec<StaircaseRow> {
    let df = d as f64;
    let scale = lambda * lambda / (epsilon * epsilon);
    let mut rows = Vec::new();
    for &p_class in classes {
        for &p_rule in classes {
            let exponent = 2.0 * p_rule.reciprocal().max(p_class.reciprocal());
            rows.push(StaircaseRow {
                d,
                lambda,
                epsilon,
                p_class,
                p_rule,
                n_rule: 8.0 * (df / delta).ln() * df.powf(exponent) * scale,
                n_lower: df.powf(2.0 * p_class.reciprocal()) * scale,
            });
        }
    }
    rows
}

fn quantile(sorted: &[f64], level: f64) -> f64 {
    let h = level * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-(rule, n) means with percentile-bootstrap intervals. Failure rows are
/// excluded; groups keep their first-appearance order.
pub fn summarize(records: &[TrialRecord], ci_level: f64, master_seed: u64) -> Result<Vec<SummaryRow>, ExperimentError> {
    if records.is_empty() {
        return Err(ExperimentError::EmptySummary);
    }
    let mut groups: Vec<(usize, Vec<f64>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let pos = groups.iter().position(|(j, _)| records[*j].rule == r.rule && records[*j].n == r.n);
        let idx = match pos {
            Some(k) => k,
            None => {
                groups.push((i, Vec::new()));
                groups.len() - 1
            }
        };
        if let Some(s) = r.suboptimality {
            groups[idx].1.push(s);
        }
    }
    let mut rows = Vec::new();
    for (first, xs) in groups {
        if xs.is_empty() {
            continue;
        }
        let head = &records[first];
        let len = xs.len();
        let mean = xs.iter().sum::<f64>() / len as f64;
        let mut rng = stream(derive_seed(&[master_seed, label_hash("bootstrap"), label_hash(&head.rule), head.n]));
        let mut boots: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| (0..len).map(|_| xs[rng.random_range(0..len)]).sum::<f64>() / len as f64)
            .collect();
        boots.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - ci_level);
        rows.push(SummaryRow {
            preset: head.preset.clone(),
            rule: head.rule.clone(),
            p: head.p,
            n: head.n,
            trials: len,
            mean,
            ci_lo: quantile(&boots, tail).min(mean),
            ci_hi: quantile(&boots, 1.0 - tail).max(mean),
        });
    }
    Ok(rows)
}

// ── CSV ───────────────────────────────────────────────────────────────

fn fmt_p(p: Option<Exponent>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, ExperimentError> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| io_err(path, e))
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<(), ExperimentError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<(), ExperimentError> {
    write_rows(
        path,
        &RECORDS_HEADER,
        records.iter().map(|r| {
            vec![
                r.preset.clone(),
                r.rule.clone(),
                fmt_p(r.p),
                r.n.to_string(),
                r.trial.to_string(),
                r.seed.to_string(),
                r.suboptimality.map(fmt_f64).unwrap_or_default(),
                r.coverage.map(|c| c.to_string()).unwrap_or_default(),
                fmt_f64(r.wall_ms),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), ExperimentError> {
    write_rows(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            vec![
                r.preset.clone(),
                r.rule.clone(),
                fmt_p(r.p),
                r.n.to_string(),
                r.trials.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.ci_lo),
                fmt_f64(r.ci_hi),
            ]
        }),
    )
}

pub fn write_staircase(path: &Path, rows: &[StaircaseRow]) -> Result<(), ExperimentError> {
    write_rows(
        path,
        &STAIRCASE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.d.to_string(),
                fmt_f64(r.lambda),
                fmt_f64(r.epsilon),
                r.p_class.to_string(),
                r.p_rule.to_string(),
                fmt_f64(r.n_rule),
                fmt_f64(r.n_lower),
            ]
        }),
    )
}

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, ExperimentError> {
    let mut r = csv::ReaderBuilder::new().from_path(path).map_err(|e| io_err(path, e))?;
    let found = r.headers().map_err(|e| io_err(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(io_err(path, format!("unexpected header `{}`", found.iter().collect::<Vec<_>>().join(","))));
    }
    r.records().map(|row| row.map_err(|e| io_err(path, e))).collect()
}

fn field<T: std::str::FromStr>(
    path: &Path,
    row: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<T, ExperimentError> {
    let raw = row.get(i).unwrap_or("");
    raw.parse().map_err(|_| io_err(path, format!("column `{name}`: cannot parse `{raw}`")))
}

fn optional<T: std::str::FromStr>(
    path: &Path,
    row: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<Option<T>, ExperimentError> {
    if row.get(i).unwrap_or("").is_empty() {
        Ok(None)
    } else {
        field(path, row, i, name).map(Some)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, ExperimentError> {
    read_rows(path, &RECORDS_HEADER)?
        .iter()
        .map(|row| {
            Ok(TrialRecord {
                preset: row[0].to_string(),
                rule: row[1].to_string(),
                p: optional(path, row, 2, "p")?,
                n: field(path, row, 3, "n")?,
                trial: field(path, row, 4, "trial")?,
                seed: field(path, row, 5, "seed")?,
                suboptimality: optional(path, row, 6, "suboptimality")?,
                coverage: optional(path, row, 7, "coverage")?,
                wall_ms: field(path, row, 8, "wall_ms")?,
                error: optional(path, row, 9, "error")?,
            })
        })
        .collect()
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>, ExperimentError> {
    read_rows(path, &SUMMARY_HEADER)?
        .iter()
        .map(|row| {
            Ok(SummaryRow {
                preset: row[0].to_string(),
                rule: row[1].to_string(),
                p: optional(path, row, 2, "p")?,
                n: field(path, row, 3, "n")?,
                trials: field(path, row, 4, "trials")?,
                mean: field(path, row, 5, "mean")?,
                ci_lo: field(path, row, 6, "ci_lo")?,
                ci_hi: field(path, row, 7, "ci_hi")?,
            })
        })
        .collect()
}

/// Writes `records.csv`, `summary.csv` and, for the staircase job,
/// `staircase.csv` into `dir`.
pub fn write_outputs(dir: &Path, output: &ExperimentOutput) -> Result<Vec<PathBuf>, ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let records = dir.join("records.csv");
    let summary = dir.join("summary.csv");
    write_records(&records, &output.records)?;
    write_summary(&summary, &output.summary)?;
    let mut paths = vec![records, summary];
    if !output.staircase.is_empty() {
        let stair = dir.join("staircase.csv");
        write_staircase(&stair, &output.staircase)?;
        paths.push(stair);
    }
    Ok(paths)
}

/// Aligned plain-text rendering of a summary.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<14} {:>6} {:>8} {:>7} {:>12} {:>12} {:>12}",
        "preset", "rule", "p", "n", "trials", "mean", "ci_lo", "ci_hi"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:<14} {:>6} {:>8} {:>7} {:>12.6} {:>12.6} {:>12.6}",
            r.preset,
            r.rule,
            fmt_p(r.p),
            r.n,
            r.trials,
            r.mean,
            r.ci_lo,
            r.ci_hi
        );
    }
    out
}

pub fn format_staircase(rows: &[StaircaseRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>8} {:>8} {:>14} {:>14}", "p_class", "p_rule", "n_rule", "n_lower");
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8} {:>8} {:>14.4e} {:>14.4e}",
            r.p_class.to_string(),
            r.p_rule.to_string(),
            r.n_rule,
            r.n_lower
        );
    }
    out
}

// ── Presets ───────────────────────────────────────────────────────────

pub const FIG2_N_GRID: [u64; 6] = [200, 400, 800, 1600, 3200, 6400];

fn base(name: &str, workload: Workload) -> ExperimentConfig {
    ExperimentConfig {
        preset: name.to_string(),
        workload,
        rules: Vec::new(),
        n_grid: Vec::new(),
        trials: 0,
        master_seed: DEFAULT_MASTER_SEED,
        delta: 0.1,
        ci_level: 0.9,
        output: None,
        ball_solver: BallSolverOptions::default(),
        enum_cap: None,
        timing: false,
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig, ExperimentError> {
    let cfg = match name {
        "fig2-rotated" | "fig2-aligned" => {
            let rotate = name == "fig2-rotated";
            let mut c = base(name, Workload::Ball { d: 100, rotate, design_seed: None, shortcut: false });
            c.rules = vec![
                RuleSpec::new(RuleKind::Plugin, None),
                RuleSpec::lp(Exponent::TWO),
                RuleSpec::lp(Exponent::Infinity),
            ];
            c.n_grid = FIG2_N_GRID.to_vec();
            c.trials = 100;
            c
        }
        "separation" => {
            let mut c = base(name, Workload::Separation { d: 20, p: Exponent::TWO, k_xi: 1.0 });
            c.rules = vec![RuleSpec::lp(Exponent::TWO), RuleSpec::lp(Exponent::Infinity)];
            c.n_grid = vec![9 * 20 * 20 * 20];
            c.trials = 400;
            c
        }
        "plugin-mab" => {
            let mut c = base(name, Workload::PluginMab { actions: 12 });
            c.rules = vec![RuleSpec::new(RuleKind::Plugin, None), RuleSpec::lp(Exponent::Infinity)];
            c.n_grid = vec![256, 1024, 4096];
            c.trials = 2000;
            c
        }
        "minimax-staircase" => base(
            name,
            Workload::Staircase {
                d: 100,
                lambda: 4.0,
                epsilon: 0.01,
                classes: vec![
                    Exponent::ONE,
                    Exponent::Finite(4.0 / 3.0),
                    Exponent::TWO,
                    Exponent::Finite(4.0),
                    Exponent::Infinity,
                ],
            },
        ),
        "counterexample" => base(name, Workload::Counterexample { coarse: 1e-2, fine: 1e-4 }),
        other => return Err(ExperimentError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}
