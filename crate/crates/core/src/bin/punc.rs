use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use punc::estimators::BallSolverOptions;
use punc::experiments::{
    apply_rule, format_staircase, format_summary, preset, rule_beta, run_experiment, write_outputs, BetaPolicy,
    ExperimentConfig, ExperimentError, RuleKind, RuleSpec, PRESETS,
};
use punc::instances::{
    gen_ball_instance, gen_concentrability_example, gen_counterexample_pair, gen_minimax_lb_instance,
    gen_plugin_separation_mab, gen_separation_instance, instance_from_config, sample_dataset_with, write_instance,
    AlternativeParams, CbInstance, MinimaxVariant, SampleOptions,
};
use punc::linalg::Exponent;
use punc::metrics::{
    complexity_cq, complexity_cq_population, concentrability, model_complexity, mu_pistar, suboptimality,
};
use punc::verify::run_suite;

const EXIT_CONFIG: u8 = 1;
const EXIT_PARTIAL: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "punc", version, about = "Pessimistic offline contextual-bandit rules and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a preset or a JSON experiment config and write records.csv / summary.csv.
    Run(RunArgs),
    /// Generate an instance file and print its complexity measures.
    Gen(GenArgs),
    /// Run the built-in property suites.
    Verify(VerifyArgs),
    /// Sample one dataset from an instance file and evaluate one rule on it.
    Eval(EvalArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["preset", "config"])))]
struct RunArgs {
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: results/<preset>).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "PUNC_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads for trials.
    #[arg(long)]
    jobs: Option<usize>,
    /// Record per-trial wall-clock time (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
#[command(group(ArgGroup::new("kind").required(true).args(
    ["separation", "minimax", "plugin_mab", "ball", "concentrability", "counterexample"]
)))]
struct GenArgs {
    #[arg(long)]
    separation: bool,
    #[arg(long)]
    minimax: bool,
    #[arg(long)]
    plugin_mab: bool,
    #[arg(long)]
    ball: bool,
    #[arg(long)]
    concentrability: bool,
    #[arg(long)]
    counterexample: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<u64>,
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value = "2")]
    q: Exponent,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    k_xi: f64,
    #[arg(long, default_value_t = 12)]
    actions: usize,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    rotate: bool,
    /// Use the extra-state construction for q in (1, 2].
    #[arg(long)]
    extended: bool,
    #[arg(long, env = "PUNC_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    alt_p: f64,
    #[arg(long, default_value_t = 1.0)]
    alt_alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    alt_beta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Linalg,
    Duality,
    LcbEquiv,
    Validity,
    Complexity,
    All,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Linalg => "linalg",
            Suite::Duality => "duality",
            Suite::LcbEquiv => "lcb-equiv",
            Suite::Validity => "validity",
            Suite::Complexity => "complexity",
            Suite::All => "all",
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value = "all")]
    suite: Suite,
    #[arg(long, env = "PUNC_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Plugin,
    Lp,
    Lcb,
    Pevi,
    L2tight,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum)]
    rule: RuleArg,
    #[arg(long, default_value = "2")]
    p: Exponent,
    #[arg(long, default_value = "auto")]
    beta: BetaPolicy,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, env = "PUNC_SEED", default_value_t = 0)]
    seed: u64,
    /// Draw the ball-instance estimate directly from its Gaussian law.
    #[arg(long)]
    shortcut: bool,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name)?,
        (None, Some(path)) => ExperimentConfig::from_path(path)?,
        (None, None) => {
            return Err(ExperimentError::Config(format!("give --preset ({}) or --config", PRESETS.join(", "))))
        }
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    config.timing |= args.timing;
    config.validate()?;
    Ok(config)
}

fn execute(
    config: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<punc::experiments::ExperimentOutput, ExperimentError> {
    #[cfg(feature = "parallel")]
    if let Some(j) = jobs {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        return pool.install(|| run_experiment(config));
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    run_experiment(config)
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let config = match load_config(&args) {
        Ok(c) => c,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(&config.preset));
    let output = match execute(&config, args.jobs) {
        Ok(o) => o,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = write_outputs(&out_dir, &output) {
        return fail(EXIT_CONFIG, e);
    }
    if let Some(row) = output.summary.iter().find(|r| r.rule == "hellinger-inf") {
        println!("Hellinger^2 infimum over beta > alpha: {:.6}", row.mean);
    } else if !output.staircase.is_empty() {
        print!("{}", format_staircase(&output.staircase));
    } else {
        print!("{}", format_summary(&output.summary));
    }
    println!("wrote {}", out_dir.display());
    let failures = output.failures();
    if failures > 0 {
        eprintln!("{failures} trial(s) failed; see the error column of records.csv");
        return ExitCode::from(EXIT_PARTIAL);
    }
    ExitCode::SUCCESS
}

fn need<T>(value: Option<T>, flag: &str) -> Result<T, String> {
    value.ok_or_else(|| format!("--{flag} is required for this generator"))
}

fn build_instance(args: &GenArgs) -> Result<CbInstance, String> {
    let inst = if args.separation {
        gen_separation_instance(need(args.d, "d")?, need(args.n, "n")?, args.p, args.k_xi)
    } else if args.minimax {
        let variant = if args.extended { MinimaxVariant::ExtendedRange } else { MinimaxVariant::Standard };
        gen_minimax_lb_instance(need(args.d, "d")?, args.q, need(args.lambda, "lambda")?, need(args.n, "n")?, variant)
    } else if args.plugin_mab {
        gen_plugin_separation_mab(args.actions, need(args.n, "n")?)
    } else if args.ball {
        gen_ball_instance(need(args.d, "d")?, args.rotate, args.seed, need(args.n, "n")?)
    } else if args.concentrability {
        gen_concentrability_example(need(args.states, "states")?, args.n.unwrap_or(1000))
    } else {
        let alt = AlternativeParams { p: args.alt_p, alpha: args.alt_alpha, beta: args.alt_beta };
        gen_counterexample_pair(alt).map(|(_, q2)| q2)
    };
    inst.map_err(|e| e.to_string())
}

fn cmd_gen(args: GenArgs) -> ExitCode {
    let inst = match build_instance(&args) {
        Ok(i) => i,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = write_instance(&inst, &args.out) {
        return fail(EXIT_CONFIG, e);
    }
    println!("wrote {}", args.out.display());
    for q in [Exponent::ONE, Exponent::TWO] {
        match complexity_cq(&inst, q, 0.0) {
            Ok(c) => println!("c_{q} = {c:.6}"),
            Err(e) => println!("c_{q} = undefined ({e})"),
        }
    }
    if inst.as_ball().is_some() {
        for q in [Exponent::ONE, Exponent::TWO] {
            if let Ok(c) = complexity_cq_population(&inst, q) {
                println!("c_{q} (population) = {c:.6}");
            }
        }
    }
    if let Some(t) = inst.as_tabular() {
        println!("C_star = {:.6}", concentrability(t, None));
    }
    ExitCode::SUCCESS
}

fn cmd_verify(args: VerifyArgs) -> ExitCode {
    let Some(checks) = run_suite(args.suite.name(), args.seed) else {
        return fail(EXIT_CONFIG, "unknown suite");
    };
    let mut failed = Vec::new();
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag}  {:<11} {:<44} {}", c.suite, c.name, c.detail);
        if !c.passed {
            failed.push(format!("{}: {}", c.suite, c.name));
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("invariant failure: {}", failed.join("; "));
        ExitCode::from(EXIT_INVARIANT)
    }
}

fn cmd_eval(args: EvalArgs) -> ExitCode {
    let inst = match instance_from_config(&args.instance) {
        Ok(i) => i,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if !(args.delta > 0.0 && args.delta < 1.0) {
        return fail(EXIT_CONFIG, format!("delta must lie in (0, 1), got {}", args.delta));
    }
    let kind = match args.rule {
        RuleArg::Plugin => RuleKind::Plugin,
        RuleArg::Lp => RuleKind::Lp,
        RuleArg::Lcb => RuleKind::Lcb,
        RuleArg::Pevi => RuleKind::Pevi,
        RuleArg::L2tight => RuleKind::L2tight,
    };
    let rule = RuleSpec { rule: kind, p: Some(args.p), beta: args.beta };
    let result = (|| -> Result<(), ExperimentError> {
        let dataset = sample_dataset_with(&inst, args.seed, SampleOptions { ball_shortcut: args.shortcut })?;
        let out = apply_rule(
            &inst,
            &dataset,
            &rule,
            args.delta,
            &BallSolverOptions::default(),
            punc::estimators::DEFAULT_ENUM_CAP,
            args.seed,
        )?;
        let gap = suboptimality(&inst, &out.policy)?;
        println!("rule           {}", rule.label());
        println!("beta           {:.6}", rule_beta(&rule, &inst, dataset.n(), args.delta));
        println!("policy         {}", out.policy);
        println!("suboptimality  {gap:.6}");
        if let Some(spec) = out.spec {
            let c = model_complexity(&out.model, &mu_pistar(&inst), spec.p.dual());
            println!("bound          {:.6}  (beta * c_{})", spec.beta * c, spec.p.dual());
        }
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(EXIT_CONFIG, e),
    }
}
