//! `scal`: plan, evaluate and learn on finite average-reward MDPs.
//!
//! Exit status is 0 on success, 2 for bad input (missing files, malformed
//! JSON, invalid parameters) and 3 for numerical failures such as a planner
//! running out of iterations.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use scal::env::EnvSpec;
use scal::extended::{modify, BoundedParamMdp};
use scal::harness::{run_learning, write_csv, RunConfig};
use scal::mdp::{diameter, evaluate_policy, optimal_gain_bias};
use scal::planner::{scopt, ScOptOptions, SpanConstraint};
use scal::{Error, FiniteMdp, RandomizedDecisionRule};

#[derive(Parser)]
#[command(name = "scal", version, about = "Span-constrained planning and optimistic learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimal gain and bias; with --c, also the span-constrained plan.
    Plan {
        mdp: PathBuf,
        /// Span bound for the constrained planner.
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, default_value_t = 1e-8)]
        eps: f64,
        /// Attraction probability of the modified MDP (0 keeps transitions).
        #[arg(long, default_value_t = 0.0)]
        eta: f64,
        #[arg(long, default_value_t = 1_000_000)]
        max_iter: usize,
    },
    /// Run a regret experiment and write its CSV.
    Learn {
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Gain and bias of a stationary policy.
    ///
    /// The policy file holds either one action id per state, or one
    /// probability row per state.
    Eval { mdp: PathBuf, policy: PathBuf },
    /// Worst-case minimal expected travel time between two states.
    Diameter {
        mdp: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
    },
    /// Print a built-in environment as an MDP document.
    Env {
        /// two_state, three_state, knight_quest, b1, b2 or b3.
        name: String,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", items.join(", "))
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Plan { mdp, c, eps, eta, max_iter } => {
            let mdp = FiniteMdp::load(mdp)?;
            let gb = optimal_gain_bias(&mdp, eps, max_iter)?;
            println!("g*={:.6}", gb.gain[0]);
            println!("sp(h*)={:.6}", gb.bias_span());
            println!("h*={}", fmt_vec(&gb.bias));
            if let Some(c) = c {
                let modified = modify(&BoundedParamMdp::from_mdp(&mdp), eta, 0)?;
                let opts = ScOptOptions { max_iter, ..ScOptOptions::new(SpanConstraint::new(c)?, eps) };
                let res = scopt(&modified, &vec![0.0; mdp.num_states()], &opts)?;
                println!("g+={:.6}", res.gain_estimate);
                println!("sp(v)={:.6}", scal::span(&res.v_final)?);
                println!("v={}", fmt_vec(&res.v_final));
                println!("iterations={}", res.iterations);
                let infeasible = res.per_state_feasible.iter().filter(|f| !**f).count();
                println!("infeasible_states={infeasible}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Learn { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let path = match (out, &cfg.output) {
                (Some(p), _) => p,
                (None, Some(p)) if p.is_relative() => config.parent().unwrap_or(Path::new(".")).join(p),
                (None, Some(p)) => p.clone(),
                (None, None) => config.with_extension("csv"),
            };
            let traces = run_learning(&cfg)?;
            write_csv(&path, &traces)?;
            println!("{}", path.display());
            let mut failed = false;
            for tr in &traces {
                if let Some(msg) = &tr.error {
                    eprintln!("error: {msg}");
                    failed = true;
                }
            }
            Ok(if failed { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Command::Eval { mdp, policy } => {
            let mdp = FiniteMdp::load(mdp)?;
            let rule = load_policy(&mdp, &policy)?;
            let gb = evaluate_policy(&mdp, &rule)?;
            match gb.scalar_gain() {
                Some(g) => println!("g={g:.6}"),
                None => println!("g={}", fmt_vec(&gb.gain)),
            }
            println!("sp(h)={:.6}", gb.bias_span());
            println!("h={}", fmt_vec(&gb.bias));
            Ok(ExitCode::SUCCESS)
        }
        Command::Diameter { mdp, eps } => {
            let d = diameter(&FiniteMdp::load(mdp)?, eps)?;
            if d.is_infinite() {
                println!("D=inf");
            } else {
                println!("D={d:.6}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Env { name, delta, alpha, beta, out } => {
            let need = |x: Option<f64>, flag: &str| {
                x.ok_or_else(|| Error::InvalidArgument(format!("environment `{name}` needs --{flag}")))
            };
            let spec = match name.as_str() {
                "two_state" => EnvSpec::TwoState,
                "three_state" => EnvSpec::ThreeState { delta: need(delta, "delta")? },
                "knight_quest" => EnvSpec::KnightQuest,
                "b1" => EnvSpec::B1,
                "b2" => EnvSpec::B2 {
                    alpha: need(alpha, "alpha")?,
                    beta: need(beta, "beta")?,
                    delta: need(delta, "delta")?,
                },
                "b3" => EnvSpec::B3 { delta: need(delta, "delta")? },
                other => return Err(Error::InvalidArgument(format!("unknown environment `{other}`"))),
            };
            let json = spec.build()?.mdp.to_json();
            match out {
                Some(path) => std::fs::write(path, json)?,
                None => println!("{json}"),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_policy(mdp: &FiniteMdp, path: &Path) -> Result<RandomizedDecisionRule, Error> {
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let rows = value
        .as_array()
        .ok_or_else(|| Error::InvalidArgument("policy must be a JSON array".into()))?;
    if rows.iter().all(Value::is_u64) {
        let actions: Vec<usize> = rows.iter().map(|v| v.as_u64().unwrap() as usize).collect();
        return RandomizedDecisionRule::deterministic(mdp, &actions);
    }
    let probs: Vec<Vec<f64>> = serde_json::from_value(value)?;
    RandomizedDecisionRule::new(mdp, probs)
}
